"""Tests for the i-SIR lab."""
