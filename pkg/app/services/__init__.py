"""Sampler, adaptation, finite-state analysis and campaign services."""
