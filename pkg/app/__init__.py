"""i-SIR sampler, lambda adaptation and finite-state analysis lab."""
