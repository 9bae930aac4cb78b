"""Resonant-bubble acoustic imaging: forward models, oracles and inversion."""
