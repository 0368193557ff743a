"""Braess-paradox analysis of entanglement routing games."""
