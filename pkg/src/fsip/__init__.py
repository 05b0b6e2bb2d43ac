"""Superimposed-pilot MIMO-OFDM link simulation with iterative receivers."""

__version__ = "0.1.0"
