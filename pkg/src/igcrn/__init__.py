"""Dual-channel speech enhancement with an inplace gated convolutional recurrent network."""

__version__ = "0.1.0"
