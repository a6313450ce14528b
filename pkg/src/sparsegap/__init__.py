"""Per-sample sparse inference versus amortised sparse autoencoders on
synthetic superposition data."""

__version__ = "0.1.0"
