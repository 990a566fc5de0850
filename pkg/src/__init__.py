"""catlab: convolution-augmented attention constructions, audits and simulations."""

__version__ = "0.1.0"
