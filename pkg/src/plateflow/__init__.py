"""plateflow: real-time low-resource license plate pipeline engine."""

__version__ = "0.1.0"
