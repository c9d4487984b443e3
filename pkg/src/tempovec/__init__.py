"""Temporal vector knowledge base: chunk-level CDC, hot ANN tier, versioned cold tier."""

__version__ = "0.1.0"
