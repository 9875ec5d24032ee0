"""Cross-architecture basic-block similarity toolkit."""

__version__ = "0.1.0"
