"""finpair: semantic, multi-level pairing of financial news with price series."""

__version__ = "0.1.0"
