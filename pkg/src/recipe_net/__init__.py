"""Product supply-chain networks inferred from firm-to-firm transactions."""

__version__ = "0.1.0"
