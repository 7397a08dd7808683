"""Memory-object-conditioned gated-rank adaptation on a toy streaming VOS model."""

__version__ = "0.1.0"
