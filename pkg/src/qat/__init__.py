"""Meta-path tokens fused with context tokens through relation-aware self-attention."""

__version__ = "0.1.0"
