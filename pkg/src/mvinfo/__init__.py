"""Multi-view information laboratory: exact information identities,
contrastive objectives with I(z, v) regularizers, and toy-scale training."""

__version__ = "0.1.0"
