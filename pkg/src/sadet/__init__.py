"""Single-shot box detector with scale-adaptive anchors and Anchor convolution."""

__version__ = "0.1.0"
