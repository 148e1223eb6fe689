"""Cross-layer low-rank + sparse compression of neural-network weight matrices."""

__version__ = "0.1.0"
