"""Depth-guided adversarial training for monocular 3-D hand pose estimation."""

__version__ = "0.1.0"
