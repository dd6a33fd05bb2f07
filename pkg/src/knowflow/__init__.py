"""Labor-flow relatedness and pioneer-firm knowledge estimation."""

__version__ = "0.1.0"
