"""Language agents assembled from modular memories, a structured action space and a decision cycle."""

__version__ = "0.1.0"
