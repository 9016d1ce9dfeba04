"""Road outline polygonization from masks and vertex heatmaps, plus evaluation metrics."""

from .geometry import Point, PolygonSet, PolygonWithHoles, Ring

__version__ = "0.1.0"

__all__ = ["Point", "PolygonSet", "PolygonWithHoles", "Ring", "__version__"]
