"""Fourth-order compact finite differences for elliptic interface problems
and steady incompressible flow past immersed bodies."""

from .grid import (
    Classification,
    Crossing,
    Grid,
    GridError,
    LevelSetBody,
    PointClass,
    build_grid,
    circle,
    classify,
    ellipse,
    find_crossing,
    star,
)

__all__ = [
    "Classification",
    "Crossing",
    "Grid",
    "GridError",
    "LevelSetBody",
    "PointClass",
    "build_grid",
    "circle",
    "classify",
    "ellipse",
    "find_crossing",
    "star",
]

__version__ = "0.1.0"
