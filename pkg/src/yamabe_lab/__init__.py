"""Discrete conformal geometry on periodic grids and circle products."""
from .grid import GeometryError, MetricField, NumericalFailure, PeriodicGrid, ScalarField, SymTensorField

__all__ = ["GeometryError", "MetricField", "NumericalFailure", "PeriodicGrid", "ScalarField", "SymTensorField"]
