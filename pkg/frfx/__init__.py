"""Explainable functional random forests: B-spline smoothing, FPCA, forests on FPC scores
and the artifacts that explain them."""

__version__ = "0.1.0"
