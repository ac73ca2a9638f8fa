"""Periodic homogenization toolkit on structured Q1 grids."""

__version__ = "0.1.0"
