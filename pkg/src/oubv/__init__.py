"""Gaussian BV functions and the Neumann Ornstein-Uhlenbeck semigroup on convex bodies."""

__version__ = "0.1.0"
