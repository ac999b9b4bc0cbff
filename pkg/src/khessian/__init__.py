"""Numerical toolkit for the exterior Dirichlet problem for k-Hessian equations."""

__version__ = "0.1.0"
