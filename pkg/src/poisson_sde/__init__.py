"""Bounded solutions of semilinear SDEs with recurrent coefficients: solvers, bound checks and law distances."""

__version__ = "0.1.0"
