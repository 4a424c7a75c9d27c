"""Numerical and symbolic checks for the renormalized Born series of a
random Schrodinger operator with decaying Bernoulli potential."""

__version__ = "0.1.0"
