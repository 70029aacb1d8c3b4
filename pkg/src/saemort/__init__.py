"""Small-area mortality estimation: TOPALS, D-splines and a Bayesian SVD-model."""

__version__ = "0.1.0"
