"""Two modeling cultures on one toolkit: parametric estimators fit by
likelihood or least squares next to algorithmic learners fit by loss
minimization, sharing a single data layer and evaluation engine."""

__version__ = "0.1.0"
