"""Differentially private fair classification by post-processing decoupled
DP-SGD logistic regressions."""

__version__ = "0.1.0"
