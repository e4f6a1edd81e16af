"""Graded suspiciousness of adversarial texts: attacks, agreement statistics,
suspicion regressors and suspicion-constrained generation at desk scale."""

__version__ = "0.1.0"
