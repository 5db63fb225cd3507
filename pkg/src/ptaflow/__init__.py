"""Provision-level analysis of bilateral trade flows.

Two-stage toolkit: a trade-link presence classifier explained by Shapley
attributions to rank trade-agreement provisions, then a factorization
machine on nonzero flows exposing pairwise provision interactions.
Gravity-model baselines (log-linear OLS, PPML, Lasso-PPML) are included
for comparison.
"""

__version__ = "0.1.0"

from .errors import ComputationError, ConvergenceError, InputError, PtaflowError

__all__ = [
    "ComputationError",
    "ConvergenceError",
    "InputError",
    "PtaflowError",
    "__version__",
]
