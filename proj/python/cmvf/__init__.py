"""Variational knowledge tracing with cognition-mode priors.

The heavy lifting lives in the compiled extension; this package re-exports
the numeric operations plus an in-process entry point for the command-line
interface (``run_cli(["train", "--data", ...])``).
"""

from ._core import (
    __version__,
    accuracy,
    auc,
    kl_diag,
    prior_weight,
    real_impr,
    reparameterize,
    route,
    run_cli,
    squash,
)

__all__ = [
    "__version__",
    "accuracy",
    "auc",
    "kl_diag",
    "prior_weight",
    "real_impr",
    "reparameterize",
    "route",
    "run_cli",
    "squash",
]
