"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting the environment
variable ``GENPOLICY_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("GENPOLICY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

LOGISTIC = 0
LINEAR = 1
KIND_CODES = {"logistic": LOGISTIC, "linear": LINEAR}

worst_case = _impl.worst_case
weights_from_threshold = _impl.weights_from_threshold
objective_terms = _impl.objective_terms
scores = _impl.scores

__all__ = ["BACKEND", "KIND_CODES", "worst_case", "weights_from_threshold", "objective_terms", "scores"]
