"""Backend selection for the per-step kernels.

The compiled extension is used when importable; set ``IWSFT_PURE_PYTHON=1`` to
force the NumPy fallback.
"""

import os

from . import _kernels_py

python_backend = _kernels_py
compiled_backend = None

try:
    from . import _kernels as compiled_backend  # type: ignore[no-redef]
except ImportError:
    pass

if compiled_backend is not None and os.environ.get("IWSFT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = python_backend
    BACKEND = "python"

categorical_logp = _impl.categorical_logp
gaussian_logp = _impl.gaussian_logp
segment_sum = _impl.segment_sum
trajectory_weights = _impl.trajectory_weights

__all__ = [
    "BACKEND",
    "categorical_logp",
    "gaussian_logp",
    "segment_sum",
    "trajectory_weights",
    "python_backend",
    "compiled_backend",
]
