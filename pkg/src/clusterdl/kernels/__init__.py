"""Numeric kernels for the dense MLP, with an optional compiled fast path.

At import time the package picks a backend:

* the Cython extension ``_mlp_c`` when it is built, or
* the pure NumPy twin ``_numpy_impl`` otherwise.

Set ``CLUSTERDL_KERNEL=numpy`` to force the fallback, ``=compiled`` to
require the extension (raises if it is not built), or leave unset /
``auto`` for the default behaviour. The active choice is exposed as
``BACKEND``.
"""

from __future__ import annotations

import os

from . import _numpy_impl

_requested = os.environ.get("CLUSTERDL_KERNEL", "auto").lower()
if _requested not in ("auto", "compiled", "numpy"):
    raise ValueError(
        f"CLUSTERDL_KERNEL must be auto, compiled or numpy, got {_requested!r}"
    )

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _mlp_c as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "CLUSTERDL_KERNEL=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation` or "
                "`python setup.py build_ext --inplace`"
            )
        _impl = None
if _impl is None:
    _impl = _numpy_impl

BACKEND: str = "numpy" if _impl is _numpy_impl else "compiled"

param_count = _numpy_impl.param_count
loss_value = _impl.loss_value
loss_grad = _impl.loss_grad
sgd_steps_inplace = _impl.sgd_steps_inplace
# Evaluation-only path; not performance critical, always NumPy.
logits = _numpy_impl.logits

__all__ = [
    "BACKEND",
    "param_count",
    "loss_value",
    "loss_grad",
    "sgd_steps_inplace",
    "logits",
]
