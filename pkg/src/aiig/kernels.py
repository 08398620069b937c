"""Kernel backend selection.

The compiled extension is used when it was built; setting
``AIIG_PURE_PYTHON=1`` forces the numpy fallback. ``BACKEND`` names the
active choice.
"""

from __future__ import annotations

import os

from . import _pykernels as python_kernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:
    compiled_kernels = None

if compiled_kernels is not None and not os.environ.get("AIIG_PURE_PYTHON"):
    _active = compiled_kernels
    BACKEND = "cython"
else:
    _active = python_kernels
    BACKEND = "python"

dense_forward_one = _active.dense_forward_one
gru_step_one = _active.gru_step_one
bayes_filter = _active.bayes_filter

__all__ = ["BACKEND", "bayes_filter", "compiled_kernels", "dense_forward_one",
           "gru_step_one", "python_kernels"]
