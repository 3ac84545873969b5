"""Kernel backend selection.

The compiled extension is used when importable; set
``VOLTERRA_BSVIE_PURE_PYTHON=1`` to force the numpy fallback. Both backends
produce bit-identical output.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("VOLTERRA_BSVIE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

counter_uniforms = _active.counter_uniforms
fd_derivatives = _active.fd_derivatives
explicit_step = _active.explicit_step

__all__ = ["BACKEND", "counter_uniforms", "fd_derivatives", "explicit_step",
           "python_backend", "compiled_backend"]
