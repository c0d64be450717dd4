"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py``.  Set ``DERSIM_KERNELS=python`` to
force the fallback.
"""
import os

from . import _kernels_py

python_backend = _kernels_py

compiled_backend = None
if os.environ.get("DERSIM_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend

NAME = backend.NAME


def use(name):
    """Switch the active backend (``"python"`` or ``"cython"``)."""
    global backend, NAME
    if name == "python":
        backend = python_backend
    elif name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not built")
        backend = compiled_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    NAME = backend.NAME
    return backend
