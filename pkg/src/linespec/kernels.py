"""Backend selection for the hot loops.

The compiled ``_core`` extension is used when it imports; otherwise, or when
the environment variable ``LINESPEC_PURE_PYTHON`` is set to a non-empty
value, the numpy implementations in ``_purepy`` take over. ``BACKEND`` names
the active one.
"""
import importlib
import os

from . import _purepy


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _purepy
    if name == "cython":
        return importlib.import_module("linespec._core")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("LINESPEC_PURE_PYTHON"):
    _impl, BACKEND = _purepy, "python"
else:
    try:
        _impl, BACKEND = load_backend("cython"), "cython"
    except ImportError:
        _impl, BACKEND = _purepy, "python"

jacobi_eigh_batch = _impl.jacobi_eigh_batch
circconv_forward = _impl.circconv_forward
circconv_backward = _impl.circconv_backward
plateau_peaks = _impl.plateau_peaks
adam_update = _impl.adam_update
