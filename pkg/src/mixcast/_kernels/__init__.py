"""Fused numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``MIXCAST_PURE_PYTHON``
is unset. Both backends expose identical functions; ``get_backend(name)``
returns a specific one, which the tests and the benchmark use to compare them.
"""
import importlib
import os

from . import _pykernels

_FUNCS = (
    "gru_forward",
    "gru_backward",
    "preimpute_forward",
    "preimpute_backward",
    "marginals_forward",
    "marginals_backward",
    "gauss_loglik_forward",
    "gauss_loglik_backward",
)


def _load_compiled():
    try:
        return importlib.import_module("mixcast._kernels._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()


def available_backends():
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_backend(name):
    if name == "numpy":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("MIXCAST_PURE_PYTHON") or _compiled is None:
        return _pykernels
    return _compiled


backend = _select()
BACKEND = backend.NAME


def use_backend(name):
    """Switch the process-wide backend (``"cython"`` or ``"numpy"``)."""
    global backend, BACKEND
    backend = get_backend(name)
    BACKEND = backend.NAME


def __getattr__(attr):
    if attr in _FUNCS:
        return getattr(backend, attr)
    raise AttributeError(attr)
