"""Backend selection for the CSC matrix-vector kernels.

The compiled Cython kernels are used when the extension built successfully;
otherwise the package falls back to the NumPy reference kernels.  Setting the
environment variable ``CONEGRAD_PURE_PYTHON=1`` forces the fallback.  Both
backends satisfy the same contract and return bit-identical results, so the
choice affects speed only.

Callers access the kernels as ``_kernels.spmv`` / ``_kernels.spmv_adjoint``;
``use_backend`` rebinds those names, which lets the benchmark compare both
backends in one process.
"""

import os

from conegrad._kernels import pyref

try:
    from conegrad._kernels import _csc as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": pyref}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = None
spmv = None
spmv_adjoint = None


def available_backends():
    """Names of the usable backends, fallback first."""
    return sorted(_BACKENDS)


def active_backend():
    """Name of the backend currently bound to ``spmv``/``spmv_adjoint``."""
    return _active


def use_backend(name):
    """Bind the named backend's kernels to this module."""
    global _active, spmv, spmv_adjoint
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    mod = _BACKENDS[name]
    spmv = mod.spmv
    spmv_adjoint = mod.spmv_adjoint
    _active = name


if _compiled is not None and os.environ.get("CONEGRAD_PURE_PYTHON", "") != "1":
    use_backend("compiled")
else:
    use_backend("python")
