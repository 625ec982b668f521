"""Kernel backend selection.

The compiled extension is used when importable; otherwise the pure-Python
reference implementation. Set ``COALFLOW_BACKEND=python`` to force the
fallback (the two produce bit-identical results, the fallback is just slow).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def get_backend(name=None):
    """Return a kernel module by name (``"cython"`` or ``"python"``)."""
    if name is None:
        return _impl
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(_BACKENDS)}") from None


def available_backends():
    return sorted(_BACKENDS)


_requested = os.environ.get("COALFLOW_BACKEND", "").strip().lower()
if _requested:
    _impl = get_backend(_requested)
else:
    _impl = _ckernels if _ckernels is not None else _pykernels

BACKEND = _impl.NAME

philox4x32 = _impl.philox4x32
map_eval = _impl.map_eval
cell_values = _impl.cell_values
push_points = _impl.push_points
std_normal = _impl.std_normal
cbm_collide = _impl.cbm_collide

KIND_LATTICE = _pykernels.KIND_LATTICE
KIND_CONTINUOUS = _pykernels.KIND_CONTINUOUS
