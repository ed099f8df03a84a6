"""Backend selection for the lookup walk.

The compiled extension is used when it imports; ``COCASIM_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

import numpy as np

from . import _lookup_py

BACKEND = "python"
_walk = _lookup_py.walk_frames

if os.environ.get("COCASIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lookup as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        _walk = _compiled.walk_frames


def available_backends():
    out = {"python": _lookup_py.walk_frames}
    try:
        from . import _lookup as compiled
        out["cython"] = compiled.walk_frames
    except ImportError:
        pass
    return out


def pack_cache(entries, allocation):
    """CSR view of the allocated entries: (layer_ptr, entry_class, rows)."""
    allocation = np.asarray(allocation, dtype=bool)
    n_classes, n_layers = allocation.shape
    layers, classes = np.nonzero(allocation.T)  # layer-major, classes ascending
    layer_ptr = np.zeros(n_layers + 1, dtype=np.int64)
    np.cumsum(np.bincount(layers, minlength=n_layers), out=layer_ptr[1:])
    entry_class = classes.astype(np.int64)
    rows = np.ascontiguousarray(entries[classes, layers], dtype=np.float64)
    if rows.ndim != 2:
        rows = rows.reshape(0, entries.shape[-1])
    return layer_ptr, entry_class, rows


def walk_frames(vectors, layer_ptr, entry_class, entries, n_classes, alpha, theta, backend=None):
    fn = _walk if backend is None else available_backends()[backend]
    return fn(np.ascontiguousarray(vectors, dtype=np.float64),
              np.ascontiguousarray(layer_ptr, dtype=np.int64),
              np.ascontiguousarray(entry_class, dtype=np.int64),
              np.ascontiguousarray(entries, dtype=np.float64),
              int(n_classes), float(alpha), float(theta))
