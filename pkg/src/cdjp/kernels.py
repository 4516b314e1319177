"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Set ``CDJP_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("CDJP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

srgb_to_lab = _impl.srgb_to_lab
lab_to_srgb = _impl.lab_to_srgb
nearest_k = _impl.nearest_k
nearest_k_grid = _impl.nearest_k_grid
min_hamming = _impl.min_hamming


def im2col(x, k, stride, pad):
    if x.dtype.itemsize == 4:
        return _impl.im2col_f32(x, k, stride, pad)
    return _impl.im2col(x, k, stride, pad)


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    if cols.dtype.itemsize == 4:
        return _impl.col2im_f32(cols, n, c, h, w, k, stride, pad)
    return _impl.col2im(cols, n, c, h, w, k, stride, pad)


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"`` (for tests and benchmarks)."""
    if name == "python":
        return _pykernels
    from . import _ckernels
    return _ckernels
