"""Kernel backend selection.

The compiled extension is used when it was built and ``QFUSE_PURE`` is not
set; otherwise the numpy fallback is used. Both produce identical bits.
"""
import os

from qfuse import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("QFUSE_PURE"):
    try:
        from qfuse import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass


def _contig(a):
    return a if a.flags.c_contiguous else a.copy(order="C")


def im2col(xp, kh, kw, stride, ho, wo):
    return _impl.im2col(_contig(xp), kh, kw, stride, ho, wo)


def col2im(cols, hp, wp, stride):
    return _impl.col2im(_contig(cols), hp, wp, stride)


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(_contig(x))


def maxpool2x2_backward(grad, arg):
    return _impl.maxpool2x2_backward(_contig(grad), _contig(arg))


def backends():
    """Return ``{name: module}`` for every importable kernel implementation."""
    found = {"python": _pykernels}
    try:
        from qfuse import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
