"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the pure
numpy reference backend is used.  Set ``LFDNET_BACKEND=python`` to force the
fallback or ``LFDNET_BACKEND=compiled`` to require the extension.  Both
backends produce bitwise-identical results.
"""

import os

from . import reference

_forced = os.environ.get("LFDNET_BACKEND")

if _forced == "python":
    _impl = reference
elif _forced in (None, "", "compiled"):
    try:
        from . import _fastcore as _impl
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = reference
else:
    raise ValueError(f"unknown LFDNET_BACKEND value: {_forced!r}")

BACKEND = "python" if _impl is reference else "compiled"

conv_out_size = reference.conv_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward
fill_triangles = _impl.fill_triangles
split_scan = _impl.split_scan

__all__ = [
    "BACKEND",
    "col2im",
    "conv_out_size",
    "fill_triangles",
    "im2col",
    "maxpool2x2",
    "maxpool2x2_backward",
    "split_scan",
]
