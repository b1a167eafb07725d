"""Pure numpy implementations of the hot kernels.

This module is the fallback backend used when the compiled extension
(`lfdnet.kernels._fastcore`) is unavailable.  Both backends implement the
same contracts and produce bitwise-identical results; the compiled one is
built with floating-point contraction disabled to keep that true.

Shapes follow the NCHW convention.  `im2col` column layout: row index is
``c*kh*kw + i*kw + j``, column index is ``b*oh*ow + oy*ow + ox``.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold sliding windows of ``x`` [B,C,H,W] into a [C*kh*kw, B*OH*OW] matrix."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    s0, s1, s2, s3 = x.strides
    win = as_strided(
        x,
        shape=(c, kh, kw, b, oh, ow),
        strides=(s1, s2, s3, s0, s2 * stride, s3 * stride),
        writeable=False,
    )
    # reshape of the non-contiguous view forces the copy into column layout
    return win.reshape(c * kh * kw, b * oh * ow)


def col2im(
    cols: np.ndarray,
    b: int,
    c: int,
    h: int,
    w: int,
    kh: int,
    kw: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back into [B,C,H,W]."""
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(c, kh, kw, b, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                cols6[:, i, j].swapaxes(0, 1)
            )
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w].copy()
    return out


def maxpool2x2(x: np.ndarray):
    """2x2 stride-2 max pooling.

    Returns ``(y, idx)`` where ``idx`` is the uint8 position (0..3, row-major
    within the window) of the selected element; ties pick the first occurrence.
    """
    b, c, h, w = x.shape
    win = (
        x.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1).astype(np.uint8)
    return win.max(axis=-1), idx


def maxpool2x2_backward(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    b, c, oh, ow = g.shape
    out4 = np.zeros((b, c, oh, ow, 4), dtype=g.dtype)
    np.put_along_axis(out4, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    return (
        out4.reshape(b, c, oh, ow, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, 2 * oh, 2 * ow)
    )


def fill_triangles(tris: np.ndarray, height: int, width: int) -> np.ndarray:
    """Rasterize filled 2D triangles into a uint8 mask (255 = covered).

    A pixel (x, y) is covered when its center (x+0.5, y+0.5) lies inside or
    on the boundary of a triangle, decided by the three edge functions with
    either winding accepted.  Zero-area triangles set no pixels.
    """
    img = np.zeros((height, width), dtype=np.uint8)
    for t in range(tris.shape[0]):
        ax, ay = tris[t, 0, 0], tris[t, 0, 1]
        bx, by = tris[t, 1, 0], tris[t, 1, 1]
        cx, cy = tris[t, 2, 0], tris[t, 2, 1]
        if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) == 0.0:
            continue
        x0 = max(0, int(np.ceil(min(ax, bx, cx) - 0.5)))
        x1 = min(width - 1, int(np.floor(max(ax, bx, cx) - 0.5)))
        y0 = max(0, int(np.ceil(min(ay, by, cy) - 0.5)))
        y1 = min(height - 1, int(np.floor(max(ay, by, cy) - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
        py = (np.arange(y0, y1 + 1, dtype=np.float64) + 0.5)[:, None]
        e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        inside = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
        region = img[y0 : y1 + 1, x0 : x1 + 1]
        region[inside] = 255
    return img


def split_scan(
    xs: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    g_total: float,
    h_total: float,
    lam: float,
    gamma: float,
    min_child_weight: float,
):
    """Scan a feature column (sorted ascending) for the best split position.

    Returns ``(gain, pos)``: split goes between sorted positions ``pos`` and
    ``pos+1``.  Positions between equal values or violating the child hessian
    floor are skipped.  ``(-inf, -1)`` when no valid split exists.  Ties keep
    the first (lowest) position.
    """
    n = xs.shape[0]
    if n < 2:
        return -np.inf, -1
    gl = np.cumsum(g)[:-1]
    hl = np.cumsum(h)[:-1]
    gr = g_total - gl
    hr = h_total - hl
    valid = (xs[:-1] != xs[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    if not valid.any():
        return -np.inf, -1
    parent = g_total * g_total / (h_total + lam)
    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
    gain[~valid] = -np.inf
    pos = int(np.argmax(gain))
    return float(gain[pos]), pos
