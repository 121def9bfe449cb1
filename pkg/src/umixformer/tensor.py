"""Dense float64 tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 1 to 4.
Feature maps use a channels-last layout, ``[H, W, C]`` or ``[B, H, W, C]``,
so that channel concatenation is a contiguous block copy.

Every reduction here runs in a fixed order so results are bit-reproducible:
``matmul`` accumulates over the inner dimension sequentially rather than
calling BLAS (a property test pins this against a plain loop), and pooling
sums its window in row-major order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError

DTYPE = np.float64
MAX_RANK = 4


def tensor(data, *, max_rank: int = MAX_RANK) -> np.ndarray:
    """Build a validated float64 tensor from array-like ``data``."""
    arr = np.array(data, dtype=DTYPE)
    check_tensor(arr, max_rank=max_rank)
    return arr


def check_tensor(arr: np.ndarray, *, max_rank: int = MAX_RANK) -> None:
    if not 1 <= arr.ndim <= max_rank:
        raise DimensionError(f"tensor rank must be in [1, {max_rank}], got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"every dimension must be >= 1, got shape {arr.shape}")


def assert_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} contains NaN or Inf")


def same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes.

    ``b`` is either a plain ``[K, P]`` matrix shared across the leading axes
    of ``a`` or a stack with exactly the same leading axes as ``a``.  Products
    are accumulated one ``k`` at a time, in index order, so every entry equals
    the plain loop ``s += a[m, k] * b[k, p]`` bit for bit.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    if b.shape[-1] == 1:
        # einsum switches to a vectorised dot product here, which reorders the sum
        out = a[..., :, 0:1] * b[..., 0:1, :]
        for t in range(1, a.shape[-1]):
            out += a[..., :, t:t + 1] * b[..., t:t + 1, :]
        return out
    # on C-contiguous operands with P >= 2 einsum accumulates over k in index order
    a, b = np.ascontiguousarray(a), np.ascontiguousarray(b)
    if b.ndim == 2:
        return np.einsum("...mk,kp->...mp", a, b)
    return np.einsum("...mk,...kp->...mp", a, b)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_pool(x: np.ndarray, kernel: int, stride: int) -> None:
    if kernel != stride:
        raise ConfigError(f"only non-overlapping pooling is supported (kernel == stride), got {kernel}/{stride}")
    if kernel < 1:
        raise ConfigError(f"pooling kernel must be >= 1, got {kernel}")
    if x.ndim < 3:
        raise DimensionError(f"avg_pool expects [..., H, W, C], got {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    if h % kernel or w % kernel:
        raise ConfigError(f"spatial size {h}x{w} is not divisible by pooling ratio {kernel}")


def avg_pool(x: np.ndarray, kernel: int, stride: int | None = None) -> np.ndarray:
    """Non-overlapping average pooling over the H and W axes of ``[..., H, W, C]``."""
    stride = kernel if stride is None else stride
    _check_pool(x, kernel, stride)
    k = kernel
    if k == 1:
        return x.copy()
    acc = x[..., 0::k, 0::k, :].copy()
    for di in range(k):
        for dj in range(k):
            if di or dj:
                acc += x[..., di::k, dj::k, :]
    return acc / (k * k)


def avg_pool_backward(g: np.ndarray, kernel: int) -> np.ndarray:
    """Spread each upstream cell uniformly over its ``kernel x kernel`` window."""
    k = kernel
    spread = g / (k * k)
    return np.repeat(np.repeat(spread, k, axis=-3), k, axis=-2)


def bilinear_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and weights for half-pixel (align_corners=False) resampling.

    Returns ``(i0, i1, frac)`` such that output ``o`` interpolates between
    inputs ``i0[o]`` and ``i1[o]`` with weight ``frac[o]`` on ``i1``.
    """
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=DTYPE) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    frac[i0 == i1] = 0.0
    return i0, i1, frac


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense ``[n_out, n_in]`` matrix of the 1-D interpolation map."""
    i0, i1, frac = bilinear_coords(n_in, n_out)
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_upsample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize ``[..., H, W, C]`` to ``[..., out_h, out_w, C]``.

    Interpolation is written as ``a + t * (b - a)`` so constant inputs come
    out exactly constant.
    """
    if x.ndim < 3:
        raise DimensionError(f"bilinear_upsample expects [..., H, W, C], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-3], x.shape[-2]
    if out_h < h or out_w < w:
        raise ConfigError(f"bilinear_upsample cannot shrink {h}x{w} to {out_h}x{out_w}")
    r0, r1, fr = bilinear_coords(h, out_h)
    c0, c1, fc = bilinear_coords(w, out_w)
    a = x[..., r0, :, :]
    b = x[..., r1, :, :]
    rows = a + fr[:, None, None] * (b - a)
    a = rows[..., c0, :]
    b = rows[..., c1, :]
    return a + fc[:, None] * (b - a)


def bilinear_upsample_backward(g: np.ndarray, h: int, w: int) -> np.ndarray:
    mh = interp_matrix(h, g.shape[-3])
    mw = interp_matrix(w, g.shape[-2])
    return np.einsum("oh,...opc,pw->...hwc", mh, g, mw)


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the last (channel) axis, in input order."""
    if not xs:
        raise DimensionError("concat_channels needs at least one input")
    lead = xs[0].shape[:-1]
    for idx, x in enumerate(xs):
        if x.shape[:-1] != lead:
            raise DimensionError(
                f"concat_channels: input {idx} has leading shape {x.shape[:-1]}, expected {lead}"
            )
    return np.concatenate(xs, axis=-1)


def slice_channels(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"channel slice [{start}:{stop}] out of range for {x.shape}")
    return x[..., start:stop].copy()


def reshape(x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return x.reshape(shape)


def transpose_2d(x: np.ndarray) -> np.ndarray:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose_2d needs rank >= 2, got {x.shape}")
    return np.swapaxes(x, -1, -2)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    same_shape(a, b, "add")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    same_shape(a, b, "mul")
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * float(s)


def space_to_depth(x: np.ndarray, r: int) -> np.ndarray:
    """Pixel-unshuffle ``[..., H, W, C]`` into ``[..., H/r, W/r, r*r*C]``.

    Output channel ``(di * r + dj) * C + c`` holds input pixel offset
    ``(di, dj)`` of channel ``c``.
    """
    if x.ndim < 3:
        raise DimensionError(f"space_to_depth expects [..., H, W, C], got {x.shape}")
    *lead, h, w, c = x.shape
    if h % r or w % r:
        raise ConfigError(f"spatial size {h}x{w} is not divisible by {r}")
    n = len(lead)
    y = x.reshape(*lead, h // r, r, w // r, r, c)
    perm = list(range(n)) + [n, n + 2, n + 1, n + 3, n + 4]
    return y.transpose(perm).reshape(*lead, h // r, w // r, r * r * c)


def depth_to_space(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`space_to_depth`."""
    *lead, h, w, rrc = x.shape
    c = rrc // (r * r)
    n = len(lead)
    y = x.reshape(*lead, h, w, r, r, c)
    perm = list(range(n)) + [n, n + 2, n + 1, n + 3, n + 4]
    return y.transpose(perm).reshape(*lead, h * r, w * r, c)
