"""Neural network layers built on the autodiff primitives.

Layers own their parameters as float64 arrays and look them up on the tape of
their input, so the same layer object serves training (recording tape) and
inference (``Tape(record=False)``).  Every layer exposes ``named_params`` for
counting, optimisation and checkpointing.
"""

from __future__ import annotations

import math
import zlib
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import ConfigError, DimensionError, UsageError

LN_EPS = 1e-6
IGNORE_INDEX = 255
GELU_C = math.sqrt(2.0 / math.pi)


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """RNG keyed on ``(seed, layer name)``.

    Keying on the name keeps a layer's initial weights independent of which
    other layers exist, so optional components never shift the init of the
    rest of the model.
    """
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal samples redrawn until they fall within ``bound`` standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std


class Layer:
    name: str = ""

    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        raise NotImplementedError

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_params())


class LinearLayer(Layer):
    """``y = x W + b`` over the last axis; ``W`` is ``[C_in, C_out]``."""

    def __init__(self, c_in: int, c_out: int, name: str, seed: int = 0):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        rng = layer_rng(seed, name)
        self.weight = truncated_normal(rng, (c_in, c_out), 1.0 / math.sqrt(c_in))
        self.bias = np.zeros(c_out)

    def named_params(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def __call__(self, x: Variable) -> Variable:
        return linear_forward(x, self)


class LayerNormLayer(Layer):
    def __init__(self, c: int, name: str, eps: float = LN_EPS):
        self.name = name
        self.c = c
        self.eps = eps
        self.gamma = np.ones(c)
        self.beta = np.zeros(c)

    def named_params(self):
        yield f"{self.name}.gamma", self.gamma
        yield f"{self.name}.beta", self.beta

    def __call__(self, x: Variable) -> Variable:
        return layer_norm(x, self)


class FFNLayer(Layer):
    """Linear -> GELU -> Linear with hidden width ``ratio * c``."""

    def __init__(self, c: int, ratio: int, name: str, seed: int = 0):
        self.name = name
        self.fc1 = LinearLayer(c, ratio * c, f"{name}.fc1", seed)
        self.fc2 = LinearLayer(ratio * c, c, f"{name}.fc2", seed)

    def named_params(self):
        yield from self.fc1.named_params()
        yield from self.fc2.named_params()

    def __call__(self, x: Variable) -> Variable:
        return ffn_forward(x, self)


class MultiHeadAttention(Layer):
    """Scaled dot-product attention with separate query and key/value sources.

    The key projection carries no bias: adding the same vector to every key
    shifts each score row by a constant, which softmax removes, so such a bias
    could never receive gradient.
    """

    def __init__(self, c_q: int, c_kv: int, num_heads: int, head_dim: int, name: str, seed: int = 0):
        if num_heads < 1 or head_dim < 1:
            raise ConfigError(f"attention needs >= 1 head of width >= 1, got {num_heads}x{head_dim}")
        self.name = name
        self.c_q, self.c_kv = c_q, c_kv
        self.num_heads, self.head_dim = num_heads, head_dim
        inner = num_heads * head_dim
        self.q = LinearLayer(c_q, inner, f"{name}.q", seed)
        self.k = LinearLayer(c_kv, inner, f"{name}.k", seed)
        self.v = LinearLayer(c_kv, inner, f"{name}.v", seed)
        self.o = LinearLayer(inner, c_q, f"{name}.o", seed)
        self.k.bias = None

    def named_params(self):
        yield from self.q.named_params()
        yield f"{self.k.name}.weight", self.k.weight
        yield from self.v.named_params()
        yield from self.o.named_params()

    def __call__(self, xq: Variable, xkv: Variable, weights_out: list | None = None) -> Variable:
        return attention(xq, xkv, self, weights_out)


# ---------------------------------------------------------------------------
# Functional forms
# ---------------------------------------------------------------------------

def linear_forward(x: Variable, layer: LinearLayer) -> Variable:
    if x.shape[-1] != layer.c_in:
        raise DimensionError(f"{layer.name}: expected {layer.c_in} input channels, got shape {x.shape}")
    tape = x.tape
    y = ad.matmul(x, tape.param(layer.weight, f"{layer.name}.weight"))
    if layer.bias is not None:
        y = ad.add_bias(y, tape.param(layer.bias, f"{layer.name}.bias"))
    return y


def layer_norm(x: Variable, layer: LayerNormLayer) -> Variable:
    """Normalise over the channel axis, then apply ``gamma * x_hat + beta``."""
    if x.shape[-1] != layer.c:
        raise DimensionError(f"{layer.name}: expected {layer.c} channels, got shape {x.shape}")
    tape = x.tape
    gamma = tape.param(layer.gamma, f"{layer.name}.gamma")
    beta = tape.param(layer.beta, f"{layer.name}.beta")
    return layer_norm_op(x, gamma, beta, layer.eps)


def layer_norm_op(x: Variable, gamma: Variable, beta: Variable, eps: float = LN_EPS) -> Variable:
    xv = x.value
    c = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.value
    out = xhat * gv + beta.value

    def backward(g):
        g_gamma = (g * xhat).reshape(-1, c).sum(axis=0)
        g_beta = g.reshape(-1, c).sum(axis=0)
        gx_hat = g * gv
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gamma, g_beta

    return x.tape.record("layer_norm", (x, gamma, beta), out, backward)


def gelu_value(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x * x * x)))


def gelu(x: Variable) -> Variable:
    """Tanh approximation of GELU."""
    xv = x.value
    x2 = xv * xv
    u = GELU_C * (xv + 0.044715 * x2 * xv)
    t = np.tanh(u)
    out = 0.5 * xv * (1.0 + t)

    def backward(g):
        du = GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du),)

    return x.tape.record("gelu", (x,), out, backward)


def _split_heads(x: Variable, h: int, d: int) -> Variable:
    # [..., L, h*d] -> [B, h, L, d]
    lead = x.shape[:-2]
    b = int(np.prod(lead)) if lead else 1
    L = x.shape[-2]
    x = ad.reshape(x, (b, L, h, d))
    return ad.permute(x, (0, 2, 1, 3))


def attention(xq: Variable, xkv: Variable, mha: MultiHeadAttention,
              weights_out: list | None = None) -> Variable:
    """Multi-head attention of ``xq [..., Lq, Cq]`` over ``xkv [..., Lkv, Ckv]``.

    Per head: ``softmax(Q K^T / sqrt(d_k)) V`` with ``d_k`` the per-head key
    width; heads are concatenated and mapped back to ``Cq`` channels.  When
    ``weights_out`` is a list the softmax matrix ``[B, h, Lq, Lkv]`` is
    appended to it.
    """
    if xq.shape[-1] != mha.c_q or xkv.shape[-1] != mha.c_kv:
        raise DimensionError(
            f"{mha.name}: expects query/kv channels {mha.c_q}/{mha.c_kv}, got {xq.shape} and {xkv.shape}"
        )
    if xq.shape[:-2] != xkv.shape[:-2]:
        raise DimensionError(f"{mha.name}: batch shapes differ: {xq.shape} vs {xkv.shape}")
    h, d = mha.num_heads, mha.head_dim
    lead, lq = xq.shape[:-2], xq.shape[-2]
    q = _split_heads(mha.q(xq), h, d)
    k = _split_heads(mha.k(xkv), h, d)
    v = _split_heads(mha.v(xkv), h, d)
    scores = ad.scale(ad.matmul(q, ad.transpose_2d(k)), 1.0 / math.sqrt(d))
    weights = ad.softmax_rows(scores)
    if weights_out is not None:
        weights_out.append(weights.value)
    ctx = ad.matmul(weights, v)
    ctx = ad.permute(ctx, (0, 2, 1, 3))
    ctx = ad.reshape(ctx, (*lead, lq, h * d))
    return mha.o(ctx)


def spatial_reduce(x: Variable, pr: int, layer: LinearLayer) -> Variable:
    """Average-pool ``[..., H, W, C]`` by ``pr`` (when ``pr > 1``), then apply ``layer``."""
    if pr < 1:
        raise ConfigError(f"pooling ratio must be >= 1, got {pr}")
    if layer.c_in != layer.c_out or layer.c_in != x.shape[-1]:
        raise DimensionError(f"{layer.name}: reduction layer must be {x.shape[-1]}->{x.shape[-1]}")
    if pr > 1:
        x = ad.avg_pool(x, pr)
    return layer(x)


def ffn_forward(x: Variable, ffn: FFNLayer) -> Variable:
    return ffn.fc2(gelu(ffn.fc1(x)))


def cross_entropy(logits: Variable, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Variable:
    """Mean negative log-likelihood over positions whose label is not ``ignore_index``.

    ``logits`` is ``[..., K]`` and ``labels`` an integer array of the leading shape.
    """
    lv = logits.value
    k = lv.shape[-1]
    labels = np.asarray(labels)
    if labels.shape != lv.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} do not match logits {lv.shape}")
    flat = lv.reshape(-1, k)
    lab = labels.reshape(-1).astype(np.int64)
    keep = lab != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise UsageError("cross_entropy: every position is ignored")
    if np.any((lab[keep] < 0) | (lab[keep] >= k)):
        raise DimensionError(f"labels must lie in [0, {k}) or equal {ignore_index}")
    z = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.nonzero(keep)[0]
    nll = logsum[rows] - z[rows, lab[rows]]
    out = np.array([nll.sum() / n])

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[rows, lab[rows]] -= 1.0
        p[~keep] = 0.0
        return ((p * (g[0] / n)).reshape(lv.shape),)

    return logits.tape.record("cross_entropy", (logits,), out, backward)


def mha_param_count(c_q: int, c_kv: int, num_heads: int, head_dim: int) -> int:
    """Closed-form parameter count of :class:`MultiHeadAttention`."""
    inner = num_heads * head_dim
    return (c_q + 2 * c_kv) * inner + 2 * inner + inner * c_q + c_q


__all__ = [
    "LinearLayer", "LayerNormLayer", "FFNLayer", "MultiHeadAttention",
    "linear_forward", "layer_norm", "layer_norm_op", "gelu", "gelu_value", "attention",
    "spatial_reduce", "ffn_forward", "cross_entropy", "mha_param_count",
    "layer_rng", "truncated_normal", "IGNORE_INDEX", "LN_EPS",
]
