"""Tape-based reverse-mode automatic differentiation.

A :class:`Tape` records every operation eagerly: the forward value is
computed immediately and a closure mapping the upstream gradient to input
gradients is appended to the tape.  :meth:`Tape.backward` walks the tape once
in reverse, summing gradients where a value fans out.

Parameters are plain float64 arrays owned by layers.  ``tape.param(array)``
registers an array as a leaf the first time it is seen on that tape, so the
set of trainable scalars a forward pass touched can be read back with
:meth:`Tape.parameters`.

>>> tape = Tape()
>>> x = tape.leaf(np.array([1.0, 2.0]))
>>> loss = sum_all(mul(x, x))
>>> tape.backward(loss)
>>> x.grad
array([2., 4.])
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    backward: Backward | None
    scope: str = ""


class Variable:
    """A value recorded on a tape; ``grad`` is filled in by ``Tape.backward``."""

    __slots__ = ("tape", "id", "value", "grad", "name")

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray, name: str | None = None):
        self.tape = tape
        self.id = node_id
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, id={self.id})"

    def __add__(self, other: "Variable") -> "Variable":
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Variable):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other: "Variable") -> "Variable":
        return matmul(self, other)


class Tape:
    """Append-only operation record for one forward/backward pass.

    With ``record=False`` the tape only evaluates forward values; nothing is
    stored and ``backward`` is unavailable.  This is the inference mode.
    """

    def __init__(self, record: bool = True):
        self.record_enabled = record
        self.nodes: list[Node] = []
        self.variables: list[Variable] = []
        self._params: dict[int, tuple[str, np.ndarray, Variable]] = {}
        self._scope: list[str] = []
        self._done = False
        self.visits = 0

    # -- construction -------------------------------------------------
    def _append(self, kind: str, inputs: tuple[int, ...], value: np.ndarray,
                backward: Backward | None, name: str | None = None) -> Variable:
        if not self.record_enabled:
            return Variable(self, -1, value, name)
        node_id = len(self.nodes)
        self.nodes.append(Node(kind, inputs, backward, "/".join(self._scope)))
        var = Variable(self, node_id, value, name)
        self.variables.append(var)
        return var

    def leaf(self, value, name: str | None = None) -> Variable:
        """Register a new input leaf holding a copy-free view of ``value``."""
        arr = np.asarray(value, dtype=T.DTYPE)
        return self._append("leaf", (), arr, None, name)

    def param(self, array: np.ndarray, name: str) -> Variable:
        """Return the leaf for a parameter array, registering it on first use."""
        hit = self._params.get(id(array))
        if hit is not None:
            return hit[2]
        var = self.leaf(array, name)
        self._params[id(array)] = (name, array, var)
        return var

    def record(self, kind: str, inputs: Sequence[Variable], value: np.ndarray,
               backward: Backward) -> Variable:
        for v in inputs:
            if v.tape is not self:
                raise UsageError(f"{kind}: input {v!r} belongs to a different tape")
        if self._done:
            raise UsageError("cannot record on a tape after backward()")
        return self._append(kind, tuple(v.id for v in inputs), value, backward)

    @contextlib.contextmanager
    def scope(self, name: str) -> Iterator[None]:
        """Label nodes recorded inside the block (used for NaN diagnostics)."""
        self._scope.append(name)
        try:
            yield
        finally:
            self._scope.pop()

    # -- queries ------------------------------------------------------
    def parameters(self) -> list[tuple[str, np.ndarray, Variable]]:
        return list(self._params.values())

    def num_param_scalars(self) -> int:
        return sum(arr.size for _, arr, _ in self._params.values())

    def grad_of(self, array: np.ndarray) -> np.ndarray:
        hit = self._params.get(id(array))
        if hit is None:
            raise UsageError("array was never registered as a parameter on this tape")
        if hit[2].grad is None:
            raise UsageError("backward() has not been run")
        return hit[2].grad

    def first_nonfinite(self) -> tuple[int, str, str] | None:
        """``(node id, op kind, scope)`` of the first node with a non-finite value."""
        for var in self.variables:
            if not np.all(np.isfinite(var.value)):
                node = self.nodes[var.id]
                return var.id, node.kind, node.scope
        return None

    # -- reverse pass -------------------------------------------------
    def backward(self, loss: Variable) -> None:
        if not self.record_enabled:
            raise UsageError("backward() on a non-recording tape")
        if loss.tape is not self:
            raise UsageError("loss belongs to a different tape")
        if loss.value.shape != (1,):
            raise UsageError(f"backward() needs a scalar loss of shape (1,), got {loss.value.shape}")
        if self._done:
            raise UsageError("backward() already ran on this tape; create a new tape")
        self._done = True
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.id] = np.ones((1,), dtype=T.DTYPE)
        for nid in range(loss.id, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.backward is None:
                continue
            self.visits += 1
            in_grads = node.backward(g)
            for src, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                if grads[src] is None:
                    grads[src] = ig
                else:
                    grads[src] = grads[src] + ig
        for var in self.variables:
            g = grads[var.id]
            var.grad = np.zeros_like(var.value) if g is None else np.asarray(g).reshape(var.value.shape)


def _tape_of(*vs: Variable) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise UsageError("operands live on different tapes")
    return tape


# ---------------------------------------------------------------------------
# Differentiable primitives over tensor-core operations
# ---------------------------------------------------------------------------

def add(a: Variable, b: Variable) -> Variable:
    tape = _tape_of(a, b)
    return tape.record("add", (a, b), T.add(a.value, b.value), lambda g: (g, g))


def sub(a: Variable, b: Variable) -> Variable:
    tape = _tape_of(a, b)
    T.same_shape(a.value, b.value, "sub")
    return tape.record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def add_bias(x: Variable, b: Variable) -> Variable:
    """``x + b`` with ``b`` of shape ``[C]`` broadcast over the leading axes."""
    tape = _tape_of(x, b)
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match channels of {x.shape}")
    c = b.value.shape[0]
    return tape.record("add_bias", (x, b), x.value + b.value,
                       lambda g: (g, g.reshape(-1, c).sum(axis=0)))


def mul(a: Variable, b: Variable) -> Variable:
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), T.mul(av, bv), lambda g: (g * bv, g * av))


def scale(a: Variable, s: float) -> Variable:
    s = float(s)
    return a.tape.record("scale", (a,), T.scale(a.value, s), lambda g: (g * s,))


def matmul(a: Variable, b: Variable) -> Variable:
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    out = T.matmul(av, bv)

    # gradients contract over long axes (all rows for a shared weight), so
    # they use einsum: deterministic, but not in the forward's loop order
    def backward(g):
        if bv.ndim == 2:
            ga = np.einsum("...mp,kp->...mk", g, bv)
            k, p = bv.shape
            gb = np.einsum("rk,rp->kp", av.reshape(-1, k), g.reshape(-1, p))
        else:
            ga = np.einsum("...mp,...kp->...mk", g, bv)
            gb = np.einsum("...mk,...mp->...kp", av, g)
        return ga, gb

    return tape.record("matmul", (a, b), out, backward)


def softmax_rows(x: Variable) -> Variable:
    s = T.softmax_rows(x.value)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return x.tape.record("softmax_rows", (x,), s, backward)


def avg_pool(x: Variable, kernel: int) -> Variable:
    out = T.avg_pool(x.value, kernel, kernel)
    return x.tape.record("avg_pool", (x,), out, lambda g: (T.avg_pool_backward(g, kernel),))


def bilinear_upsample(x: Variable, out_h: int, out_w: int) -> Variable:
    h, w = x.value.shape[-3], x.value.shape[-2]
    out = T.bilinear_upsample(x.value, out_h, out_w)
    return x.tape.record("bilinear_upsample", (x,), out,
                         lambda g: (T.bilinear_upsample_backward(g, h, w),))


def concat_channels(xs: Sequence[Variable]) -> Variable:
    xs = list(xs)
    if not xs:
        raise DimensionError("concat_channels needs at least one input")
    tape = _tape_of(*xs)
    out = T.concat_channels([x.value for x in xs])
    bounds = np.cumsum([0] + [x.value.shape[-1] for x in xs])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return tape.record("concat_channels", xs, out, backward)


def slice_channels(x: Variable, start: int, stop: int) -> Variable:
    out = T.slice_channels(x.value, start, stop)
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape, dtype=T.DTYPE)
        full[..., start:stop] = g
        return (full,)

    return x.tape.record("slice_channels", (x,), out, backward)


def reshape(x: Variable, shape: Sequence[int]) -> Variable:
    src = x.value.shape
    out = T.reshape(x.value, shape)
    return x.tape.record("reshape", (x,), out, lambda g: (g.reshape(src),))


def transpose_2d(x: Variable) -> Variable:
    return x.tape.record("transpose_2d", (x,), T.transpose_2d(x.value),
                         lambda g: (T.transpose_2d(g),))


def permute(x: Variable, axes: Sequence[int]) -> Variable:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return x.tape.record("permute", (x,), np.transpose(x.value, axes),
                         lambda g: (np.transpose(g, inv),))


def space_to_depth(x: Variable, r: int) -> Variable:
    return x.tape.record("space_to_depth", (x,), T.space_to_depth(x.value, r),
                         lambda g: (T.depth_to_space(g, r),))


def sum_all(x: Variable) -> Variable:
    shape = x.value.shape
    out = np.array([x.value.sum()], dtype=T.DTYPE)
    return x.tape.record("sum", (x,), out, lambda g: (np.full(shape, g[0]),))


def weighted_sum(x: Variable, weights: np.ndarray) -> Variable:
    """``sum(x * weights)`` for a constant weight array; a handy probe loss."""
    T.same_shape(x.value, weights, "weighted_sum")
    out = np.array([np.sum(x.value * weights)], dtype=T.DTYPE)
    return x.tape.record("weighted_sum", (x,), out, lambda g: (weights * g[0],))


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class LeafCheck:
    name: str
    size: int
    checked: int
    max_rel_error: float
    max_abs_analytic: float
    max_abs_numeric: float
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    leaves: list[LeafCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(leaf.passed for leaf in self.leaves)

    @property
    def max_rel_error(self) -> float:
        return max((leaf.max_rel_error for leaf in self.leaves), default=0.0)

    def failures(self) -> list[LeafCheck]:
        return [leaf for leaf in self.leaves if not leaf.passed]

    def lines(self) -> list[str]:
        return [
            f"leaf={leaf.name} size={leaf.size} checked={leaf.checked} "
            f"max_rel_error={leaf.max_rel_error:.3e} passed={int(leaf.passed)}"
            for leaf in self.leaves
        ]


def grad_check(f: Callable[[Tape], Variable], leaves: dict[str, np.ndarray], *,
               eps: float = 1e-5, tol: float = 1e-6, max_entries: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``f`` builds a scalar loss on the tape it is given and must read every
    array in ``leaves`` through ``tape.param(array, name)``.  Arrays are
    perturbed in place and restored bit-exactly afterwards.  The relative
    error of one entry is ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``max_entries`` caps the number of coordinates probed per leaf (chosen
    with a seeded RNG); ``None`` probes all of them.
    """
    if not 1e-7 < eps < 1e-3:
        raise UsageError(f"eps must lie in (1e-7, 1e-3), got {eps}")
    tape = Tape()
    loss = f(tape)
    tape.backward(loss)
    analytic = {}
    for name, arr in leaves.items():
        try:
            analytic[name] = tape.grad_of(arr).copy()
        except UsageError:
            analytic[name] = np.zeros_like(arr)

    def value() -> float:
        return float(f(Tape(record=False)).value[0])

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, eps=eps)
    for name, arr in leaves.items():
        if not arr.flags.c_contiguous:
            raise UsageError(f"leaf {name!r} must be C-contiguous to be perturbed in place")
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            numeric[n] = (fp - fm) / (2.0 * eps)
        a = analytic[name].reshape(-1)[idx]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        rel = np.abs(a - numeric) / denom
        worst = float(rel.max()) if rel.size else 0.0
        report.leaves.append(LeafCheck(
            name=name, size=flat.size, checked=int(idx.size), max_rel_error=worst,
            max_abs_analytic=float(np.abs(a).max()) if a.size else 0.0,
            max_abs_numeric=float(np.abs(numeric).max()) if numeric.size else 0.0,
            passed=worst <= tol,
        ))
    return report
