"""Finite-difference checks grouped as: single ops, one decoder stage, the whole model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import GradCheckReport, Tape, grad_check
from .config import ModelConfig
from .decoder import Decoder, decoder_stage_forward
from .features import DECODER, ENCODER, MIDPOINT, FeatureMap
from .model import UMixFormer

GROUP_TOLS = {"ops": 1e-6, "decoder_stage": 1e-6, "model": 1e-4}


@dataclass
class OpCase:
    name: str
    leaves: dict[str, np.ndarray]
    f: Callable[[Tape], ad.Variable]


def op_cases(seed: int = 0) -> list[OpCase]:
    """One small, randomly filled case per differentiable op."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    w = np.random.default_rng(seed + 1)
    cases: list[OpCase] = []

    def case(name, leaves, body):
        weights = {}

        def f(tape):
            out = body(tape, {k: tape.param(v, k) for k, v in leaves.items()})
            if out.shape != (1,):
                if name not in weights:
                    weights[name] = w.standard_normal(out.shape)
                out = ad.weighted_sum(out, weights[name])
            return out

        cases.append(OpCase(name, leaves, f))

    case("add", {"a": r(2, 3), "b": r(2, 3)}, lambda t, p: ad.add(p["a"], p["b"]))
    case("sub", {"a": r(2, 3), "b": r(2, 3)}, lambda t, p: ad.sub(p["a"], p["b"]))
    case("mul", {"a": r(2, 3), "b": r(2, 3)}, lambda t, p: ad.mul(p["a"], p["b"]))
    case("add_bias", {"x": r(2, 3, 4), "b": r(4)}, lambda t, p: ad.add_bias(p["x"], p["b"]))
    case("matmul", {"a": r(2, 3, 4), "b": r(4, 5)}, lambda t, p: ad.matmul(p["a"], p["b"]))
    case("matmul_batched", {"a": r(2, 3, 4), "b": r(2, 4, 2)}, lambda t, p: ad.matmul(p["a"], p["b"]))
    case("softmax_rows", {"x": r(3, 5)}, lambda t, p: ad.softmax_rows(p["x"]))
    case("avg_pool", {"x": r(1, 4, 4, 2)}, lambda t, p: ad.avg_pool(p["x"], 2))
    case("bilinear_upsample", {"x": r(1, 2, 3, 2)}, lambda t, p: ad.bilinear_upsample(p["x"], 4, 6))
    case("concat_channels", {"a": r(1, 2, 2, 2), "b": r(1, 2, 2, 3)},
         lambda t, p: ad.concat_channels([p["a"], p["b"]]))
    case("slice_channels", {"x": r(2, 5)}, lambda t, p: ad.slice_channels(p["x"], 1, 4))
    case("reshape", {"x": r(2, 6)}, lambda t, p: ad.reshape(p["x"], (3, 4)))
    case("transpose_2d", {"x": r(2, 3, 4)}, lambda t, p: ad.transpose_2d(p["x"]))
    case("permute", {"x": r(2, 3, 4)}, lambda t, p: ad.permute(p["x"], (2, 0, 1)))
    case("space_to_depth", {"x": r(1, 4, 4, 2)}, lambda t, p: ad.space_to_depth(p["x"], 2))
    case("layer_norm", {"x": r(2, 3, 6), "gamma": 1 + 0.1 * r(6), "beta": r(6)},
         lambda t, p: nn.layer_norm_op(p["x"], p["gamma"], p["beta"]))
    case("gelu", {"x": r(3, 4)}, lambda t, p: nn.gelu(p["x"]))

    mha = nn.MultiHeadAttention(4, 6, 2, 3, "mha", seed)
    mha_leaves = {"xq": r(1, 5, 4), "xkv": r(1, 3, 6), **dict(mha.named_params())}
    case("attention", mha_leaves, lambda t, p: nn.attention(p["xq"], p["xkv"], mha))

    red = nn.LinearLayer(3, 3, "reduce", seed)
    case("spatial_reduce", {"x": r(1, 4, 4, 3), **dict(red.named_params())},
         lambda t, p: nn.spatial_reduce(p["x"], 2, red))

    labels = rng.integers(0, 4, size=(2, 3))
    labels[0, 1] = nn.IGNORE_INDEX
    case("cross_entropy", {"logits": r(2, 3, 4)}, lambda t, p: nn.cross_entropy(p["logits"], labels))
    return cases


@dataclass
class GroupResult:
    name: str
    tol: float
    reports: list[tuple[str, GradCheckReport]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for _, r in self.reports)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for _, r in self.reports), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for case, rep in self.reports:
            out.extend(f"group={self.name} case={case} {line}" for line in rep.lines())
        out.append(f"group={self.name} tol={self.tol:g} max_rel_error={self.max_rel_error:.3e} "
                   f"passed={int(self.passed)}")
        return out


def check_ops(tol: float = GROUP_TOLS["ops"], seed: int = 0, eps: float = 1e-5) -> GroupResult:
    res = GroupResult("ops", tol)
    for c in op_cases(seed):
        res.reports.append((c.name, grad_check(c.f, c.leaves, eps=eps, tol=tol, seed=seed)))
    return res


def check_decoder_stage(config: ModelConfig, stage: int = 2, tol: float = GROUP_TOLS["decoder_stage"],
                        seed: int = 0, eps: float = 1e-5, max_entries: int | None = None) -> GroupResult:
    """Check one decoder stage end to end: kv assembly, attention, norms and FFN.

    Encoder maps and already-decoded maps are random leaves, so gradients
    flowing into propagated decoder features are covered too.
    """
    n = config.num_stages
    rng = np.random.default_rng(seed)
    decoder = Decoder(config, seed)
    mod = decoder.stages[stage - 1]
    enc = {j: rng.standard_normal((1, *config.resolution(j), config.channels[j - 1])) for j in range(1, n + 1)}
    dec = {j: rng.standard_normal((1, *config.resolution(j), config.channels[j - 1]))
           for j in range(n - stage + 2, n + 1)}
    mid = rng.standard_normal(enc[3].shape) if config.plus_midpoint else None
    leaves = {f"E{j}": a for j, a in enc.items()}
    leaves.update({f"D{j}": a for j, a in dec.items()})
    if mid is not None:
        leaves["M3"] = mid
    leaves.update(dict(mod.named_params()))
    q = n - stage + 1
    weights = np.random.default_rng(seed + 1).standard_normal((1, *config.resolution(q), config.channels[q - 1]))

    def f(tape: Tape) -> ad.Variable:
        e = [FeatureMap(tape.param(enc[j], f"E{j}"), j, ENCODER) for j in range(1, n + 1)]
        d = {j: FeatureMap(tape.param(dec[j], f"D{j}"), j, DECODER) for j in dec}
        m = FeatureMap(tape.param(mid, "M3"), 3, MIDPOINT) if mid is not None else None
        out = decoder_stage_forward(e[mod.q_stage - 1], decoder.stage_kv(stage, e, d, m), mod)
        return ad.weighted_sum(out.tensor, weights)

    rep = grad_check(f, leaves, eps=eps, tol=tol, max_entries=max_entries, seed=seed)
    res = GroupResult("decoder_stage", tol)
    res.reports.append((f"stage{stage}", rep))
    return res


def check_model(config: ModelConfig, tol: float = GROUP_TOLS["model"], seed: int = 0, eps: float = 1e-5,
                max_entries: int | None = None) -> GroupResult:
    """Whole network under the cross-entropy loss, the input image included as a leaf."""
    rng = np.random.default_rng(seed)
    model = UMixFormer(config, seed)
    image = rng.standard_normal((1, config.img_h, config.img_w, 3))
    labels = rng.integers(0, config.num_classes, size=(1, config.img_h // 4, config.img_w // 4))
    leaves = {"image": image, **model.state_dict()}

    def f(tape: Tape) -> ad.Variable:
        return nn.cross_entropy(model.forward(tape.param(image, "image"), tape), labels)

    rep = grad_check(f, leaves, eps=eps, tol=tol, max_entries=max_entries, seed=seed)
    res = GroupResult("model", tol)
    res.reports.append(("full", rep))
    return res
