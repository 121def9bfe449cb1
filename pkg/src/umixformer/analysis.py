"""Parameter counting and an analytic FLOP model.

FLOP conventions (one table, used everywhere):

=================  ==========================================
matmul [M,K]x[K,P]  2*M*K*P
bias add            1 per output element
softmax             5 per score element (scaling folded in)
layer norm          8 per element
GELU                8 per element
average pooling     1 per input element
residual add        1 per element
bilinear resample   6 per output element (three lerps)
=================  ==========================================

Published counters disagree on these constants, so only orderings and
ratios between configurations are meaningful.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from .config import ModelConfig
from .decoder import kv_plan
from .nn import Layer

FLOP_COSTS = {
    "mac": 2,
    "bias": 1,
    "softmax": 5,
    "norm": 8,
    "gelu": 8,
    "pool": 1,
    "add": 1,
    "upsample": 6,
}


@dataclass
class CostReport:
    params: "OrderedDict[str, int]" = field(default_factory=OrderedDict)
    flops: "OrderedDict[str, int]" = field(default_factory=OrderedDict)

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @staticmethod
    def module_of(name: str) -> str:
        parts = name.split(".")
        return ".".join(parts[:2]) if parts[0] == "decoder" else parts[0]

    def by_module(self) -> "OrderedDict[str, dict[str, int]]":
        out: OrderedDict[str, dict[str, int]] = OrderedDict()
        for kind, table in (("params", self.params), ("flops", self.flops)):
            for name, v in table.items():
                row = out.setdefault(self.module_of(name), {"params": 0, "flops": 0})
                row[kind] += v
        return out

    def flops_matching(self, fragment: str) -> int:
        return sum(v for k, v in self.flops.items() if fragment in k)

    def kv_assembly_flops(self) -> int:
        """Pooling and reduction-layer cost of building every stage's key/value input."""
        return self.flops_matching(".kv.")

    def lines(self) -> list[str]:
        out = []
        for name, v in self.params.items():
            out.append(f"params.{name}={v}")
        for name, v in self.flops.items():
            out.append(f"flops.{name}={v}")
        for mod, row in self.by_module().items():
            out.append(f"module.{mod}.params={row['params']}")
            out.append(f"module.{mod}.flops={row['flops']}")
        out.append(f"total.params={self.total_params}")
        out.append(f"total.flops={self.total_flops}")
        return out


def count_params(model: Layer) -> CostReport:
    """Exact parameter count per layer, grouped by the owning layer's name."""
    report = CostReport()
    for name, arr in model.named_params():
        layer = name.rsplit(".", 1)[0]
        report.params[layer] = report.params.get(layer, 0) + arr.size
    return report


class _Acc:
    def __init__(self):
        self.report = CostReport()

    def linear(self, name: str, rows: int, c_in: int, c_out: int, bias: bool = True) -> None:
        self.report.flops[name] = FLOP_COSTS["mac"] * rows * c_in * c_out + (rows * c_out if bias else 0)
        self.report.params[name] = c_in * c_out + (c_out if bias else 0)

    def norm(self, name: str, rows: int, c: int) -> None:
        self.report.flops[name] = FLOP_COSTS["norm"] * rows * c
        self.report.params[name] = 2 * c

    def op(self, name: str, flops: int) -> None:
        self.report.flops[name] = self.report.flops.get(name, 0) + flops


def count_flops(config: ModelConfig, input_size: tuple[int, int] | None = None) -> CostReport:
    """Analytic FLOPs (and parameter counts) of one forward pass of a single image."""
    h, w = input_size or (config.img_h, config.img_w)
    n = config.num_stages
    ch = config.channels
    r = config.ffn_ratio
    res = [(h // 2 ** (j + 1), w // 2 ** (j + 1)) for j in range(1, n + 1)]
    tokens = [a * b for a, b in res]
    acc = _Acc()

    def mlp(prefix: str, rows: int, c: int) -> None:
        acc.linear(f"{prefix}.fc1", rows, c, r * c)
        acc.op(f"{prefix}.gelu", FLOP_COSTS["gelu"] * rows * r * c)
        acc.linear(f"{prefix}.fc2", rows, r * c, c)

    c_prev = 3
    for j in range(1, n + 1):
        f = 4 if j == 1 else 2
        L, c = tokens[j - 1], ch[j - 1]
        pre = f"encoder.stage{j}"
        acc.linear(f"{pre}.embed", L, f * f * c_prev, c)
        for b in range(1, config.depths[j - 1] + 1):
            acc.norm(f"{pre}.block{b}.norm", L, c)
            mlp(f"{pre}.block{b}.mlp", L, c)
            acc.op(f"{pre}.block{b}.residual", FLOP_COSTS["add"] * L * c)
        c_prev = c

    for i in range(1, n + 1):
        q = n - i + 1
        pre = f"decoder.stage{i}"
        lq, cq = tokens[q - 1], ch[q - 1]
        plan = kv_plan(config, i)
        lkv = 0
        for src in plan:
            sh, sw = res[src.stage - 1]
            if src.pool > 1:
                acc.op(f"{pre}.kv.{src.layer}.pool", FLOP_COSTS["pool"] * sh * sw * src.channels)
            rows = (sh // src.pool) * (sw // src.pool)
            lkv = rows
            if src.layer is not None:
                acc.linear(f"{pre}.kv.{src.layer}", rows, src.channels, src.channels)
        ckv = sum(src.channels for src in plan)
        heads, d = config.heads_for_stage(q), config.head_dim_for_stage(q)
        inner = heads * d
        acc.norm(f"{pre}.norm_q", lq, cq)
        acc.norm(f"{pre}.norm_kv", lkv, ckv)
        acc.linear(f"{pre}.attn.q", lq, cq, inner)
        acc.linear(f"{pre}.attn.k", lkv, ckv, inner, bias=False)
        acc.linear(f"{pre}.attn.v", lkv, ckv, inner)
        acc.op(f"{pre}.attn.scores", heads * FLOP_COSTS["mac"] * lq * lkv * d)
        acc.op(f"{pre}.attn.softmax", heads * FLOP_COSTS["softmax"] * lq * lkv)
        acc.op(f"{pre}.attn.weighted_sum", heads * FLOP_COSTS["mac"] * lq * lkv * d)
        acc.linear(f"{pre}.attn.o", lq, inner, cq)
        acc.op(f"{pre}.residual", 2 * FLOP_COSTS["add"] * lq * cq)
        acc.norm(f"{pre}.norm_out", lq, cq)
        mlp(f"{pre}.ffn", lq, cq)

    l1 = tokens[0]
    for j in range(2, n + 1):
        acc.op(f"head.upsample{j}", FLOP_COSTS["upsample"] * l1 * ch[j - 1])
    acc.linear("head.fuse", l1, sum(ch), config.embed_dim)
    acc.op("head.gelu", FLOP_COSTS["gelu"] * l1 * config.embed_dim)
    acc.linear("head.classify", l1, config.embed_dim, config.num_classes)

    rep = acc.report
    rep.params = OrderedDict((k, v) for k, v in rep.params.items() if v)
    return rep
