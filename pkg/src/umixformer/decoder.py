"""Mix-attention decoder, segmentation head and the ablation decoders.

Decoder stage ``i`` (1..N) refines the lateral encoder map ``E_{N-i+1}`` into
``D_{N-i+1}``.  Its keys and values come from a *plan*: an ordered list of
sources, each optionally average-pooled and linearly projected, then
flattened and concatenated along channels.  The plan depends on the
attention variant:

``mix``
    the feature set of :func:`select_feature_set`, each element pooled down
    to the resolution of the smallest map (the last one is left as is),
    optionally with the stage-3 encoder midpoint inserted after element 3.
``cross-lowest``
    ``E_1`` alone at its own resolution (linear projection only); with
    ``unet`` stages ``i >= 2`` use the previous decoder output instead.
``self``
    the query map itself, pooled to the smallest resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .config import ModelConfig
from .errors import ConfigError, DimensionError, SequencingError
from .features import DECODER, ENCODER, FeatureMap, FeatureSet, select_feature_set
from .nn import (FFNLayer, Layer, LayerNormLayer, LinearLayer, MultiHeadAttention, gelu,
                 spatial_reduce)


@dataclass(frozen=True)
class KVSource:
    """One key/value source of a decoder stage.

    ``kind`` is ``"set"`` (element ``stage`` of the feature set), ``"midpoint"``,
    ``"prev"`` (the previous decoder output) or ``"query"``.
    """

    kind: str
    stage: int
    channels: int
    pool: int
    layer: str | None

    @property
    def label(self) -> str:
        return {"set": f"F{self.stage}", "midpoint": "M3", "prev": f"D{self.stage}",
                "query": f"E{self.stage}"}[self.kind]


def kv_plan(config: ModelConfig, i: int) -> list[KVSource]:
    n = config.num_stages
    ch = config.channels
    q_stage = n - i + 1
    variant = config.attention_variant
    if variant == "mix":
        plan = []
        for j in range(1, n + 1):
            if j < n:
                plan.append(KVSource("set", j, ch[j - 1], 2 ** (n - j), f"reduce{j}"))
            else:
                plan.append(KVSource("set", j, ch[j - 1], 1, None))
            if j == 3 and config.plus_midpoint:
                plan.append(KVSource("midpoint", 3, ch[2], 2 ** (n - 3), "reduce_mid"))
        return plan
    if variant == "cross-lowest":
        if config.unet and i >= 2:
            return [KVSource("prev", q_stage + 1, ch[q_stage], 1, "reduce_prev")]
        return [KVSource("set", 1, ch[0], 1, "reduce1")]
    if variant == "self":
        return [KVSource("query", q_stage, ch[q_stage - 1], 2 ** (i - 1), "reduce_self")]
    raise ConfigError(f"unknown attention variant {variant!r}")


class DecoderStage(Layer):
    """Attention block producing ``D_{N-i+1}``: three layer norms, attention, FFN."""

    def __init__(self, i: int, config: ModelConfig, seed: int = 0):
        n = config.num_stages
        self.i = i
        self.q_stage = n - i + 1
        self.name = f"decoder.stage{i}"
        self.plan = kv_plan(config, i)
        c_q = config.channels[self.q_stage - 1]
        c_kv = sum(src.channels for src in self.plan)
        self.c_q, self.c_kv = c_q, c_kv
        self.reduce = {src.layer: LinearLayer(src.channels, src.channels, f"{self.name}.{src.layer}", seed)
                       for src in self.plan if src.layer is not None}
        self.norm_q = LayerNormLayer(c_q, f"{self.name}.norm_q")
        self.norm_kv = LayerNormLayer(c_kv, f"{self.name}.norm_kv")
        self.norm_out = LayerNormLayer(c_q, f"{self.name}.norm_out")
        self.mha = MultiHeadAttention(c_q, c_kv, config.heads_for_stage(self.q_stage),
                                      config.head_dim_for_stage(self.q_stage), f"{self.name}.attn", seed)
        self.ffn = FFNLayer(c_q, config.ffn_ratio, f"{self.name}.ffn", seed)

    def named_params(self):
        for layer in self.reduce.values():
            yield from layer.named_params()
        yield from self.norm_q.named_params()
        yield from self.norm_kv.named_params()
        yield from self.mha.named_params()
        yield from self.norm_out.named_params()
        yield from self.ffn.named_params()


def _flatten(x: Variable) -> Variable:
    *lead, h, w, c = x.shape
    return ad.reshape(x, (*lead, h * w, c))


def _assemble(sources: Sequence[FeatureMap], ratios: Sequence[int],
              layers: Sequence[LinearLayer | None]) -> Variable:
    parts = []
    target = None
    for fm, pr, layer in zip(sources, ratios, layers):
        x = fm.tensor
        if layer is not None:
            x = spatial_reduce(x, pr, layer)
        elif pr != 1:
            raise ConfigError(f"{fm.label}: pooling without a projection layer is not part of the plan")
        hw = x.shape[-3:-1]
        if target is None:
            target = hw
        elif hw != target:
            raise DimensionError(f"{fm.label} reduces to {hw}, other key/value sources are at {target}")
        parts.append(_flatten(x))
    return ad.concat_channels(parts)


def assemble_kv(fset: FeatureSet, reduce_layers: Sequence[LinearLayer],
                midpoint: FeatureMap | None = None, mid_layer: LinearLayer | None = None) -> Variable:
    """Mixed key/value tensor ``[B, L_N, sum C_j]`` from a feature set.

    Element ``j < N`` is pooled by ``2^(N-j)`` and projected with
    ``reduce_layers[j-1]``; element ``N`` is used unchanged.  A midpoint map,
    when given, is pooled like element 3, projected with ``mid_layer`` and
    placed right after element 3.
    """
    n = len(fset)
    if len(reduce_layers) != n - 1:
        raise ConfigError(f"need {n - 1} reduction layers for {n} features, got {len(reduce_layers)}")
    smallest = fset[n - 1].hw
    for j, fm in enumerate(fset, start=1):
        f = 2 ** (n - j)
        if fm.stage != j or fm.hw != (smallest[0] * f, smallest[1] * f):
            raise DimensionError(f"feature {j} ({fm.label}, {fm.shape}) is off the resolution ladder")
    sources, ratios, layers = [], [], []
    for j, fm in enumerate(fset, start=1):
        sources.append(fm)
        ratios.append(2 ** (n - j))
        layers.append(reduce_layers[j - 1] if j < n else None)
        if j == 3 and midpoint is not None:
            if midpoint.hw != fset[2].hw or midpoint.channels != fset[2].channels:
                raise ConfigError(f"midpoint shape {midpoint.shape} does not match stage 3 {fset[2].shape}")
            sources.append(midpoint)
            ratios.append(2 ** (n - 3))
            layers.append(mid_layer)
    return _assemble(sources, ratios, layers)


def decoder_stage_forward(xq: FeatureMap, xkv: Variable, stage: DecoderStage,
                          weights_out: list | None = None) -> FeatureMap:
    """One decoder stage.

    ``q = LN_q(X_q)``, ``A = LN_out(Attn(q, LN_kv(X_kv)) + q)``,
    ``D = FFN(A) + A``, reshaped back to the query map's ``[B, H, W, C]``.
    """
    if xq.stage != stage.q_stage:
        raise SequencingError(f"{stage.name} expects query E{stage.q_stage}, got {xq.label}")
    tape = xq.tensor.tape
    with tape.scope(stage.name):
        shape = xq.shape
        q = stage.norm_q(_flatten(xq.tensor))
        kv = stage.norm_kv(xkv)
        att = stage.mha(q, kv, weights_out)
        a = stage.norm_out(ad.add(att, q))
        d = ad.add(stage.ffn(a), a)
        d = ad.reshape(d, shape)
    return FeatureMap(d, stage.q_stage, DECODER)


class Decoder(Layer):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.name = "decoder"
        self.config = config
        self.stages = [DecoderStage(i, config, seed) for i in range(1, config.num_stages + 1)]

    def named_params(self):
        for st in self.stages:
            yield from st.named_params()

    def stage_kv(self, i: int, encoder_feats: Sequence[FeatureMap], decoded: dict[int, FeatureMap],
                 midpoint: FeatureMap | None) -> Variable:
        stage = self.stages[i - 1]
        cfg = self.config
        if cfg.attention_variant == "mix":
            if cfg.unet:
                fset = select_feature_set(encoder_feats, decoded, i)
            else:
                fset = FeatureSet(i, tuple(encoder_feats))
            reduce_layers = [stage.reduce[f"reduce{j}"] for j in range(1, cfg.num_stages)]
            if cfg.plus_midpoint:
                if midpoint is None:
                    raise ConfigError("plus_midpoint is enabled but no midpoint feature was supplied")
                return assemble_kv(fset, reduce_layers, midpoint, stage.reduce["reduce_mid"])
            return assemble_kv(fset, reduce_layers)
        src = stage.plan[0]
        if src.kind == "prev":
            if src.stage not in decoded:
                raise SequencingError(f"{stage.name} needs D{src.stage}, which has not been computed yet")
            fm = decoded[src.stage]
        else:
            fm = encoder_feats[src.stage - 1]
        return _assemble([fm], [src.pool], [stage.reduce[src.layer]])

    def __call__(self, encoder_feats, midpoint=None, replace=None, weights_out=None):
        return decoder_forward(encoder_feats, self, midpoint=midpoint, replace=replace,
                               weights_out=weights_out)


def decoder_forward(encoder_feats: Sequence[FeatureMap], decoder: Decoder, *,
                    midpoint: FeatureMap | None = None, replace: dict | None = None,
                    weights_out: dict | None = None) -> dict[int, FeatureMap]:
    """Run stages ``i = 1..N`` and return ``{j: D_j}`` in emission order ``D_N .. D_1``.

    ``replace`` maps a stage index ``j`` to a tensor that is substituted for
    ``D_j`` as soon as it is produced; this is how dependency tests perturb an
    intermediate output.  ``weights_out``, when a dict, collects each stage's
    softmax matrix under its stage index ``i``.
    """
    cfg = decoder.config
    n = cfg.num_stages
    if len(encoder_feats) != n:
        raise DimensionError(f"expected {n} encoder features, got {len(encoder_feats)}")
    img_hw = tuple(4 * s for s in encoder_feats[0].hw)
    for fm in encoder_feats:
        if fm.origin != ENCODER:
            raise SequencingError(f"{fm.label} is not an encoder feature")
        fm.check_ladder(cfg, img_hw)
    decoded: dict[int, FeatureMap] = {}
    for stage in decoder.stages:
        i = stage.i
        xkv = decoder.stage_kv(i, encoder_feats, decoded, midpoint)
        captured = [] if weights_out is not None else None
        out = decoder_stage_forward(encoder_feats[stage.q_stage - 1], xkv, stage, captured)
        if weights_out is not None:
            weights_out[i] = captured[0]
        if replace and stage.q_stage in replace:
            sub = replace[stage.q_stage]
            if not isinstance(sub, Variable):
                sub = out.tensor.tape.leaf(np.asarray(sub, dtype=np.float64))
            if sub.shape != out.shape:
                raise DimensionError(f"replacement for D{stage.q_stage} has shape {sub.shape}, expected {out.shape}")
            out = FeatureMap(sub, stage.q_stage, DECODER)
        decoded[stage.q_stage] = out
    return decoded


def decoder_forward_plus(encoder_feats: Sequence[FeatureMap], midpoint: FeatureMap, decoder: Decoder,
                         **kw) -> dict[int, FeatureMap]:
    if not decoder.config.plus_midpoint:
        raise ConfigError("decoder was built without plus_midpoint")
    return decoder_forward(encoder_feats, decoder, midpoint=midpoint, **kw)


def baseline_cross_decoder(encoder_feats: Sequence[FeatureMap], decoder: Decoder,
                           **kw) -> dict[int, FeatureMap]:
    if decoder.config.attention_variant != "cross-lowest":
        raise ConfigError("decoder was not built with the cross-lowest variant")
    return decoder_forward(encoder_feats, decoder, **kw)


class SegmentationHead(Layer):
    """Upsample every decoder map to ``D_1``'s size, concatenate, then a two-layer MLP."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.name = "head"
        self.fuse = LinearLayer(sum(config.channels), config.embed_dim, "head.fuse", seed)
        self.classify = LinearLayer(config.embed_dim, config.num_classes, "head.classify", seed)

    def named_params(self):
        yield from self.fuse.named_params()
        yield from self.classify.named_params()

    def __call__(self, decoded: dict[int, FeatureMap]) -> Variable:
        return segmentation_head(decoded, self)


def segmentation_head(decoded: dict[int, FeatureMap], head: SegmentationHead) -> Variable:
    """Logits ``[B, H/4, W/4, K]`` from ``{j: D_j}``."""
    d1 = decoded[1]
    h, w = d1.hw
    tape = d1.tensor.tape
    with tape.scope("head"):
        parts = []
        for j in sorted(decoded):
            x = decoded[j].tensor
            if j > 1:
                x = ad.bilinear_upsample(x, h, w)
            parts.append(x)
        x = ad.concat_channels(parts)
        return head.classify(gelu(head.fuse(x)))
