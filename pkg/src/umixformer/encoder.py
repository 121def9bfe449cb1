"""A small hierarchical encoder producing the ``H/2^(j+1)`` feature ladder.

It stands in for a real backbone: each stage merges patches
(pixel-unshuffle followed by a linear projection; factor 4 at stage 1 and 2
afterwards) and then applies ``depth_j`` residual MLP blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Variable
from .config import ModelConfig
from .errors import ConfigError
from .features import ENCODER, MIDPOINT, FeatureMap
from .nn import FFNLayer, Layer, LayerNormLayer, LinearLayer


class EncoderBlock(Layer):
    def __init__(self, c: int, ratio: int, name: str, seed: int):
        self.name = name
        self.norm = LayerNormLayer(c, f"{name}.norm")
        self.mlp = FFNLayer(c, ratio, f"{name}.mlp", seed)

    def named_params(self):
        yield from self.norm.named_params()
        yield from self.mlp.named_params()

    def __call__(self, x: Variable) -> Variable:
        return ad.add(x, self.mlp(self.norm(x)))


class EncoderStage(Layer):
    def __init__(self, j: int, c_in: int, c_out: int, depth: int, ratio: int, seed: int):
        self.name = f"encoder.stage{j}"
        self.j = j
        self.factor = 4 if j == 1 else 2
        self.embed = LinearLayer(self.factor ** 2 * c_in, c_out, f"{self.name}.embed", seed)
        self.blocks = [EncoderBlock(c_out, ratio, f"{self.name}.block{b + 1}", seed) for b in range(depth)]

    def named_params(self):
        yield from self.embed.named_params()
        for blk in self.blocks:
            yield from blk.named_params()


@dataclass
class EncoderOutput:
    features: list[FeatureMap]
    midpoint: FeatureMap | None


class StubEncoder(Layer):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.name = "encoder"
        self.config = config
        chans = (3,) + config.channels
        self.stages = [
            EncoderStage(j, chans[j - 1], chans[j], config.depths[j - 1], config.ffn_ratio, seed)
            for j in range(1, config.num_stages + 1)
        ]

    def named_params(self):
        for st in self.stages:
            yield from st.named_params()

    def __call__(self, images) -> EncoderOutput:
        return encode(images, self)


def encode(images, enc: StubEncoder, tape: Tape | None = None) -> EncoderOutput:
    """Run the encoder on ``images`` (``[B, H, W, 3]`` array or variable).

    The stage-3 midpoint is taken after ``ceil(depth_3 / 2)`` blocks.
    """
    if not isinstance(images, Variable):
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        images = (tape or Tape(record=False)).leaf(arr, "images")
    cfg = enc.config
    if images.shape[-1] != 3 or images.value.ndim != 4:
        raise ConfigError(f"encoder expects [B, H, W, 3] images, got {images.shape}")
    h, w = images.shape[1:3]
    unit = 2 ** (cfg.num_stages + 1)
    if h % unit or w % unit:
        raise ConfigError(f"image size {h}x{w} must be divisible by 2^(N+1) = {unit}")
    tape = images.tape
    x = images
    feats: list[FeatureMap] = []
    midpoint = None
    for st in enc.stages:
        with tape.scope(st.name):
            x = st.embed(ad.space_to_depth(x, st.factor))
            mid_after = math.ceil(len(st.blocks) / 2)
            if st.j == 3 and mid_after == 0:
                midpoint = FeatureMap(x, 3, MIDPOINT)
            for b, blk in enumerate(st.blocks, start=1):
                x = blk(x)
                if st.j == 3 and b == mid_after:
                    midpoint = FeatureMap(x, 3, MIDPOINT)
        feats.append(FeatureMap(x, st.j, ENCODER))
    return EncoderOutput(feats, midpoint)
