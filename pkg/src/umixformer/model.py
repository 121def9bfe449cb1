"""The full segmentation network: stub encoder, decoder and head."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tape, Variable
from .config import ModelConfig
from .decoder import Decoder, SegmentationHead
from .encoder import StubEncoder, encode
from .features import FeatureMap
from .nn import Layer


class UMixFormer(Layer):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.name = "model"
        self.config = config
        self.seed = seed
        self.encoder = StubEncoder(config, seed)
        self.decoder = Decoder(config, seed)
        self.head = SegmentationHead(config, seed)

    def named_params(self):
        yield from self.encoder.named_params()
        yield from self.decoder.named_params()
        yield from self.head.named_params()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(self.named_params())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into the existing parameters (shapes must match)."""
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def features(self, images, tape: Tape | None = None, replace=None, weights_out=None):
        """Encoder output and decoder maps ``{j: D_j}`` for a batch of images."""
        enc = encode(images, self.encoder, tape)
        decoded = self.decoder(enc.features, midpoint=enc.midpoint if self.config.plus_midpoint else None,
                               replace=replace, weights_out=weights_out)
        return enc, decoded

    def forward(self, images, tape: Tape | None = None, **kw) -> Variable:
        """Logits ``[B, H/4, W/4, K]``; pass a recording ``tape`` to train."""
        _, decoded = self.features(images, tape, **kw)
        return self.head(decoded)

    __call__ = forward

    def predict(self, images, batch_size: int = 16) -> np.ndarray:
        """Class map ``[B, H/4, W/4]`` computed without recording."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        out = []
        for s in range(0, len(images), batch_size):
            logits = self.forward(images[s:s + batch_size], Tape(record=False)).value
            out.append(logits.argmax(axis=-1))
        return np.concatenate(out, axis=0)


__all__ = ["UMixFormer", "FeatureMap"]
