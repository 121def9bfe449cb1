"""Stage-tagged feature maps and the per-stage key/value feature set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from .autodiff import Variable
from .config import ModelConfig
from .errors import DimensionError, SequencingError

ENCODER = "encoder"
DECODER = "decoder"
MIDPOINT = "encoder-midpoint"


@dataclass(frozen=True)
class FeatureMap:
    """A ``[B, H, W, C]`` variable tagged with its stage ``j`` and origin."""

    tensor: Variable
    stage: int
    origin: str

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def hw(self) -> tuple[int, int]:
        return self.tensor.shape[-3], self.tensor.shape[-2]

    @property
    def channels(self) -> int:
        return self.tensor.shape[-1]

    @property
    def label(self) -> str:
        prefix = {ENCODER: "E", DECODER: "D", MIDPOINT: "M"}[self.origin]
        return f"{prefix}{self.stage}"

    def check_ladder(self, config: ModelConfig, img_hw: tuple[int, int] | None = None) -> None:
        """Raise unless resolution and width match stage ``j`` of the ladder.

        ``img_hw`` is the input image size; it defaults to the configured one.
        """
        img_h, img_w = img_hw or (config.img_h, config.img_w)
        f = 2 ** (self.stage + 1)
        want_hw = (img_h // f, img_w // f)
        want_c = config.channels[self.stage - 1]
        if self.hw != want_hw or self.channels != want_c:
            raise DimensionError(
                f"{self.label}: shape {self.shape} breaks the stage ladder "
                f"(expected {want_hw[0]}x{want_hw[1]}x{want_c})"
            )


@dataclass(frozen=True)
class FeatureSet:
    """Ordered key/value sources for decoder stage ``stage_index``; element j has stage j."""

    stage_index: int
    features: tuple[FeatureMap, ...]

    def __iter__(self) -> Iterator[FeatureMap]:
        return iter(self.features)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, j: int) -> FeatureMap:
        return self.features[j]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.features)


def select_feature_set(encoder_feats: Sequence[FeatureMap], decoder_feats: dict[int, FeatureMap],
                       i: int) -> FeatureSet:
    """Key/value sources of decoder stage ``i``.

    Stage 1 takes every encoder map.  Stage ``i >= 2`` takes ``E_1..E_{N-i+1}``
    followed by the already computed ``D_{N-i+2}..D_N``; each decoder output
    replaces its lateral encoder counterpart.  ``decoder_feats`` maps a stage
    index ``j`` to ``D_j``.
    """
    n = len(encoder_feats)
    if not 1 <= i <= n:
        raise SequencingError(f"decoder stage {i} does not exist for N={n}")
    cut = n if i == 1 else n - i + 1
    feats = list(encoder_feats[:cut])
    for j in range(cut + 1, n + 1):
        if j not in decoder_feats:
            raise SequencingError(f"decoder stage {i} needs D{j}, which has not been computed yet")
        feats.append(decoder_feats[j])
    return FeatureSet(i, tuple(feats))
