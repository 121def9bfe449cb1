"""Model configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

VARIANTS = ("mix", "cross-lowest", "self")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description.

    ``attention_variant`` picks where decoder keys/values come from and
    ``unet`` whether decoder outputs are propagated to later stages.  The
    proposed model is ``mix`` with ``unet=True``.
    """

    num_stages: int = 4
    img_h: int = 64
    img_w: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    depths: tuple[int, ...] = (1, 1, 2, 1)
    num_classes: int = 4
    embed_dim: int = 128
    heads: tuple[int, ...] | None = None
    ffn_ratio: int = 4
    attention_variant: str = "mix"
    unet: bool = True
    plus_midpoint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if self.heads is not None:
            object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        self.validate()

    def validate(self) -> None:
        n = self.num_stages
        if n < 1:
            raise ConfigError(f"num_stages must be >= 1, got {n}")
        if len(self.channels) != n or len(self.depths) != n:
            raise ConfigError(f"channels and depths need {n} entries, got {self.channels} / {self.depths}")
        if any(c < 1 for c in self.channels) or any(d < 0 for d in self.depths):
            raise ConfigError("channels must be >= 1 and depths >= 0")
        unit = 2 ** (n + 1)
        if self.img_h % unit or self.img_w % unit:
            raise ConfigError(f"image size {self.img_h}x{self.img_w} must be divisible by 2^(N+1) = {unit}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.embed_dim < 1 or self.ffn_ratio < 1:
            raise ConfigError("embed_dim and ffn_ratio must be >= 1")
        if self.attention_variant not in VARIANTS:
            raise ConfigError(f"attention_variant must be one of {VARIANTS}, got {self.attention_variant!r}")
        if self.attention_variant == "self" and self.unet:
            raise ConfigError("the self-attention variant has no decoder propagation; set unet=false")
        if self.plus_midpoint and (self.attention_variant != "mix" or n < 3):
            raise ConfigError("plus_midpoint needs the mix variant and at least 3 stages")
        if self.heads is not None:
            if len(self.heads) != n:
                raise ConfigError(f"heads needs {n} entries, got {self.heads}")
            for c, h in zip(self.channels, self.heads):
                if h < 1 or c % h:
                    raise ConfigError(f"{h} heads do not divide {c} channels")

    # -- derived quantities --------------------------------------------
    def resolution(self, j: int) -> tuple[int, int]:
        """Spatial size of encoder/decoder stage ``j`` (1-based)."""
        f = 2 ** (j + 1)
        return self.img_h // f, self.img_w // f

    def heads_for_stage(self, j: int) -> int:
        if self.heads is not None:
            return self.heads[j - 1]
        c = self.channels[j - 1]
        h = max(1, c // 32)
        while c % h:
            h -= 1
        return h

    def head_dim_for_stage(self, j: int) -> int:
        return self.channels[j - 1] // self.heads_for_stage(j)

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["depths"] = list(self.depths)
        d["heads"] = None if self.heads is None else list(self.heads)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def tiny_config(**kw) -> ModelConfig:
    """32x32 input (smallest the 4-stage ladder allows), widths (4, 4, 8, 8), three classes."""
    base = dict(img_h=32, img_w=32, channels=(4, 4, 8, 8), depths=(1, 1, 2, 1),
                num_classes=3, embed_dim=8)
    base.update(kw)
    return ModelConfig(**base)


def large_scale_config(**kw) -> ModelConfig:
    """Light-weight widths at a 512x512 input, for analytic cost comparisons only."""
    base = dict(img_h=512, img_w=512, channels=(32, 64, 160, 256), depths=(2, 2, 2, 2),
                num_classes=150, embed_dim=128)
    base.update(kw)
    return ModelConfig(**base)


ABLATION_ARMS = (
    ("Baseline - FeedFormer (Cross-Attention)", "cross-lowest", False),
    ("Mix-Attention", "mix", False),
    ("Cross-Attention + U-Net", "cross-lowest", True),
    ("Mix-Attention + U-Net (proposed method)", "mix", True),
)
