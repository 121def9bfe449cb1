"""Seeded synthetic segmentation data: coloured rectangles and ellipses on a background."""

from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

BACKGROUND = 0


@dataclass(frozen=True)
class Shape:
    kind: str
    cls: int
    top: int
    left: int
    height: int
    width: int

    def mask(self, h: int, w: int) -> np.ndarray:
        m = np.zeros((h, w), dtype=bool)
        if self.kind == "rect":
            m[self.top:self.top + self.height, self.left:self.left + self.width] = True
            return m
        yy, xx = np.mgrid[0:h, 0:w]
        cy = self.top + self.height / 2.0
        cx = self.left + self.width / 2.0
        dy = (yy + 0.5 - cy) / (self.height / 2.0)
        dx = (xx + 0.5 - cx) / (self.width / 2.0)
        return dy * dy + dx * dx <= 1.0


@dataclass
class SyntheticDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int
    noise: float
    shapes: list[list[Shape]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx, dtype=np.int64)
        shapes = [self.shapes[i] for i in idx] if self.shapes else []
        return SyntheticDataset(self.images[idx], self.labels[idx], self.num_classes,
                                self.seed, self.noise, shapes)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels.reshape(-1), minlength=self.num_classes)

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"num_classes": self.num_classes, "seed": self.seed, "noise": self.noise,
                "shapes": [[asdict(s) for s in sample] for sample in self.shapes]}
        np.savez(d / "dataset.npz", images=self.images, labels=self.labels)
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "SyntheticDataset":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        with np.load(d / "dataset.npz") as z:
            images, labels = z["images"], z["labels"]
        shapes = [[Shape(**s) for s in sample] for sample in meta["shapes"]]
        return cls(images, labels, meta["num_classes"], meta["seed"], meta["noise"], shapes)


def palette(num_classes: int) -> np.ndarray:
    """Class colours: mid grey background, evenly spaced saturated hues for the rest."""
    colors = np.empty((num_classes, 3))
    colors[0] = 0.5
    for c in range(1, num_classes):
        colors[c] = colorsys.hsv_to_rgb((c - 1) / max(1, num_classes - 1), 0.85, 0.9)
    return colors


def _sample_shape(rng: np.random.Generator, kind: str, cls: int, h: int, w: int) -> Shape:
    hh = int(rng.integers(max(1, h // 8), max(2, h // 2) + 1))
    ww = int(rng.integers(max(1, w // 8), max(2, w // 2) + 1))
    top = int(rng.integers(0, h - hh + 1))
    left = int(rng.integers(0, w - ww + 1))
    return Shape(kind, cls, top, left, hh, ww)


def generate_sample(rng: np.random.Generator, size: tuple[int, int], num_classes: int, noise: float,
                    min_shapes: int = 1, max_shapes: int = 4, kinds=("rect", "ellipse"),
                    background_range=(0.2, 0.9), max_tries: int = 200):
    h, w = size
    hi = min(max_shapes, num_classes - 1)
    if num_classes < 2 or hi < min_shapes:
        raise ConfigError(f"cannot place {min_shapes}+ shapes of distinct classes with {num_classes} classes")
    colors = palette(num_classes)
    for _ in range(max_tries):
        count = int(rng.integers(min_shapes, hi + 1))
        classes = rng.choice(np.arange(1, num_classes), size=count, replace=False)
        shapes = [_sample_shape(rng, kinds[int(rng.integers(len(kinds)))], int(c), h, w) for c in classes]
        label = np.full((h, w), BACKGROUND, dtype=np.int64)
        for s in shapes:
            label[s.mask(h, w)] = s.cls
        bg = float(np.mean(label == BACKGROUND))
        if background_range[0] <= bg <= background_range[1]:
            image = colors[label] + noise * rng.standard_normal((h, w, 3))
            return image, label, shapes
    raise ConfigError(f"no layout met the background fraction range {background_range} in {max_tries} tries")


def generate_dataset(seed: int, n: int, size: tuple[int, int] | int, num_classes: int, noise: float = 0.05,
                     **kw) -> SyntheticDataset:
    """``n`` samples; sample ``k`` depends only on ``(seed, k)``.

    Each sample places 1-4 rectangles/ellipses of distinct non-background
    classes (later shapes drawn on top) and is resampled until the background
    covers 20%-90% of the pixels.  Pixel colour is the class colour plus
    Gaussian noise of standard deviation ``noise``.
    """
    if isinstance(size, int):
        size = (size, size)
    if n < 1:
        raise ConfigError(f"dataset needs at least one sample, got n={n}")
    h, w = size
    images = np.empty((n, h, w, 3))
    labels = np.empty((n, h, w), dtype=np.int64)
    shapes = []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        images[k], labels[k], s = generate_sample(rng, size, num_classes, noise, **kw)
        shapes.append(s)
    return SyntheticDataset(images, labels, num_classes, seed, noise, shapes)
