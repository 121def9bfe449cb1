"""Label resampling and IoU metrics."""

from __future__ import annotations

import numpy as np

from .nn import IGNORE_INDEX


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour downsampling of ``[..., H, W]`` by an integer factor.

    Output pixel ``i`` takes input pixel ``floor((i + 0.5) * factor)``, the
    half-pixel convention also used for bilinear resampling.
    """
    off = factor // 2
    return labels[..., off::factor, off::factor].copy()


def confusion_matrix(pred: np.ndarray, label: np.ndarray, num_classes: int,
                     ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """``conf[t, p]`` counts pixels of true class ``t`` predicted as ``p``."""
    pred = np.asarray(pred).reshape(-1)
    label = np.asarray(label).reshape(-1)
    keep = label != ignore_index
    idx = label[keep].astype(np.int64) * num_classes + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_per_class(conf: np.ndarray) -> np.ndarray:
    """IoU per class; NaN where the class is absent from both prediction and label."""
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    out = np.full(conf.shape[0], np.nan)
    present = denom > 0
    out[present] = tp[present] / denom[present]
    return out


def mean_iou(conf: np.ndarray) -> float:
    ious = iou_per_class(conf)
    if np.all(np.isnan(ious)):
        return float("nan")
    return float(np.nanmean(ious))
