"""Training loop, Adam optimiser, evaluation and train-state persistence."""

from __future__ import annotations

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .autodiff import Tape
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .data import SyntheticDataset
from .errors import ConfigError, NumericalError, UsageError
from .metrics import confusion_matrix, downsample_labels, iou_per_class, mean_iou
from .model import UMixFormer

logger = logging.getLogger(__name__)

OUTPUT_STRIDE = 4


class Adam:
    """Adam with bias correction; parameters are updated in place."""

    def __init__(self, params: "OrderedDict[str, np.ndarray]", beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    model: UMixFormer
    optimizer: Adam
    rng: np.random.Generator
    seed: int
    lr: float
    schedule: str = "constant"
    decay_steps: int = 0
    epoch: int = 0
    step: int = 0
    log: list[dict] = field(default_factory=list)

    def lr_at(self, step: int) -> float:
        if self.schedule == "poly" and self.decay_steps > 0:
            return self.lr * max(0.0, 1.0 - step / self.decay_steps) ** 1.0
        return self.lr


@dataclass
class EvalResult:
    miou: float
    per_class: list[float]
    confusion: np.ndarray

    def lines(self, prefix: str = "") -> list[str]:
        out = [f"{prefix}miou={self.miou:.6f}"]
        for c, v in enumerate(self.per_class):
            out.append(f"{prefix}iou_{c}={'nan' if np.isnan(v) else f'{v:.6f}'}")
        return out


def param_hash(model: UMixFormer) -> str:
    h = hashlib.sha256()
    for name, arr in model.named_params():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def evaluate(model: UMixFormer, dataset: SyntheticDataset, batch_size: int = 16) -> EvalResult:
    """Single-scale mIoU at output stride 4 against nearest-downsampled labels.

    Confusion counts are summed over the whole dataset before computing IoU,
    so the result does not depend on sample order.
    """
    if len(dataset) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    k = model.config.num_classes
    conf = np.zeros((k, k), dtype=np.int64)
    for s in range(0, len(dataset), batch_size):
        pred = model.predict(dataset.images[s:s + batch_size], batch_size)
        lab = downsample_labels(dataset.labels[s:s + batch_size], OUTPUT_STRIDE)
        conf += confusion_matrix(pred, lab, k)
    return EvalResult(mean_iou(conf), [float(v) for v in iou_per_class(conf)], conf)


def _check_dataset(config: ModelConfig, dataset: SyntheticDataset) -> None:
    if dataset.size != (config.img_h, config.img_w):
        raise ConfigError(f"dataset images are {dataset.size}, config expects {config.img_h}x{config.img_w}")
    if dataset.num_classes > config.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes, model predicts {config.num_classes}")


def new_state(config: ModelConfig, seed: int, lr: float, schedule: str = "constant",
              decay_steps: int = 0) -> TrainState:
    model = UMixFormer(config, seed)
    return TrainState(model=model, optimizer=Adam(model.state_dict()),
                      rng=np.random.default_rng([seed, 0x5EED]), seed=seed, lr=lr,
                      schedule=schedule, decay_steps=decay_steps)


def train(config: ModelConfig, dataset: SyntheticDataset, epochs: int, lr: float, seed: int, *,
          batch_size: int = 8, schedule: str = "constant", val: SyntheticDataset | None = None,
          state: TrainState | None = None) -> TrainState:
    """Train for ``epochs`` more epochs and return the (possibly resumed) state.

    Each epoch shuffles with the state's RNG, minimises cross-entropy of the
    stride-4 logits against nearest-downsampled labels, and appends a record
    ``{epoch, loss, train_miou[, val_miou], lr}`` to ``state.log``.  The run is
    a pure function of its arguments.
    """
    _check_dataset(config, dataset)
    if schedule not in ("constant", "poly"):
        raise ConfigError(f"unknown schedule {schedule!r}")
    steps_per_epoch = -(-len(dataset) // batch_size)
    if state is None:
        state = new_state(config, seed, lr, schedule, epochs * steps_per_epoch)
    model, opt = state.model, state.optimizer
    k = config.num_classes
    for _ in range(epochs):
        order = state.rng.permutation(len(dataset))
        conf = np.zeros((k, k), dtype=np.int64)
        total_loss = 0.0
        for s in range(0, len(order), batch_size):
            idx = np.sort(order[s:s + batch_size])
            labels = downsample_labels(dataset.labels[idx], OUTPUT_STRIDE)
            tape = Tape()
            logits = model.forward(dataset.images[idx], tape)
            loss = nn.cross_entropy(logits, labels)
            value = float(loss.value[0])
            if not np.isfinite(value):
                where = tape.first_nonfinite()
                detail = "unknown layer"
                if where:
                    name = tape.variables[where[0]].name
                    detail = f"op {where[1]!r} in layer {where[2] or '<input>'}" + (f" ({name})" if name else "")
                raise NumericalError(f"non-finite loss at step {state.step}; first non-finite value from {detail}")
            tape.backward(loss)
            grads = {name: var.grad for name, _, var in tape.parameters()}
            opt.step(grads, state.lr_at(state.step))
            state.step += 1
            total_loss += value * len(idx)
            conf += confusion_matrix(logits.value.argmax(axis=-1), labels, k)
        state.epoch += 1
        record = {"epoch": state.epoch, "loss": total_loss / len(dataset), "train_miou": mean_iou(conf),
                  "lr": state.lr_at(state.step)}
        if val is not None:
            record["val_miou"] = evaluate(model, val).miou
        state.log.append(record)
        logger.info("epoch %d loss %.5f train_miou %.4f", state.epoch, record["loss"], record["train_miou"])
    return state


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def state_to_checkpoint(state: TrainState) -> Checkpoint:
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, arr in state.model.named_params():
        tensors[f"param/{name}"] = arr
    for name in state.optimizer.params:
        tensors[f"adam.m/{name}"] = state.optimizer.m[name]
        tensors[f"adam.v/{name}"] = state.optimizer.v[name]
    meta = {
        "seed": state.seed, "lr": state.lr, "schedule": state.schedule, "decay_steps": state.decay_steps,
        "epoch": state.epoch, "step": state.step, "adam_t": state.optimizer.t,
        "rng": state.rng.bit_generator.state, "log": state.log,
    }
    return Checkpoint(state.model.config, tensors, meta)


def checkpoint_to_state(ckpt: Checkpoint) -> TrainState:
    meta = ckpt.meta
    model = UMixFormer(ckpt.config, meta.get("seed", 0))
    params = OrderedDict((k[len("param/"):], v) for k, v in ckpt.tensors.items() if k.startswith("param/"))
    model.load_state_dict(params)
    opt = Adam(model.state_dict())
    for name in opt.params:
        if f"adam.m/{name}" in ckpt.tensors:
            opt.m[name][...] = ckpt.tensors[f"adam.m/{name}"]
            opt.v[name][...] = ckpt.tensors[f"adam.v/{name}"]
    opt.t = meta.get("adam_t", 0)
    rng = np.random.default_rng()
    if "rng" in meta:
        rng.bit_generator.state = meta["rng"]
    return TrainState(model=model, optimizer=opt, rng=rng, seed=meta.get("seed", 0), lr=meta.get("lr", 0.0),
                      schedule=meta.get("schedule", "constant"), decay_steps=meta.get("decay_steps", 0),
                      epoch=meta.get("epoch", 0), step=meta.get("step", 0), log=list(meta.get("log", [])))


def save_state(path: str | Path, state: TrainState) -> Path:
    return save_checkpoint(path, state_to_checkpoint(state))


def load_state(path: str | Path) -> TrainState:
    return checkpoint_to_state(load_checkpoint(path))
