"""Four-arm comparison of key/value sourcing and decoder propagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import count_flops, count_params
from .config import ABLATION_ARMS, ModelConfig
from .data import SyntheticDataset
from .model import UMixFormer
from .train import evaluate, train


@dataclass
class ArmResult:
    name: str
    config: ModelConfig
    params: int
    flops: int
    kv_flops: int
    miou: dict[int, float] = field(default_factory=dict)

    @property
    def mean_miou(self) -> float:
        return float(np.mean(list(self.miou.values())))

    @property
    def std_miou(self) -> float:
        return float(np.std(list(self.miou.values()), ddof=1)) if len(self.miou) > 1 else 0.0


@dataclass
class AblationTable:
    arms: list[ArmResult]
    epochs: int
    lr: float

    @property
    def proposed(self) -> ArmResult:
        return self.arms[-1]

    def lines(self) -> list[str]:
        out = [f"ablation.epochs={self.epochs}", f"ablation.lr={self.lr:g}"]
        for k, arm in enumerate(self.arms):
            p = f"arm{k}"
            out.append(f"{p}.name={arm.name}")
            for s, v in arm.miou.items():
                out.append(f"{p}.miou.seed{s}={v:.6f}")
            out.append(f"{p}.miou.mean={arm.mean_miou:.6f}")
            out.append(f"{p}.miou.std={arm.std_miou:.6f}")
            out.append(f"{p}.params={arm.params}")
            out.append(f"{p}.flops={arm.flops}")
            out.append(f"{p}.kv_flops={arm.kv_flops}")
        return out

    def markdown(self) -> str:
        rows = ["| arm | mIoU (mean +- std) | params | FLOPs | kv FLOPs |", "|---|---|---|---|---|"]
        for arm in self.arms:
            rows.append(f"| {arm.name} | {arm.mean_miou:.4f} +- {arm.std_miou:.4f} | {arm.params} "
                        f"| {arm.flops} | {arm.kv_flops} |")
        return "\n".join(rows)


def arm_configs(config: ModelConfig) -> list[tuple[str, ModelConfig]]:
    return [(name, config.replace(attention_variant=variant, unet=unet, plus_midpoint=False))
            for name, variant, unet in ABLATION_ARMS]


def run_ablation(config: ModelConfig, train_set: SyntheticDataset, val_set: SyntheticDataset,
                 seeds, epochs: int, lr: float, batch_size: int = 8) -> AblationTable:
    """Train every arm once per seed on the same data and budget; report validation mIoU."""
    arms = []
    for name, cfg in arm_configs(config):
        flops = count_flops(cfg)
        arm = ArmResult(name, cfg, count_params(UMixFormer(cfg, 0)).total_params, flops.total_flops,
                        flops.kv_assembly_flops())
        for s in seeds:
            state = train(cfg, train_set, epochs, lr, s, batch_size=batch_size)
            arm.miou[s] = evaluate(state.model, val_set).miou
        arms.append(arm)
    return AblationTable(arms, epochs, lr)
