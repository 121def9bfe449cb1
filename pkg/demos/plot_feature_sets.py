"""
Which features each decoder stage attends to
============================================

Prints the key/value sources of every decoder stage for the four ablation
arms, then shows how a change to the deepest decoder output travels upward.
"""

import numpy as np

from umixformer import ModelConfig, UMixFormer
from umixformer.config import ABLATION_ARMS
from umixformer.decoder import kv_plan

# the default toy model has four stages at 16, 8, 4 and 2 pixels for a 64x64 image
config = ModelConfig()
for name, variant, unet in ABLATION_ARMS:
    cfg = config.replace(attention_variant=variant, unet=unet)
    print(name)
    for i in range(1, cfg.num_stages + 1):
        q = cfg.num_stages - i + 1
        labels = []
        for s in kv_plan(cfg, i):
            # with propagation on, set element j > q is the decoder output D_j
            if s.kind == "set":
                labels.append(f"{'D' if unet and variant == 'mix' and s.stage > q else 'E'}{s.stage}/pool{s.pool}")
            else:
                labels.append(f"{s.label}/pool{s.pool}")
        srcs = ", ".join(labels)
        print(f"  stage {i} -> D{q}: {srcs}")

# perturb D4 and watch D3..D1 move in the proposed model only
images = np.random.default_rng(0).standard_normal((1, 64, 64, 3))
for name, variant, unet in (ABLATION_ARMS[0], ABLATION_ARMS[-1]):
    model = UMixFormer(config.replace(attention_variant=variant, unet=unet), seed=0)
    _, base = model.features(images)
    _, moved = model.features(images, replace={4: base[4].tensor.value + 1.0})
    diffs = [np.abs(moved[j].tensor.value - base[j].tensor.value).max() for j in (3, 2, 1)]
    print(f"{name}: max |change| in D3, D2, D1 = " + ", ".join(f"{d:.3g}" for d in diffs))
