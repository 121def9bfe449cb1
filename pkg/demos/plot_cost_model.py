"""
Where the decoder spends its FLOPs
==================================

Compares the analytic cost of the four ablation arms at a 512x512 input with
light-weight encoder widths.  Only the ratios mean anything: the per-op
constants are one convention among several.
"""

from umixformer.analysis import count_flops
from umixformer.config import ABLATION_ARMS, large_scale_config

print(f"{'arm':45s} {'kv GFLOPs':>10s} {'decoder GFLOPs':>15s} {'params':>9s}")
for name, variant, unet in ABLATION_ARMS:
    rep = count_flops(large_scale_config(attention_variant=variant, unet=unet))
    decoder = sum(v["flops"] for k, v in rep.by_module().items() if k.startswith("decoder"))
    print(f"{name:45s} {rep.kv_assembly_flops() / 1e9:10.3f} {decoder / 1e9:15.3f} {rep.total_params:9d}")

# mix-attention pools every source down to the smallest map before projecting,
# while the cross baseline projects E1 at full resolution
rep = count_flops(large_scale_config())
for key in ("decoder.stage1.kv.reduce1.pool", "decoder.stage1.kv.reduce1", "decoder.stage1.attn.scores"):
    print(f"{key:35s} {rep.flops[key]:>12,d}")
