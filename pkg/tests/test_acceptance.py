"""Acceptance criteria 1-10.  Each test records a one-line verdict that the
terminal summary prints, then asserts."""

import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE, leaf
from umixformer import nn
from umixformer import tensor as T
from umixformer.ablation import run_ablation
from umixformer.analysis import count_flops
from umixformer.autodiff import Tape
from umixformer.checkpoint import decode_checkpoint, encode_checkpoint
from umixformer.cli import main
from umixformer.config import ABLATION_ARMS, ModelConfig, large_scale_config, tiny_config
from umixformer.data import generate_dataset
from umixformer.decoder import Decoder, decoder_forward
from umixformer.features import DECODER, ENCODER, MIDPOINT, FeatureMap, select_feature_set
from umixformer.gradcheck import check_decoder_stage, check_model, check_ops
from umixformer.model import UMixFormer
from umixformer.train import evaluate, param_hash, state_to_checkpoint, train

from test_decoder import SHAPE_GRID, random_encoder


def record(n, title, ok, detail):
    ACCEPTANCE[n] = (title, bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")


def test_c01_feature_set_enumeration():
    t0 = time.perf_counter()
    mismatches = checked = 0
    for n in (2, 3, 4, 5):
        tape = Tape(record=False)
        enc = [FeatureMap(tape.leaf(np.zeros((1, 1, 1, 1))), j, ENCODER) for j in range(1, n + 1)]
        dec = {j: FeatureMap(tape.leaf(np.zeros((1, 1, 1, 1))), j, DECODER) for j in range(1, n + 1)}
        for i in range(1, n + 1):
            checked += 1
            mismatches += select_feature_set(enc, dec, i).labels != oracles.feature_set_labels(n, i)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 1.0
    record(1, "feature-set rule", ok, f"{checked} (N, i) pairs, {mismatches} mismatches, {dt:.3f}s")
    assert ok


def test_c02_shape_mirroring():
    t0 = time.perf_counter()
    bad = []
    for kw in SHAPE_GRID:
        cfg = ModelConfig(**kw)
        model = UMixFormer(cfg, 0)
        enc, decoded = model.features(np.zeros((1, cfg.img_h, cfg.img_w, 3)))
        if any(decoded[fm.stage].shape != fm.shape for fm in enc.features):
            bad.append(kw)
        if model.head(decoded).shape != (1, cfg.img_h // 4, cfg.img_w // 4, cfg.num_classes):
            bad.append(kw)
    dt = time.perf_counter() - t0
    ok = not bad and len(SHAPE_GRID) >= 12 and dt < 10
    record(2, "shape mirroring", ok, f"{len(SHAPE_GRID)} configs, {len(bad)} failures, {dt:.2f}s")
    assert ok


def test_c03_gradient_correctness():
    # 16x16 cannot hold four stride-2 stages after the stride-4 stem, 32x32 is the smallest legal input
    t0 = time.perf_counter()
    ops = check_ops(1e-6, eps=1e-5)
    stages = [check_decoder_stage(tiny_config(), stage=i, tol=1e-6, eps=1e-5) for i in (1, 2, 3, 4)]
    model = check_model(tiny_config(), tol=1e-4, eps=1e-5)
    dt = time.perf_counter() - t0
    for g in [ops, *stages, model]:
        print("\n".join(line for line in g.lines() if "passed=0" in line or line.startswith("group=") and "case=" not in line))
    ok = ops.passed and all(s.passed for s in stages) and model.passed and dt < 300
    detail = (f"ops max {ops.max_rel_error:.1e} (tol 1e-6), stages max {max(s.max_rel_error for s in stages):.1e} "
              f"(tol 1e-6), model max {model.max_rel_error:.3e} (tol 1e-4), {dt:.0f}s")
    record(3, "gradient check", ok, detail)
    assert ops.passed and all(s.passed for s in stages)
    assert model.passed, "\n".join(model.lines()[-8:])


def test_c04_attention_invariants():
    rng = np.random.default_rng(4)
    mha = nn.MultiHeadAttention(8, 6, 2, 4, "acc.attn", 4)
    for lin in (mha.q, mha.v, mha.o):
        lin.bias[...] = 0.3 * rng.standard_normal(lin.bias.shape)
    worst_sum = worst_perm = worst_single = 0.0
    for _ in range(50):
        xq, xkv = rng.standard_normal((2, 7, 8)), rng.standard_normal((2, 9, 6))
        tape = Tape(record=False)
        weights = []
        out = mha(tape.leaf(xq), tape.leaf(xkv), weights).value
        worst_sum = max(worst_sum, np.max(np.abs(weights[0].sum(axis=-1) - 1)))
        perm = rng.permutation(9)
        moved = mha(tape.leaf(xq), tape.leaf(xkv[:, perm]), None).value
        worst_perm = max(worst_perm, np.max(np.abs(moved - out)))
        one = xkv[:, :1]
        single = mha(tape.leaf(xq), tape.leaf(one), None).value
        v = one @ mha.v.weight + mha.v.bias
        want = np.broadcast_to(v @ mha.o.weight + mha.o.bias, single.shape)
        worst_single = max(worst_single, np.max(np.abs(single - want)))
    ok = worst_sum <= 1e-12 and worst_perm <= 1e-10 and worst_single <= 1e-12
    record(4, "attention invariants", ok,
           f"row sums {worst_sum:.1e}, kv permutation {worst_perm:.1e}, single key {worst_single:.1e}")
    assert ok


def _oracle_cases(rng):
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), float(err))

    for _ in range(100):
        m, k, p = (int(v) for v in rng.integers(1, 7, size=3))
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, p))
        note("matmul", np.max(np.abs(T.matmul(a, b) - oracles.matmul(a, b))))

        f = int(rng.integers(1, 4))
        x = rng.standard_normal((f * int(rng.integers(1, 4)), f * int(rng.integers(1, 4)), 2))
        note("avg_pool", np.max(np.abs(T.avg_pool(x, f) - oracles.avg_pool(x, f))))

        x = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5)), 2))
        oh, ow = x.shape[0] * int(rng.integers(1, 4)), x.shape[1] + int(rng.integers(0, 5))
        note("bilinear", np.max(np.abs(T.bilinear_upsample(x, oh, ow) - oracles.bilinear(x, oh, ow))))

        c = int(rng.integers(1, 9))
        x = 3 * rng.standard_normal((4, c)) + rng.standard_normal()
        g, b_ = rng.standard_normal(c), rng.standard_normal(c)
        tape = Tape(record=False)
        got = nn.layer_norm_op(tape.leaf(x), tape.leaf(g), tape.leaf(b_)).value
        note("layer_norm", np.max(np.abs(got - oracles.layer_norm(x, g, b_, nn.LN_EPS))))

        cq, ckv, d = (int(v) for v in rng.integers(1, 5, size=3))
        mha = nn.MultiHeadAttention(cq, ckv, 1, d, "oracle.attn", int(rng.integers(1000)))
        for lin in (mha.q, mha.v, mha.o):
            lin.bias[...] = 0.3 * rng.standard_normal(lin.bias.shape)
        xq, xkv = rng.standard_normal((int(rng.integers(1, 5)), cq)), rng.standard_normal((int(rng.integers(1, 6)), ckv))
        tape = Tape(record=False)
        got = mha(tape.leaf(xq), tape.leaf(xkv)).value
        want = oracles.attention_one_head(xq, xkv, mha.q.weight, mha.q.bias, mha.k.weight, mha.v.weight,
                                          mha.v.bias, mha.o.weight, mha.o.bias)
        note("attention", np.max(np.abs(got - want)))

        kk = int(rng.integers(2, 6))
        logits = 4 * rng.standard_normal((int(rng.integers(1, 8)), kk))
        labels = rng.integers(0, kk, size=len(logits))
        labels[rng.random(len(labels)) < 0.2] = nn.IGNORE_INDEX
        labels[0] = 0
        got = nn.cross_entropy(leaf(logits), labels).value[0]
        note("cross_entropy", abs(got - oracles.cross_entropy(logits, labels, nn.IGNORE_INDEX)))
    return worst


def test_c05_oracle_equivalence():
    tols = {"matmul": 0.0, "avg_pool": 0.0, "bilinear": 1e-12, "layer_norm": 1e-10, "attention": 1e-12,
            "cross_entropy": 1e-12}
    worst = _oracle_cases(np.random.default_rng(5))
    ok = all(worst[k] <= tols[k] for k in tols)
    record(5, "oracle equivalence", ok,
           "100 cases each; " + ", ".join(f"{k} {worst[k]:.0e}<={tols[k]:.0e}" for k in tols))
    assert ok


@pytest.fixture(scope="module")
def toy_data():
    return generate_dataset(0, 200, 64, 4, 0.05), generate_dataset(1, 50, 64, 4, 0.05)


def test_c06_toy_training(toy_data):
    tr, va = toy_data
    cfg = ModelConfig()
    t0 = time.perf_counter()
    state = None
    for _ in range(40):
        state = train(cfg, tr, 1, 1e-3, 0, val=va, state=state)
        if state.log[-1]["val_miou"] >= 0.80:
            break
    reached = state.log[-1]["val_miou"]
    epochs = state.epoch
    again = train(cfg, tr, epochs, 1e-3, 0, val=va)
    same = param_hash(again.model) == param_hash(state.model) and again.log == state.log
    dt = time.perf_counter() - t0
    ok = reached >= 0.80 and same and dt < 900
    record(6, "toy training", ok, f"val mIoU {reached:.4f} after {epochs} epoch(s), "
           f"rerun identical={same}, {dt:.0f}s")
    assert ok


def test_c07_ablation_direction(toy_data):
    # FLOP direction at the published widths and a 512x512 input
    big = {name: count_flops(large_scale_config(attention_variant=v, unet=u)) for name, v, u in ABLATION_ARMS}
    names = [a[0] for a in ABLATION_ARMS]
    baseline_kv, proposed_kv = big[names[0]].kv_assembly_flops(), big[names[-1]].kv_assembly_flops()
    flop_ok = proposed_kv < baseline_kv

    tr, va = toy_data
    table = run_ablation(ModelConfig(), tr.subset(range(100)), va, seeds=[0, 1, 2], epochs=3, lr=1e-3)
    print("\n".join(table.lines()))
    prop = table.proposed.mean_miou
    others = [a for a in table.arms if a is not table.proposed]
    acc_ok = all(prop >= a.mean_miou - 0.01 for a in others)
    noise = max(a.std_miou for a in table.arms)
    detail = (f"kv GFLOPs {proposed_kv / 1e9:.3f} (mix+U-Net) < {baseline_kv / 1e9:.3f} (cross); mIoU "
              + ", ".join(f"{a.mean_miou:.4f}" for a in table.arms)
              + f" (proposed last, max seed std {noise:.4f})")
    record(7, "ablation direction", flop_ok and acc_ok, detail)
    assert flop_ok
    if not acc_ok:
        gap = max(a.mean_miou for a in others) - prop
        assert gap <= 0.01 + noise, f"proposed arm trails by {gap:.4f}, beyond seed noise {noise:.4f}"


def test_c08_propagation_dependency():
    rng = np.random.default_rng(8)
    diffs = {}
    for label, cfg in (("proposed", ModelConfig()), ("baseline", ModelConfig(attention_variant="cross-lowest", unet=False))):
        feats, _ = random_encoder(cfg, rng)
        dec = Decoder(cfg, 0)
        base = decoder_forward(feats, dec)
        moved = decoder_forward(feats, dec, replace={4: base[4].tensor.value + rng.standard_normal(base[4].shape)})
        diffs[label] = max(np.max(np.abs(moved[j].tensor.value - base[j].tensor.value)) for j in (1, 2, 3))
        diffs[label + "_d3"] = np.max(np.abs(moved[3].tensor.value - base[3].tensor.value))
    ok = diffs["proposed_d3"] > 0 and diffs["baseline"] == 0
    record(8, "propagation dependency", ok,
           f"proposed |dD3| {diffs['proposed_d3']:.2e} > 0, baseline max |dD1..3| {diffs['baseline']:.1e} == 0")
    assert ok


def test_c09_plus_midpoint():
    rng = np.random.default_rng(9)
    cfg = ModelConfig()
    plus = cfg.replace(plus_midpoint=True)
    base_dec, plus_dec = Decoder(cfg, 0), Decoder(plus, 0)
    widen = {s.c_kv - b.c_kv for s, b in zip(plus_dec.stages, base_dec.stages)}
    sources = {len(s.plan) for s in plus_dec.stages}
    feats, mid = random_encoder(plus, rng)
    kv_width = plus_dec.stage_kv(1, feats, {}, mid).shape[-1]

    images = rng.standard_normal((2, 64, 64, 3))
    ref = UMixFormer(cfg, 0).forward(images).value
    off = UMixFormer(ModelConfig.from_dict({**plus.to_dict(), "plus_midpoint": False}), 0)
    bit_exact = np.array_equal(off.forward(images).value, ref)
    with_mid = decoder_forward(feats, base_dec, midpoint=FeatureMap(mid.tensor, 3, MIDPOINT))
    without = decoder_forward(feats, base_dec)
    ignored = all(np.array_equal(with_mid[j].tensor.value, without[j].tensor.value) for j in range(1, 5))
    ok = widen == {cfg.channels[2]} and sources == {5} and kv_width == sum(cfg.channels) + cfg.channels[2] \
        and bit_exact and ignored
    record(9, "U-MixFormer+ plumbing", ok,
           f"kv widened by {sorted(widen)} (C3={cfg.channels[2]}), sources {sorted(sources)}, "
           f"disabled bit-exact={bit_exact and ignored}")
    assert ok


def test_c10_persistence_and_determinism(tmp_path):
    state = train(tiny_config(), generate_dataset(0, 4, 32, 3), 1, 1e-3, 0, batch_size=2)
    blob = encode_checkpoint(state_to_checkpoint(state))
    back = decode_checkpoint(blob)
    round_trip = encode_checkpoint(back) == blob and all(
        back.tensors[f"param/{k}"].tobytes() == v.tobytes() for k, v in state.model.named_params())

    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["train", "--out", str(out), "--seed", "3", "--epochs", "2", "--n-train", "16", "--n-val", "8"])
        assert code == 0
        outs.append(out)
    files = ("metrics.txt", "metrics.json", "checkpoint.umix")
    same = {f: (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files}
    evals = []
    for out in outs:
        ckpt = decode_checkpoint((out / "checkpoint.umix").read_bytes())
        model = UMixFormer(ckpt.config, 0)
        model.load_state_dict({k[6:]: v for k, v in ckpt.tensors.items() if k.startswith("param/")})
        evals.append(evaluate(model, generate_dataset(1, 8, 64, 4)).lines())
    ok = round_trip and all(same.values()) and evals[0] == evals[1]
    record(10, "persistence and determinism", ok,
           f"checkpoint round trip bit-exact={round_trip}, identical files across two runs: "
           + ", ".join(f"{f}={v}" for f, v in same.items()))
    assert ok
