"""Command-line entry point.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical failure
(non-finite loss or a failed gradient check).  Reports go to stdout as
``key=value`` lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .ablation import run_ablation
from .analysis import count_flops
from .checkpoint import load_checkpoint
from .config import ModelConfig, tiny_config
from .data import SyntheticDataset, generate_dataset
from .errors import CheckpointError, ConfigError, NumericalError, UMixError
from .gradcheck import GROUP_TOLS, check_decoder_stage, check_model, check_ops
from .train import checkpoint_to_state, evaluate, param_hash, save_state, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

TRAIN_SEED_DATA = 0
VAL_SEED_DATA = 1


def parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return h, w


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def load_config(path: str | None) -> ModelConfig:
    return ModelConfig() if path is None else ModelConfig.load(path)


def emit(lines, out=None) -> None:
    out = out or sys.stdout
    for line in lines:
        print(line, file=out)


def _datasets(config: ModelConfig, args) -> tuple[SyntheticDataset, SyntheticDataset]:
    size = (config.img_h, config.img_w)
    k = args.classes or config.num_classes
    tr = generate_dataset(args.data_seed, args.n_train, size, k, args.noise)
    va = generate_dataset(args.val_seed, args.n_val, size, k, args.noise)
    return tr, va


def _add_data_args(p: argparse.ArgumentParser, n_train: int = 200, n_val: int = 50) -> None:
    p.add_argument("--data-seed", type=int, default=TRAIN_SEED_DATA, help="training set seed")
    p.add_argument("--val-seed", type=int, default=VAL_SEED_DATA, help="validation set seed")
    p.add_argument("--n-train", type=int, default=n_train)
    p.add_argument("--n-val", type=int, default=n_val)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--classes", type=int, default=None, help="dataset classes (default: config num_classes)")
    p.add_argument("--batch-size", type=int, default=8)


def cmd_train(args) -> int:
    config = load_config(args.config)
    tr, va = _datasets(config, args)
    state = train(config, tr, args.epochs, args.lr, args.seed, batch_size=args.batch_size,
                  schedule=args.schedule, val=va)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_state(out / "checkpoint.umix", state)
    result = evaluate(state.model, va)
    lines = [f"seed={args.seed}", f"epochs={args.epochs}", f"lr={args.lr:g}", f"param_hash={param_hash(state.model)}"]
    for rec in state.log:
        e = rec["epoch"]
        lines.append(f"epoch{e}.loss={rec['loss']:.10f}")
        lines.append(f"epoch{e}.train_miou={rec['train_miou']:.6f}")
        lines.append(f"epoch{e}.val_miou={rec['val_miou']:.6f}")
    lines.extend(result.lines("val."))
    (out / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {"seed": args.seed, "epochs": args.epochs, "lr": args.lr, "log": state.log,
               "val_miou": result.miou, "val_per_class": result.per_class}
    (out / "metrics.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    emit(lines)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = checkpoint_to_state(load_checkpoint(args.checkpoint))
    config = state.model.config
    ds = generate_dataset(args.dataset_seed, args.n, (config.img_h, config.img_w),
                          args.classes or config.num_classes, args.noise)
    emit(evaluate(state.model, ds).lines())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = load_config(args.config)
    tols = dict(GROUP_TOLS) if args.tol is None else {k: args.tol for k in GROUP_TOLS}
    model_config = tiny_config() if args.model_config is None else ModelConfig.load(args.model_config)
    groups = [
        check_ops(tols["ops"], seed=args.seed),
        check_decoder_stage(config, args.stage, tols["decoder_stage"], seed=args.seed,
                            max_entries=args.max_entries),
        check_model(model_config, tols["model"], seed=args.seed, max_entries=args.max_entries),
    ]
    for g in groups:
        emit(g.lines())
    ok = all(g.passed for g in groups)
    emit([f"gradcheck.passed={int(ok)}"])
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_flops(args) -> int:
    config = load_config(args.config)
    h, w = args.input
    config = config.replace(img_h=h, img_w=w)
    emit(count_flops(config).lines())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    tr, va = _datasets(config, args)
    table = run_ablation(config, tr, va, args.seeds, args.epochs, args.lr, args.batch_size)
    emit(table.lines())
    return EXIT_OK


def cmd_gen_data(args) -> int:
    ds = generate_dataset(args.seed, args.n, args.size, args.classes, args.noise)
    ds.save(args.out)
    hist = ds.class_histogram()
    emit([f"samples={len(ds)}", f"size={args.size[0]}x{args.size[1]}"]
         + [f"class{c}.pixels={int(v)}" for c, v in enumerate(hist)])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, keep 2 for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="umixformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on synthetic data, write checkpoint and metrics")
    p.add_argument("--config", help="JSON config (default: built-in toy config)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--schedule", choices=("constant", "poly"), default="constant")
    _add_data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a generated dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-seed", type=int, default=VAL_SEED_DATA)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--classes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--config", help="config for the decoder-stage group")
    p.add_argument("--model-config", help="config for the whole-model group (default: tiny)")
    p.add_argument("--tol", type=float, default=None, help="one tolerance for all groups "
                   "(default: 1e-6 ops, 1e-6 stage, 1e-4 model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stage", type=int, default=2)
    p.add_argument("--max-entries", type=int, default=None, help="probe at most this many entries per leaf")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="analytic FLOP and parameter report")
    p.add_argument("--config")
    p.add_argument("--input", type=parse_hw, required=True, metavar="HxW")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("ablate", help="train the four ablation arms")
    p.add_argument("--config")
    p.add_argument("--seeds", type=parse_seeds, default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    _add_data_args(p, n_train=100, n_val=50)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="generate and save a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=parse_hw, required=True, metavar="HxW")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, UMixError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
