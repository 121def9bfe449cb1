import subprocess
import sys

import pytest

from umixformer.cli import main
from umixformer.config import tiny_config


@pytest.fixture
def tiny_json(tmp_path):
    path = tmp_path / "tiny.json"
    tiny_config().save(path)
    return str(path)


def kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)


def test_train_then_eval(tmp_path, tiny_json, capsys):
    out = tmp_path / "run"
    args = ["train", "--config", tiny_json, "--out", str(out), "--epochs", "1", "--n-train", "8", "--n-val", "4"]
    assert main(args) == 0
    metrics = kv((out / "metrics.txt").read_text())
    assert {"param_hash", "epoch1.loss", "val.miou"} <= set(metrics)
    assert (out / "metrics.json").exists()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.umix"), "--n", "4"]) == 0
    assert kv(capsys.readouterr().out)["miou"] == metrics["val.miou"]


def test_flops_and_gen_data(tmp_path, capsys):
    assert main(["flops", "--input", "512x512"]) == 0
    rep = kv(capsys.readouterr().out)
    assert int(rep["total.flops"]) > 0
    assert main(["gen-data", "--n", "3", "--size", "32x32", "--classes", "3", "--out", str(tmp_path / "d")]) == 0
    assert kv(capsys.readouterr().out)["samples"] == "3"
    assert (tmp_path / "d" / "dataset.npz").exists()


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--max-entries", "3", "--tol", "1e-3"]) == 0
    assert kv(capsys.readouterr().out)["gradcheck.passed"] == "1"
    # an impossible tolerance is a numerical failure, not a usage error
    assert main(["gradcheck", "--max-entries", "3", "--tol", "1e-30"]) == 2


@pytest.mark.parametrize("argv", [
    ["flops", "--input", "abc"],
    ["train"],
    ["bogus"],
    ["flops", "--input", "100x100"],
    ["eval", "--checkpoint", "/nonexistent/ckpt.umix"],
])
def test_invalid_invocations_exit_one(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_bad_config_file_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"channels": [1, 2]}')
    assert main(["flops", "--config", str(bad), "--input", "64x64"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_training_exits_two(tmp_path, tiny_json):
    assert main(["train", "--config", tiny_json, "--out", str(tmp_path / "r"), "--epochs", "1",
                 "--n-train", "4", "--n-val", "2", "--batch-size", "1", "--lr", "1e300"]) == 2


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "umixformer.cli", "flops", "--input", "64x64"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "total.params=" in res.stdout
