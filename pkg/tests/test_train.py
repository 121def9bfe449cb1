import numpy as np
import pytest

from umixformer.config import tiny_config
from umixformer.data import generate_dataset
from umixformer.errors import ConfigError, NumericalError
from umixformer.train import evaluate, load_state, new_state, param_hash, save_state, train


@pytest.fixture(scope="module")
def small():
    return generate_dataset(0, 6, 32, 3)


def test_zero_lr_leaves_parameters_untouched(small):
    before = param_hash(new_state(tiny_config(), 0, 0.0).model)
    state = train(tiny_config(), small, 1, 0.0, 0, batch_size=3)
    assert param_hash(state.model) == before
    assert state.step == 2


def test_overfits_one_sample():
    ds = generate_dataset(0, 1, 32, 3, noise=0.0)
    state = train(tiny_config(), ds, 200, 1e-2, 0, batch_size=1)
    assert evaluate(state.model, ds).miou >= 0.95


def test_same_seed_same_run_and_seeds_differ(small):
    a = train(tiny_config(), small, 2, 1e-3, 0, batch_size=4)
    b = train(tiny_config(), small, 2, 1e-3, 0, batch_size=4)
    c = train(tiny_config(), small, 2, 1e-3, 1, batch_size=4)
    assert param_hash(a.model) == param_hash(b.model) and a.log == b.log
    assert param_hash(c.model) != param_hash(a.model)


def test_resume_matches_uninterrupted_run(small, tmp_path):
    whole = train(tiny_config(), small, 3, 1e-3, 2, batch_size=4, schedule="poly")
    part = train(tiny_config(), small, 1, 1e-3, 2, batch_size=4, schedule="poly",
                 state=new_state(tiny_config(), 2, 1e-3, "poly", 3 * 2))
    save_state(tmp_path / "s.umix", part)
    resumed = train(tiny_config(), small, 2, 1e-3, 2, batch_size=4, state=load_state(tmp_path / "s.umix"))
    assert param_hash(resumed.model) == param_hash(whole.model)
    assert resumed.log == whole.log


def test_poly_schedule_decays_to_zero():
    state = new_state(tiny_config(), 0, 0.1, "poly", 10)
    assert state.lr_at(0) == 0.1 and state.lr_at(5) == pytest.approx(0.05) and state.lr_at(10) == 0.0
    assert state.lr_at(12) == 0.0


def test_nan_diagnostic_names_the_layer(small):
    state = new_state(tiny_config(), 0, 1e-3)
    state.model.state_dict()["decoder.stage2.ffn.fc1.weight"][0, 0] = np.nan
    with pytest.raises(NumericalError, match=r"decoder\.stage2\.ffn"):
        train(tiny_config(), small, 1, 1e-3, 0, state=state)


def test_dataset_must_fit_the_config(small):
    with pytest.raises(ConfigError):
        train(tiny_config(img_h=64, img_w=64), small, 1, 1e-3, 0)
    with pytest.raises(ConfigError, match="schedule"):
        train(tiny_config(), small, 1, 1e-3, 0, schedule="cosine")
