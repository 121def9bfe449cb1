import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from umixformer.config import tiny_config
from umixformer.data import Shape, generate_dataset, generate_sample, palette
from umixformer.errors import ConfigError, UsageError
from umixformer.metrics import confusion_matrix, downsample_labels, iou_per_class, mean_iou
from umixformer.model import UMixFormer
from umixformer.train import evaluate


def test_noiseless_rectangle_is_exact():
    s = Shape("rect", 2, 3, 5, 4, 6)
    m = s.mask(16, 16)
    assert m.sum() == 24 and m[3:7, 5:11].all()


def test_noiseless_images_are_class_colours():
    ds = generate_dataset(3, 5, 32, 4, noise=0.0)
    assert np.array_equal(ds.images, palette(4)[ds.labels])


def test_same_seed_same_data_and_samples_are_independent():
    a, b = generate_dataset(7, 6, 32, 4), generate_dataset(7, 6, 32, 4)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    longer = generate_dataset(7, 9, 32, 4)
    assert np.array_equal(longer.images[:6], a.images)
    assert not np.array_equal(generate_dataset(8, 6, 32, 4).labels, a.labels)


def test_histogram_and_background_fraction():
    ds = generate_dataset(0, 20, 32, 4)
    assert np.array_equal(ds.class_histogram(), np.bincount(ds.labels.ravel(), minlength=4))
    bg = (ds.labels == 0).mean(axis=(1, 2))
    assert np.all((bg >= 0.2) & (bg <= 0.9))
    for sample, lab in zip(ds.shapes, ds.labels):
        assert len({s.cls for s in sample}) == len(sample)
        assert set(np.unique(lab)) <= {0} | {s.cls for s in sample}


def test_impossible_constraints_are_config_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        generate_sample(rng, (16, 16), 1, 0.0)
    with pytest.raises(ConfigError, match="background"):
        generate_sample(rng, (16, 16), 4, 0.0, background_range=(0.999, 1.0), max_tries=5)
    with pytest.raises(ConfigError):
        generate_dataset(0, 0, 16, 4)


def test_dataset_save_load_round_trip(tmp_path):
    ds = generate_dataset(1, 3, 32, 3)
    back = type(ds).load(ds.save(tmp_path / "d"))
    assert np.array_equal(back.images, ds.images) and back.shapes == ds.shapes


def test_downsample_takes_window_centre():
    lab = np.arange(64).reshape(8, 8)
    assert np.array_equal(downsample_labels(lab, 4), lab[[2, 6]][:, [2, 6]])


def test_confusion_on_small_case():
    pred = np.array([[0, 1, 1, 2], [2, 2, 0, 0], [1, 1, 1, 1], [0, 2, 2, 255]])
    label = np.array([[0, 1, 2, 2], [2, 2, 0, 1], [1, 0, 1, 1], [0, 2, 255, 2]])
    pred[3, 3] = 0
    want = oracles.confusion(pred.ravel().tolist(), label.ravel().tolist(), 3)
    got = confusion_matrix(pred, label, 3)
    assert got.tolist() == want and got.sum() == 15
    assert mean_iou(got) == pytest.approx(oracles.miou(want), abs=1e-15)


@given(st.integers(0, 2**31), st.integers(2, 6))
def test_miou_matches_oracle_and_is_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    pred, label = rng.integers(0, k, 50), rng.integers(0, k, 50)
    conf = confusion_matrix(pred, label, k)
    assert mean_iou(conf) == pytest.approx(oracles.miou(oracles.confusion(pred, label, k)), abs=1e-12)
    perm = rng.permutation(50)
    assert np.array_equal(confusion_matrix(pred[perm], label[perm], k), conf)
    relabel = rng.permutation(k)
    assert mean_iou(confusion_matrix(relabel[pred], relabel[label], k)) == pytest.approx(mean_iou(conf), abs=1e-12)


def test_miou_extremes():
    lab = np.array([0, 1, 2, 2])
    assert mean_iou(confusion_matrix(lab, lab, 3)) == 1.0
    assert mean_iou(confusion_matrix((lab + 1) % 3, lab, 3)) == 0.0
    ious = iou_per_class(confusion_matrix(np.zeros(3, int), np.zeros(3, int), 3))
    assert ious[0] == 1.0 and np.isnan(ious[1:]).all()


def test_evaluate_rejects_empty_dataset():
    ds = generate_dataset(0, 2, 32, 3)
    with pytest.raises(UsageError):
        evaluate(UMixFormer(tiny_config(), 0), ds.subset([]))
