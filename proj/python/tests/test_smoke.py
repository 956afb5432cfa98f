# SPDX-License-Identifier: Apache-2.0
import os

import numpy as np
import pytest

import smoothfat

DATA = os.path.join(os.environ.get("SMOOTHFAT_SOURCE_DIR", os.path.join(os.path.dirname(__file__), "..", "..")),
                    "tests", "data")


def test_project_stays_in_ball_and_box():
    rng = np.random.default_rng(0)
    x = rng.random((4, 5)).astype(np.float32)
    d = rng.uniform(-1, 1, (4, 5)).astype(np.float32)
    p = smoothfat.project(x, d, 0.1)
    assert np.all(np.abs(p) <= 0.1 + 1e-7)
    assert np.all(x + p >= -1e-7) and np.all(x + p <= 1 + 1e-7)
    np.testing.assert_array_equal(smoothfat.project(x, p, 0.1), p)


def test_fgsm_equals_one_step_pgd():
    x, y = smoothfat.make_blobs(2, 10, 6, 0.6, seed=1)
    model = smoothfat.Model.mlp(6, [8], 2, seed=3)
    d0 = np.zeros_like(x)
    a = smoothfat.fgsm(model, x, y, d0, 0.1)
    b = smoothfat.pgd(model, x, y, d0, 0.1, 0.1, 1)
    np.testing.assert_array_equal(a["adversarial"], b["adversarial"])
    assert np.max(np.abs(a["adversarial"] - x)) <= 0.1 + 1e-6


def test_stride_condition_and_constraints():
    assert smoothfat.convergence_stride(0.5, 0.02, 0.03) == pytest.approx(0.03)
    assert smoothfat.convergence_stride(0.0, 0.02, 0.03) == pytest.approx(0.02)
    assert smoothfat.condition(1.2, 1.0, 0.1)
    assert not smoothfat.condition(1.05, 1.0, 0.1)
    single = smoothfat.loss_cs_example([2.5], [1.3], 2.0, 1.0, 0.1, 0.5, 1.0)
    batch = smoothfat.loss_cs_batch(2.5, 1.3, 2.0, 1.0, 0.1, 0.5, 1.0)
    assert single == pytest.approx(batch)
    assert smoothfat.lr_at(105, 0.1, [100, 105]) == pytest.approx(0.001)


def test_model_roundtrip_and_evaluate(tmp_path):
    x, y = smoothfat.make_blobs(3, 20, 4, 0.8, seed=2)
    model = smoothfat.Model.mlp(4, [6], 3, seed=5)
    path = str(tmp_path / "m.ckpt")
    model.save(path, seed=5, epoch=1)
    back = smoothfat.Model.load(path)
    np.testing.assert_array_equal(back.flat_params(), model.flat_params())
    report = smoothfat.evaluate(back, x, y, "clean,fgsm,pgd10", 0.05)
    names = [r["attack"] for r in report["results"]]
    assert names == ["clean", "fgsm", "pgd10"]
    assert report["samples"] == 60


def test_load_idx_fixture():
    images, labels = smoothfat.load_idx(os.path.join(DATA, "mnist2-test-images-idx3-ubyte"),
                                        os.path.join(DATA, "mnist2-test-labels-idx1-ubyte"), 2)
    assert images.shape == (1000, 28, 28, 1)
    assert set(np.unique(labels)) == {0, 1}
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_bad_inputs_raise():
    with pytest.raises(smoothfat.DataError):
        smoothfat.load_idx("/nonexistent", "/nonexistent", 2)
    with pytest.raises(smoothfat.ConfigError):
        smoothfat.train({"model": {"kind": "mlp"}})


def test_train_blobs(tmp_path):
    config = {
        "model": {"kind": "mlp", "input_shape": [6], "hidden": [8], "classes": 2},
        "data": {"kind": "blobs", "classes": 2, "per_class": 30, "test_per_class": 10, "dimension": 6},
        "attack": {"xi": "16/255"},
        "train": {"epochs": 2, "batch_size": 16, "lr": 0.05, "eval_samples": 20},
        "eval": {"attacks": "clean,pgd10", "samples": 20},
        "repeats": 1,
        "output_dir": str(tmp_path / "runs"),
    }
    agg = smoothfat.train(config, overrides=["smooth.variant=example"])
    assert agg["repeats"] == 1
    assert (tmp_path / "runs" / "seed-0" / "log.csv").exists()


def test_verify_quick():
    results = smoothfat.verify(gradient_instances=1, box_examples=500)
    failing = [r["name"] for r in results if not r["passed"]]
    assert not failing
