"""End-to-end smoke checks for the python bindings.

Everything here runs at toy scale; the heavy property suites live in the
C++ tests. These only prove the wrapper carries data across correctly.
"""

import json

import numpy as np
import pytest

import ssat

SCENE = {"width": 16, "height": 16, "seed": 5}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "toy"
    return ssat.generate_dataset(SCENE, 6, 2, str(out))


@pytest.fixture(scope="module")
def target(data):
    model, acc, losses = ssat.pretrain_target(data, {"epochs": 1, "batch": 3, "seed": 1})
    assert 0.0 <= acc <= 1.0
    assert len(losses) == 1
    ssat.freeze(model)
    return model


def test_dataset_shapes(data):
    assert data.size() == 8
    assert data.n_train() == 6 and data.n_test() == 2
    assert data.train_indices() == list(range(6))
    img = data.image(0)
    lab = data.labels(0)
    assert img.shape == (3, 16, 16) and img.dtype == np.float32
    assert lab.shape == (16, 16) and lab.dtype == np.uint8
    assert img.min() >= 0.0 and img.max() <= 255.0
    assert lab.max() <= 7
    cfg = json.loads(data.config_json())
    assert cfg["width"] == 16


def test_scene_is_deterministic():
    a_img, a_lab = ssat.generate_scene(SCENE, 3)
    b_img, b_lab = ssat.generate_scene(SCENE, 3)
    np.testing.assert_array_equal(a_img, b_img)
    np.testing.assert_array_equal(a_lab, b_lab)


def test_strict_config_rejected():
    with pytest.raises(ssat.ConfigError):
        ssat.generate_scene({"width": 16, "height": 16, "stlye": "A"}, 0)


def test_target_forward(target, data):
    x = data.image(0)[None, ...]
    logits = ssat.forward_target(target, x)
    assert logits.shape == (1, 8, 16, 16)
    assert target.frozen
    assert target.kind == "target_fcn"
    assert target.n_params == ssat.count_params(target)


def test_generator_and_bound(data):
    gen = ssat.build_generator(8, base_width=8, width_multiplier=0.5, seed=2)
    x = data.image(1)[None, ...]
    raw, reg_logits = ssat.forward_generator(gen, x)
    assert raw.shape == (1, 3, 16, 16)
    assert reg_logits.shape == (1, 8, 16, 16)
    for xi in (4.0, 10.0):
        p = ssat.scale_perturbation(raw, xi)
        assert np.abs(p).max() <= xi
        adv = ssat.apply_perturbation(x, p)
        assert adv.min() >= 0.0 and adv.max() <= 255.0


def test_map_labels_vanish(target, data):
    logits = ssat.forward_target(target, data.image(0)[None, ...])[0]
    spec = {"attack_type": "vanish", "target_classes": [5, 6]}
    labels, mask = ssat.map_labels(logits, spec)
    assert labels.shape == (16, 16) and mask.shape == (16, 16)
    clean = logits.argmax(axis=0)
    on = mask.astype(bool)
    assert not np.isin(labels[on], [5, 6]).any()
    np.testing.assert_array_equal(labels[~on], clean[~on].astype(np.uint8))


def test_train_eval_and_checkpoint(target, data, tmp_path):
    gen = ssat.build_generator(8, base_width=8, width_multiplier=0.5, seed=3)
    spec = {"attack_type": "vanish", "target_classes": [5, 6]}
    hist = ssat.train_attack(
        gen, target, data, spec, {"epochs": 1, "batch": 3, "lr": 1e-3, "seed": 4}
    )
    assert len(hist) == 1
    assert hist[0]["adv_loss"] > 0.0
    assert 0.0 <= hist[0]["preserved"] <= 1.0

    rep = ssat.evaluate_attack(gen, target, data, data.test_indices(), spec, 10.0)
    assert rep["attack_type"] == "vanish"
    assert 0.0 <= rep["preserved_rate"] <= 1.0
    assert rep["n_nontarget_pixels"] > 0
    assert len(rep["fingerprint"]) == 16
    assert not rep["failed"]

    path = tmp_path / "gen.ckpt"
    gen.save(str(path))
    back = ssat.load_checkpoint(str(path))
    x = data.image(0)[None, ...]
    np.testing.assert_array_equal(
        ssat.forward_generator(gen, x)[0], ssat.forward_generator(back, x)[0]
    )
    assert ssat.efficiency_ratio(gen, target) == pytest.approx(
        gen.n_params / target.n_params
    )


def test_render_labelmap(data):
    ppm = ssat.render_labelmap(data.labels(0))
    assert ppm.startswith(b"P6\n16 16\n255\n")
    assert len(ppm) == len(b"P6\n16 16\n255\n") + 3 * 16 * 16
