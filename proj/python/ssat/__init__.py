"""Thin pythonic wrapper over the C++ core.

Config-taking functions accept plain dicts here and are serialized to JSON
strings for the strict C++ parsers, so unknown keys still get rejected.
"""

import json as _json

from ._core import (  # noqa: F401
    ConfigError,
    Dataset,
    Model,
    __version__,
    apply_perturbation,
    count_params,
    efficiency_ratio,
    forward_generator,
    forward_target,
    freeze,
    load_checkpoint,
    pixel_accuracy,
    render_labelmap,
    scale_perturbation,
)
from . import _core


def generate_scene(scene_config, index):
    return _core.generate_scene(_json.dumps(scene_config), index)


def generate_dataset(scene_config, n_train, n_test, out_dir, threads=1):
    _core.generate_dataset(_json.dumps(scene_config), n_train, n_test, out_dir, threads)
    return Dataset.open(out_dir)


def pretrain_target(data, pretrain_config):
    """Returns (model, test_pixel_accuracy, per_epoch_loss)."""
    return _core.pretrain_target(data, _json.dumps(pretrain_config))


def build_generator(num_classes, base_width=16, width_multiplier=1.0, seed=0):
    return _core.build_generator(num_classes, base_width, width_multiplier, seed)


def map_labels(logits_chw, attack_spec):
    """Returns (stealthy_labels, target_mask) as uint8 arrays."""
    return _core.map_labels(logits_chw, _json.dumps(attack_spec))


def train_attack(generator, target, data, attack_spec, train_config):
    """Trains in place; returns the per-epoch history as a list of dicts."""
    return _core.train_attack(
        generator, target, data, _json.dumps(attack_spec), _json.dumps(train_config)
    )


def evaluate_attack(generator, target, data, indices, attack_spec, xi):
    return _core.evaluate_attack(
        generator, target, data, list(indices), _json.dumps(attack_spec), xi
    )
