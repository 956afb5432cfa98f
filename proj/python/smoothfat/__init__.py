# SPDX-License-Identifier: Apache-2.0
"""Fast adversarial training with loss-convergence smoothing."""
import json
import os

from ._smoothfat import (
    CheckpointError,
    ConfigError,
    DataError,
    Model,
    ShapeError,
    TrainingAbort,
    condition,
    convergence_stride,
    fgsm,
    load_idx,
    loss_cs_batch,
    loss_cs_example,
    lr_at,
    make_blobs,
    pgd,
    project,
)
from . import _smoothfat

__all__ = [
    "CheckpointError", "ConfigError", "DataError", "Model", "ShapeError", "TrainingAbort",
    "condition", "convergence_stride", "evaluate", "fgsm", "load_idx", "loss_cs_batch",
    "loss_cs_example", "lr_at", "make_blobs", "pgd", "project", "train", "verify",
]


def evaluate(model, images, labels, attacks="clean,fgsm,pgd10", xi=16 / 255):
    """Clean and attacked accuracy as a dict (see EvalReport JSON)."""
    return json.loads(_smoothfat.evaluate(model, images, labels, attacks, xi))


def train(config, overrides=(), base_dir=None):
    """Run an experiment from a config dict or a path to a JSON file; returns the aggregate report."""
    if isinstance(config, (str, os.PathLike)):
        path = os.fspath(config)
        with open(path) as f:
            doc = json.load(f)
        base_dir = base_dir or os.path.dirname(os.path.abspath(path))
    else:
        doc = config
    return json.loads(_smoothfat._train(json.dumps(doc), base_dir or "", list(overrides)))


def verify(gradient_instances=2, box_examples=2000):
    """Run the built-in property checks with small instance counts."""
    return _smoothfat._verify(gradient_instances, box_examples)
