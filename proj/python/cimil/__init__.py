"""Python interface to the cimil core library.

Array arguments are NumPy float64 arrays; configs and reports are dicts.
"""

import json

from ._cimil import (
    CimilError,
    MemoryBank,
    RffMap,
    auc,
    covariance_matrix,
    decorrelation_loss,
    distillation_loss,
    inner_product_matrix,
    optimize_weights,
    select_bipolar,
    select_top_k,
    threshold_metrics,
)
from . import _cimil

__all__ = [
    "CimilError",
    "MemoryBank",
    "RffMap",
    "auc",
    "covariance_matrix",
    "decorrelation_loss",
    "default_config",
    "distillation_loss",
    "evaluate",
    "inner_product_matrix",
    "optimize_weights",
    "select_bipolar",
    "select_top_k",
    "synthesize",
    "threshold_metrics",
    "train",
]


def default_config():
    return json.loads(_cimil.default_config())


def synthesize(config, directory):
    """Write the dataset described by ``config`` to ``directory``."""
    _cimil.synthesize(json.dumps(config), str(directory))


def train(config):
    """Train on the configured dataset.

    Returns ``(bundle_bytes, test_report, resolved_config)``.
    """
    bundle, report, resolved = _cimil.train(json.dumps(config))
    return bundle, json.loads(report), json.loads(resolved)


def evaluate(bundle, split="test"):
    return json.loads(_cimil.evaluate(bundle, split))
