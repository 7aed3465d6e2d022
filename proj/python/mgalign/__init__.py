"""Multi-granularity video-text alignment on precomputed embeddings."""

import json as _json

from ._mgalign import (  # noqa: F401
    Dataset,
    Error,
    ModelParams,
    coarse_importance,
    cosine_sim,
    cross_attention,
    evaluate,
    evaluate_mean_pool,
    fine_importance,
    grad_check,
    identity_params,
    init_params,
    load_dataset,
    load_model,
    mean_average_precision,
    save_dataset,
    save_model,
    score_matrix,
    topk_accuracy,
    tpp_score,
    validate,
)
from . import _mgalign

__all__ = [name for name in dir() if not name.startswith("_")]


def error_kind(exc):
    """Kind name of an Error, e.g. "BadK"."""
    head = str(exc).split(":", 1)[0]
    return head.rsplit(".", 1)[-1]


def generate_synthetic(**config):
    """Planted dataset; keyword names match the gen-synth config file keys."""
    return _mgalign._generate_synthetic(_json.dumps(config))


def train(dataset, seed=0, **config):
    """Returns (params, history); history rows are
    (epoch, loss_t2v, loss_v2t, total, train_top1)."""
    return _mgalign._train(dataset, _json.dumps(config), seed)
