"""Pseudo-ranking collaborative filtering.

Training and evaluation engine for implicit-feedback recommendation built
around three pieces: a listwise consecutive-pair ranking loss over a
pseudo-ranked candidate set, a noise-injection supervision loss that trains
the ranking network on synthetic perturbation triples with known order, and
gradient-density confidence weights that down-weight rare-gradient terms.
Includes a pairwise baseline mode, full-ranking top-K evaluation, a
machine-checkable theory oracle, and a scikit-learn style estimator wrapper.
"""

from .data import DataError, InteractionStore, kcore_filter, load_interactions, sample_batch, split
from .estimator import PRPRecommender
from .metrics import evaluate, metrics_at_k, rank_all_items
from .training import TrainConfig, Trainer, fit

__all__ = [
    "DataError",
    "InteractionStore",
    "PRPRecommender",
    "TrainConfig",
    "Trainer",
    "evaluate",
    "fit",
    "kcore_filter",
    "load_interactions",
    "metrics_at_k",
    "rank_all_items",
    "sample_batch",
    "split",
]

__version__ = "0.1.0"
