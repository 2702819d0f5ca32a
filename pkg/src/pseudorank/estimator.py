"""scikit-learn style wrapper around the training engine.

``PRPRecommender`` follows the estimator contract: constructor arguments are
stored untouched (so ``get_params`` / ``set_params`` / ``clone`` work), state
learned by ``fit`` lives in trailing-underscore attributes, and inputs are
validated up front.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import InteractionStore, kcore_filter, split, store_from_records
from .metrics import rank_all_items
from .training import TrainConfig, Trainer
from .validation import as_records, as_user_item_pairs

__all__ = ["PRPRecommender"]


class PRPRecommender(BaseEstimator):
    """Implicit-feedback recommender trained with the pseudo-ranking objective.

    Parameters mirror the training configuration, plus dataset preparation
    knobs (``min_core``, ``split_ratios``, ``split_seed``). ``fit`` accepts
    raw (user, item) pairs or a ready ``InteractionStore`` (split stores are
    used as-is; unsplit ones are filtered and split here).
    """

    def __init__(
        self,
        embedding_dim: int = 64,
        lr: float = 1e-3,
        l2: float = 1e-4,
        batch_size: int = 1024,
        k: int = 4,
        beta: float = 0.3,
        thetas: tuple[float, ...] = (0.0, 0.01, 0.1),
        epochs: int = 30,
        patience: int = 10,
        eval_every: int = 1,
        eval_ks: tuple[int, ...] = (10, 20),
        seed: int = 0,
        loss_mode: str = "prp",
        no_ranker: bool = False,
        no_lp: bool = False,
        no_confidence: bool = False,
        confidence_on_lp: bool = True,
        pin_positive: bool = True,
        min_core: int = 0,
        split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
        split_seed: int = 0,
    ):
        self.embedding_dim = embedding_dim
        self.lr = lr
        self.l2 = l2
        self.batch_size = batch_size
        self.k = k
        self.beta = beta
        self.thetas = thetas
        self.epochs = epochs
        self.patience = patience
        self.eval_every = eval_every
        self.eval_ks = eval_ks
        self.seed = seed
        self.loss_mode = loss_mode
        self.no_ranker = no_ranker
        self.no_lp = no_lp
        self.no_confidence = no_confidence
        self.confidence_on_lp = confidence_on_lp
        self.pin_positive = pin_positive
        self.min_core = min_core
        self.split_ratios = split_ratios
        self.split_seed = split_seed

    def _config(self) -> TrainConfig:
        fields = TrainConfig.__dataclass_fields__
        return TrainConfig(**{name: getattr(self, name) for name in fields})

    def fit(self, X, y=None):
        """Train on interactions; ``y`` is ignored (feedback is implicit)."""
        if isinstance(X, InteractionStore):
            store = X
        else:
            store = store_from_records(as_records(X))
        if not store.is_split:
            if self.min_core > 0:
                store = kcore_filter(store, self.min_core)
            store = split(store, ratios=tuple(self.split_ratios), seed=self.split_seed)
        config = self._config()
        trainer = Trainer(config, store)
        result = trainer.fit()
        self.store_ = store
        self.trainer_ = trainer
        self.model_ = trainer.model
        self.result_ = result
        self.n_users_ = store.n_users
        self.n_items_ = store.n_items
        return self

    def _dense_user(self, user) -> int:
        idx = self.store_.user_index.get(str(user))
        if idx is None:
            raise ValueError(f"unknown user id {user!r} (not seen during fit)")
        return idx

    def _dense_item(self, item) -> int:
        idx = self.store_.item_index.get(str(item))
        if idx is None:
            raise ValueError(f"unknown item id {item!r} (not seen during fit)")
        return idx

    def predict(self, X) -> np.ndarray:
        """Preference scores for (user, item) pairs of raw ids."""
        check_is_fitted(self, "model_")
        users, items = as_user_item_pairs(X)
        return np.array(
            [self.model_.score(self._dense_user(u), self._dense_item(i)) for u, i in zip(users, items)]
        )

    def recommend(self, user, n: int = 10, exclude_seen: bool = True) -> list[str]:
        """Top-n raw item ids for one user, best first."""
        check_is_fitted(self, "model_")
        if n < 1:
            raise ValueError("n must be >= 1")
        u = self._dense_user(user)
        exclude = self.store_.train[u] if exclude_seen else ()
        ranked = rank_all_items(self.model_, u, exclude=exclude)
        return [self.store_.item_ids[int(i)] for i in ranked[:n]]

    def score(self, X=None, y=None) -> float:
        """Test-split NDCG@10 of the fitted model (inputs ignored)."""
        check_is_fitted(self, "result_")
        return float(self.result_.test.ndcg[10])
