"""Full-ranking top-K evaluation: hit rate, recall, and NDCG with binary relevance.

Every held-out user is scored against the whole item universe; items the model
saw in training (and validation items when evaluating the test split) are
masked out before ranking. DCG discounts a hit at 1-based rank j by
1 / log2(j + 1); the ideal DCG packs all positives at the top.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvalResult", "dcg_at_k", "evaluate", "ideal_dcg", "metrics_at_k", "rank_all_items"]


def rank_all_items(model, u: int, exclude=()) -> np.ndarray:
    """All item ids ranked for user ``u``, best first; excluded ids dropped.

    Ties break by ascending item id (stable sort on descending score).
    """
    scores = model.scores_for_user(u).copy()
    exclude = np.asarray(sorted(exclude), dtype=np.int64)
    if exclude.size:
        if exclude.min() < 0 or exclude.max() >= scores.size:
            raise IndexError("excluded item id out of range")
        scores[exclude] = -np.inf
    ranked = np.argsort(-scores, kind="stable")
    if exclude.size:
        ranked = ranked[: scores.size - exclude.size]
    return ranked


def dcg_at_k(hits: np.ndarray, k: int) -> float:
    """DCG of a binary hit vector over the first k ranks."""
    h = np.asarray(hits[:k], dtype=np.float64)
    if h.size == 0:
        return 0.0
    ranks = np.arange(1, h.size + 1, dtype=np.float64)
    return float(np.sum(h / np.log2(ranks + 1.0)))


def ideal_dcg(n_positives: int, k: int) -> float:
    """Best achievable DCG at cutoff k with ``n_positives`` relevant items."""
    m = min(n_positives, k)
    if m == 0:
        return 0.0
    ranks = np.arange(1, m + 1, dtype=np.float64)
    return float(np.sum(1.0 / np.log2(ranks + 1.0)))


def metrics_at_k(ranked: np.ndarray, positives, k: int) -> tuple[float, float, float]:
    """(hit rate, recall, NDCG) at cutoff ``k`` for one ranked list.

    ``ranked`` is a ranked item-id array (best first); ``positives`` the
    user's held-out items. Hit rate is 1 if any positive appears in the top
    k; recall is the fraction of positives retrieved; NDCG normalizes by the
    ideal DCG.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = set(int(p) for p in positives)
    if not pos:
        raise ValueError("metrics need at least one positive item")
    top = np.asarray(ranked[:k], dtype=np.int64)
    hits = np.fromiter((1.0 if int(i) in pos else 0.0 for i in top), dtype=np.float64, count=top.size)
    n_hit = float(hits.sum())
    hr = 1.0 if n_hit > 0 else 0.0
    recall = n_hit / len(pos)
    ndcg = dcg_at_k(hits, k) / ideal_dcg(len(pos), k)
    return hr, recall, ndcg


@dataclass
class EvalResult:
    """Mean ranking metrics over all evaluated users, keyed by cutoff."""

    split: str
    n_users: int
    hr: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        """One JSON-friendly row per cutoff."""
        return [
            {
                "split": self.split,
                "k": k,
                "hr": self.hr[k],
                "recall": self.recall[k],
                "ndcg": self.ndcg[k],
                "n_users": self.n_users,
            }
            for k in sorted(self.hr)
        ]


def evaluate(model, store, split: str = "valid", ks=(10, 20)) -> EvalResult:
    """Full-ranking evaluation of one split, averaged over users with positives.

    Train items are always masked from the ranking; when ``split`` is "test",
    validation items are masked too. Users without positives in the split are
    skipped (and do not dilute the means).
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    held = store.valid if split == "valid" else store.test
    eval_users = [u for u in range(store.n_users) if held[u]]
    if not eval_users:
        raise ValueError(f"no users with {split} positives to evaluate")
    k_max = ks[-1]
    discounts = 1.0 / np.log2(np.arange(2, k_max + 2, dtype=np.float64))
    idcg_cum = np.concatenate([[0.0], np.cumsum(discounts)])

    hr_sum = {k: 0.0 for k in ks}
    rec_sum = {k: 0.0 for k in ks}
    ndcg_sum = {k: 0.0 for k in ks}
    users_arr = np.asarray(eval_users, dtype=np.int64)
    # chunked so the (users x items) score matrix stays modest
    chunk = max(1, min(len(eval_users), 512))
    for start in range(0, users_arr.size, chunk):
        block = users_arr[start : start + chunk]
        scores = model.user_emb.values[block] @ model.item_emb.values.T
        for row, u in enumerate(block):
            u = int(u)
            masked = set(store.train[u])
            if split == "test":
                masked |= set(store.valid[u])
            s = scores[row]
            if masked:
                s = s.copy()
                s[sorted(masked)] = -np.inf
            top = np.argsort(-s, kind="stable")[:k_max]
            pos = set(held[u])
            hits = np.fromiter((1.0 if int(i) in pos else 0.0 for i in top), dtype=np.float64, count=top.size)
            hit_cum = np.cumsum(hits)
            dcg_cum = np.cumsum(hits * discounts[: top.size])
            for k in ks:
                j = min(k, top.size)
                n_hit = hit_cum[j - 1] if j else 0.0
                hr_sum[k] += 1.0 if n_hit > 0 else 0.0
                rec_sum[k] += n_hit / len(pos)
                ndcg_sum[k] += (dcg_cum[j - 1] if j else 0.0) / idcg_cum[min(k, len(pos))]
    n = len(eval_users)
    return EvalResult(
        split=split,
        n_users=n,
        hr={k: float(hr_sum[k] / n) for k in ks},
        recall={k: float(rec_sum[k] / n) for k in ks},
        ndcg={k: float(ndcg_sum[k] / n) for k in ks},
    )
