"""Ranking losses, pairwise baseline loss, and gradient-density confidence weights.

The listwise loss sums softplus(s[v+1] - s[v]) over consecutive ranks of a
descending-ordered candidate list; each term's sigmoid gap g = sigmoid(delta)
doubles as both the term's score gradient magnitude and the statistic that the
confidence histogram bins. All numerics are float64 with overflow-stable
softplus / sigmoid / log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfidenceProfile",
    "bpr_loss",
    "confidence_weights",
    "log_sum_exp",
    "max_form_ranking_terms",
    "noise_supervision_loss",
    "ranking_loss",
    "sigmoid",
    "softplus",
    "total_loss",
    "weighted_ranking_loss",
]

CONFIDENCE_BINS = 10


def softplus(x) -> np.ndarray:
    """log(1 + exp(x)), stable for large |x|: max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x) -> np.ndarray:
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sum_exp(x, axis: int = -1) -> np.ndarray:
    """Stable log(sum(exp(x))) along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def bpr_loss(s_pos, s_neg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise loss -ln sigmoid(s_pos - s_neg) with its score gradients.

    Returns (loss, d_pos, d_neg) elementwise; d_pos = -sigmoid(s_neg - s_pos),
    d_neg = -d_pos.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if not (np.all(np.isfinite(s_pos)) and np.all(np.isfinite(s_neg))):
        raise ValueError("pairwise loss needs finite scores")
    delta = s_neg - s_pos
    loss = softplus(delta)
    g = sigmoid(delta)
    return loss, -g, g


def ranking_loss(ordered_scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unweighted consecutive-pair loss over rows of descending-rank scores.

    ``ordered_scores`` has shape (..., k), k >= 2, rank order along the last
    axis. Returns (loss summed per row (...,), d_scores (..., k),
    g (..., k-1)) where g[v] = sigmoid(s[v+1] - s[v]).
    """
    s = np.asarray(ordered_scores, dtype=np.float64)
    if s.shape[-1] < 2:
        raise ValueError("ranking loss needs at least two candidates per row")
    if not np.all(np.isfinite(s)):
        raise ValueError("ranking loss needs finite scores")
    delta = s[..., 1:] - s[..., :-1]
    g = sigmoid(delta)
    loss = softplus(delta).sum(axis=-1)
    d = np.zeros_like(s)
    d[..., :-1] -= g
    d[..., 1:] += g
    return loss, d, g


@dataclass
class ConfidenceProfile:
    """Per-batch histogram of sigmoid gaps; alpha(g) = fraction of the pool in g's bin.

    Bins are equal-width over [0, max of the pool]. A pool of all zeros (or a
    profile built with max_g == 0) weights everything 1.
    """

    counts: np.ndarray  # (bins,) int64
    max_g: float
    total: int
    bins: int = CONFIDENCE_BINS

    def bin_index(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if self.max_g <= 0.0:
            return np.zeros(g.shape, dtype=np.int64)
        idx = np.floor(g / self.max_g * self.bins).astype(np.int64)
        return np.minimum(idx, self.bins - 1)

    def alpha(self, g) -> np.ndarray:
        """Confidence weight for each gap; constant 1 when the pool max is 0."""
        g = np.asarray(g, dtype=np.float64)
        if self.max_g <= 0.0:
            return np.ones_like(g)
        return self.counts[self.bin_index(g)] / self.total


def confidence_weights(pool) -> ConfidenceProfile:
    """Histogram a flat pool of sigmoid gaps into the confidence profile."""
    pool = np.asarray(pool, dtype=np.float64).ravel()
    if pool.size == 0:
        raise ValueError("confidence pool is empty")
    if np.any(pool < 0.0) or np.any(pool > 1.0) or not np.all(np.isfinite(pool)):
        raise ValueError("sigmoid gaps must lie in [0, 1]")
    max_g = float(pool.max())
    counts = np.zeros(CONFIDENCE_BINS, dtype=np.int64)
    if max_g > 0.0:
        idx = np.minimum(
            np.floor(pool / max_g * CONFIDENCE_BINS).astype(np.int64), CONFIDENCE_BINS - 1
        )
        np.add.at(counts, idx, 1)
    return ConfidenceProfile(counts=counts, max_g=max_g, total=int(pool.size))


def weighted_ranking_loss(
    ordered_scores, profile: ConfidenceProfile | None = None, alphas=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Confidence-weighted consecutive-pair loss.

    Weights come from ``alphas`` (shape (..., k-1)) when given, else from
    ``profile.alpha(g)``, else all ones. The weights are treated as constants:
    gradients do not flow through the histogram. Returns (loss per row,
    d_scores, g, alphas).
    """
    s = np.asarray(ordered_scores, dtype=np.float64)
    _, _, g = ranking_loss(s)
    if alphas is None:
        alphas = profile.alpha(g) if profile is not None else np.ones_like(g)
    else:
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.shape != g.shape:
            raise ValueError(f"alphas must have shape {g.shape}, got {alphas.shape}")
    delta = s[..., 1:] - s[..., :-1]
    terms = alphas * softplus(delta)
    loss = terms.sum(axis=-1)
    wg = alphas * g
    d = np.zeros_like(s)
    d[..., :-1] -= wg
    d[..., 1:] += wg
    return loss, d, g, alphas


def noise_supervision_loss(
    ranker,
    noise_net,
    model,
    triple,
    profile: ConfidenceProfile | None = None,
    alphas=None,
    use_confidence: bool = True,
    grad_scale: float | None = None,
):
    """Ranking loss over a noisy triple's ranker scores in ground-truth order.

    Scores each perturbed embedding with the ranker, applies the weighted
    consecutive-pair loss in ascending-theta order, and (when ``grad_scale``
    is given) backpropagates ``grad_scale`` times the loss gradient into the
    ranker, the noise net, and the embedding tables. The confidence profile
    defaults to one built from this loss's own batch pool; explicit
    ``alphas`` freeze the weights instead (the gradient checker needs that).

    Returns (loss_sum, g, alphas, scores).
    """
    scores, tape = ranker.scores_embeddings(model, triple.users, triple.embeddings)
    if alphas is None and use_confidence and profile is None:
        _, _, g = ranking_loss(scores)
        profile = confidence_weights(g.ravel())
    loss, d_scores, g, alphas = weighted_ranking_loss(
        scores, profile=profile if use_confidence else None, alphas=alphas
    )
    loss_sum = float(loss.sum())
    if grad_scale is not None:
        d_user, d_embs = ranker.backward_scores(tape, grad_scale * d_scores)
        np.add.at(model.user_emb.grad, triple.users, d_user)
        np.add.at(model.item_emb.grad, triple.base_items, d_embs.sum(axis=1))
        thetas = np.asarray(triple.thetas, dtype=np.float64)
        d_epsilon = np.einsum("m,bmd->bd", thetas, d_embs)
        d_user_noise = noise_net.backward(triple.sample, d_epsilon)
        np.add.at(model.user_emb.grad, triple.users, d_user_noise)
    return loss_sum, g, alphas, scores


def total_loss(main_sum: float, lp_sum: float, beta: float, batch_size: int) -> tuple[float, float, float]:
    """Combine batch loss sums into per-pair means: total = main/B + beta * lp/B."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    main_mean = main_sum / batch_size
    lp_mean = lp_sum / batch_size
    return main_mean + beta * lp_mean, main_mean, lp_mean


def max_form_ranking_terms(scores) -> np.ndarray:
    """Per-candidate terms softplus(max of the other scores - own score).

    The hardest-rival form of the listwise objective; at k = 2 each term is
    exactly the pairwise loss. Used by the verification checks.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need a 1-D score vector with at least two entries")
    order = np.argsort(-s, kind="stable")
    top, second = s[order[0]], s[order[1]]
    rival = np.full_like(s, top)
    rival[order[0]] = second
    return softplus(rival - s)
