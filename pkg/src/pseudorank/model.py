"""Scoring model: embedding tables, candidate-ranking MLP, and the noise-injection net.

Preference scores are dot products of user and item embeddings. A separate
one-hidden-layer MLP scores (user, item-embedding) pairs to produce the
pseudo-ranking of each candidate set; it receives no gradient from the main
ranking loss (the ordering is treated as a constant there) and is trained
purely by the noise-supervision loss. The noise net maps a user embedding to
a Gaussian (mean, log-variance) and draws perturbations by reparameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Mlp, MlpTape, ParameterTensor, xavier_init

__all__ = [
    "EmbeddingModel",
    "NoiseNet",
    "NoiseSample",
    "NoisyTriple",
    "PseudoRanking",
    "RankerNet",
    "build_noisy_triples",
    "inject_noise",
    "pseudo_rank",
    "rank_candidates",
    "reparameterize",
]

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


class EmbeddingModel:
    """User and item embedding tables scored by dot product."""

    def __init__(self, n_users: int, n_items: int, dim: int):
        if min(n_users, n_items, dim) < 1:
            raise ValueError("n_users, n_items and dim must all be >= 1")
        self.n_users = n_users
        self.n_items = n_items
        self.dim = dim
        self.user_emb = ParameterTensor("user_emb", (n_users, dim))
        self.item_emb = ParameterTensor("item_emb", (n_items, dim))

    @property
    def params(self) -> list[ParameterTensor]:
        return [self.user_emb, self.item_emb]

    def init_params(self, rng: np.random.Generator) -> None:
        xavier_init(self.user_emb, self.dim, self.dim, rng)
        xavier_init(self.item_emb, self.dim, self.dim, rng)

    def _check_user(self, u: int) -> None:
        if not (0 <= u < self.n_users):
            raise IndexError(f"user id {u} out of range [0, {self.n_users})")

    def score(self, u: int, i: int) -> float:
        """Preference score of user ``u`` for item ``i``."""
        self._check_user(u)
        if not (0 <= i < self.n_items):
            raise IndexError(f"item id {i} out of range [0, {self.n_items})")
        return float(self.user_emb.values[u] @ self.item_emb.values[i])

    def score_embedding(self, u: int, e: np.ndarray) -> float:
        """Score user ``u`` against an arbitrary embedding vector (e.g. a noisy one)."""
        self._check_user(u)
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (self.dim,):
            raise ValueError(f"embedding must have shape ({self.dim},), got {e.shape}")
        return float(self.user_emb.values[u] @ e)

    def scores_for_user(self, u: int) -> np.ndarray:
        """Scores of user ``u`` against every item, shape (n_items,)."""
        self._check_user(u)
        return self.item_emb.values @ self.user_emb.values[u]


@dataclass
class PseudoRanking:
    """Descending-score ordering of one candidate set.

    ``items[r]`` is the item at rank r (0-based); ``position(i)`` returns the
    1-based rank of item ``i``.
    """

    items: np.ndarray
    scores: np.ndarray

    def position(self, item: int) -> int:
        where = np.nonzero(self.items == item)[0]
        if where.size == 0:
            raise KeyError(f"item {item} not in this candidate set")
        return int(where[0]) + 1


def rank_candidates(scores: np.ndarray, candidates: np.ndarray, pin_positive: bool = True) -> np.ndarray:
    """Order candidate rows by descending score, ties broken by ascending item id.

    ``scores`` and ``candidates`` have shape (B, k); returns the ordered item
    matrix. With ``pin_positive`` the first column (the known positive) keeps
    rank 1 and only the remaining columns are sorted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.int64)
    if scores.shape != candidates.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and candidates {candidates.shape} must match as (B, k)")
    if not np.all(np.isfinite(scores)):
        raise ValueError("candidate scores must be finite")
    if pin_positive:
        body_scores, body_items = scores[:, 1:], candidates[:, 1:]
    else:
        body_scores, body_items = scores, candidates
    # lexsort: last key is primary; descending score, then ascending item id
    order = np.lexsort((body_items, -body_scores), axis=1)
    ordered_body = np.take_along_axis(body_items, order, axis=1)
    if pin_positive:
        return np.concatenate([candidates[:, :1], ordered_body], axis=1)
    return ordered_body


def pseudo_rank(scores: np.ndarray, items: np.ndarray, pin_positive: bool = True) -> PseudoRanking:
    """Rank one candidate set; ``items[0]`` is the known positive when pinning."""
    scores = np.asarray(scores, dtype=np.float64).reshape(1, -1)
    items = np.asarray(items, dtype=np.int64).reshape(1, -1)
    if items.shape[1] < 1:
        raise ValueError("candidate set is empty")
    if len(np.unique(items)) != items.shape[1]:
        raise ValueError("candidate items must be distinct")
    ordered = rank_candidates(scores, items, pin_positive=pin_positive)[0]
    lookup = {int(it): s for it, s in zip(items[0], scores[0])}
    return PseudoRanking(items=ordered, scores=np.array([lookup[int(i)] for i in ordered]))


class RankerNet:
    """Shared MLP scoring (user embedding, item embedding) pairs for pseudo-ranking."""

    def __init__(self, dim: int, activation: str = "relu"):
        self.dim = dim
        self.mlp = Mlp("ranker", 2 * dim, dim, 1, activation=activation)

    @property
    def params(self) -> list[ParameterTensor]:
        return self.mlp.params

    def init_params(self, rng: np.random.Generator) -> None:
        self.mlp.init_params(rng)

    def scores_embeddings(
        self, model: EmbeddingModel, users: np.ndarray, embs: np.ndarray
    ) -> tuple[np.ndarray, MlpTape]:
        """Score each of m embeddings per user: embs (B, m, d) -> scores (B, m)."""
        users = np.asarray(users, dtype=np.int64)
        embs = np.asarray(embs, dtype=np.float64)
        if embs.ndim != 3 or embs.shape[2] != self.dim or embs.shape[0] != users.size:
            raise ValueError(f"expected embeddings of shape (B, m, {self.dim}), got {embs.shape}")
        batch, m, d = embs.shape
        e_u = np.repeat(model.user_emb.values[users], m, axis=0)  # (B*m, d)
        x = np.concatenate([e_u, embs.reshape(batch * m, d)], axis=1)
        y, tape = self.mlp.forward(x)
        return y.reshape(batch, m), tape

    def scores_items(
        self, model: EmbeddingModel, users: np.ndarray, items: np.ndarray
    ) -> tuple[np.ndarray, MlpTape]:
        """Score candidate items per user: items (B, k) -> scores (B, k)."""
        items = np.asarray(items, dtype=np.int64)
        return self.scores_embeddings(model, users, model.item_emb.values[items])

    def backward_scores(self, tape: MlpTape, d_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Backprop (B, m) score gradients; returns (d_user (B, d), d_embs (B, m, d)).

        Parameter gradients accumulate into the MLP tensors; d_user sums the
        per-slot user-embedding gradients.
        """
        d_scores = np.asarray(d_scores, dtype=np.float64)
        batch, m = d_scores.shape
        dx = self.mlp.backward(tape, d_scores.reshape(batch * m, 1))
        dx = dx.reshape(batch, m, 2 * self.dim)
        d_user = dx[:, :, : self.dim].sum(axis=1)
        d_embs = dx[:, :, self.dim :]
        return d_user, d_embs


def reparameterize(mu: np.ndarray, sigma: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Gaussian draw as a deterministic function of standard noise: mu + sigma * eta."""
    if mu.shape != sigma.shape or mu.shape != eta.shape:
        raise ValueError("mu, sigma and eta must share a shape")
    return mu + sigma * eta


@dataclass
class NoiseSample:
    """One reparameterized draw per user, with tapes for the backward pass."""

    users: np.ndarray  # (B,)
    mu: np.ndarray  # (B, d)
    logvar: np.ndarray  # (B, d), clamped
    sigma: np.ndarray  # (B, d)
    eta: np.ndarray  # (B, d) standard normal input
    epsilon: np.ndarray  # (B, d) = mu + sigma * eta
    tape_mu: MlpTape
    tape_logvar: MlpTape
    unclamped: np.ndarray  # (B, d) bool, True where the clamp passed values through


class NoiseNet:
    """User-conditioned Gaussian perturbation: mu = f(e_u), logvar = g(mu), clamped.

    The log-variance head reads the mean head's output. The clamp to
    [-10, 10] blocks gradient on saturated coordinates.
    """

    def __init__(self, dim: int, activation: str = "relu"):
        self.dim = dim
        self.mlp_mu = Mlp("noise_mu", dim, dim, dim, activation=activation)
        self.mlp_logvar = Mlp("noise_logvar", dim, dim, dim, activation=activation)

    @property
    def params(self) -> list[ParameterTensor]:
        return self.mlp_mu.params + self.mlp_logvar.params

    def init_params(self, rng: np.random.Generator) -> None:
        self.mlp_mu.init_params(rng)
        self.mlp_logvar.init_params(rng)

    def sample(
        self,
        model: EmbeddingModel,
        users: np.ndarray,
        rng: np.random.Generator | None = None,
        eta: np.ndarray | None = None,
    ) -> NoiseSample:
        """Draw one perturbation per user; pass ``eta`` to freeze the stochastic input."""
        users = np.asarray(users, dtype=np.int64)
        e_u = model.user_emb.values[users]
        mu, tape_mu = self.mlp_mu.forward(e_u)
        raw_logvar, tape_logvar = self.mlp_logvar.forward(mu)
        unclamped = (raw_logvar > LOGVAR_MIN) & (raw_logvar < LOGVAR_MAX)
        logvar = np.clip(raw_logvar, LOGVAR_MIN, LOGVAR_MAX)
        sigma = np.exp(0.5 * logvar)
        if eta is None:
            if rng is None:
                raise ValueError("sample needs either rng or a frozen eta")
            eta = rng.standard_normal(size=mu.shape)
        else:
            eta = np.asarray(eta, dtype=np.float64)
            if eta.shape != mu.shape:
                raise ValueError(f"eta must have shape {mu.shape}, got {eta.shape}")
        epsilon = reparameterize(mu, sigma, eta)
        return NoiseSample(
            users=users,
            mu=mu,
            logvar=logvar,
            sigma=sigma,
            eta=eta,
            epsilon=epsilon,
            tape_mu=tape_mu,
            tape_logvar=tape_logvar,
            unclamped=unclamped,
        )

    def backward(self, sample: NoiseSample, d_epsilon: np.ndarray) -> np.ndarray:
        """Backprop through epsilon = mu + exp(logvar/2) * eta; returns d(user embedding)."""
        d_epsilon = np.asarray(d_epsilon, dtype=np.float64)
        if d_epsilon.shape != sample.mu.shape:
            raise ValueError(f"d_epsilon must have shape {sample.mu.shape}")
        d_mu = d_epsilon.copy()
        d_sigma = d_epsilon * sample.eta
        d_logvar = 0.5 * sample.sigma * d_sigma * sample.unclamped
        d_mu += self.mlp_logvar.backward(sample.tape_logvar, d_logvar)
        return self.mlp_mu.backward(sample.tape_mu, d_mu)


def inject_noise(e: np.ndarray, epsilon: np.ndarray, theta: float) -> np.ndarray:
    """Perturbed embedding e + theta * epsilon; theta = 0 returns e bit-exactly."""
    e = np.asarray(e, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if e.shape != epsilon.shape:
        raise ValueError(f"embedding {e.shape} and noise {epsilon.shape} widths differ")
    if theta < 0:
        raise ValueError("noise scale theta must be >= 0")
    if theta == 0.0:
        return e.copy()
    return e + theta * epsilon


@dataclass
class NoisyTriple:
    """Noise-scaled copies of each user's positive-item embedding, in ground-truth order.

    ``embeddings[b, m]`` is the positive's embedding perturbed at scale
    ``thetas[m]``; ascending theta defines the supervision order (slot 0 is
    the clean embedding and should score highest).
    """

    users: np.ndarray  # (B,)
    base_items: np.ndarray  # (B,)
    thetas: tuple[float, ...]
    embeddings: np.ndarray  # (B, len(thetas), d)
    sample: NoiseSample


def build_noisy_triples(
    noise_net: NoiseNet,
    model: EmbeddingModel,
    users: np.ndarray,
    pos_items: np.ndarray,
    thetas: tuple[float, ...] = (0.0, 0.01, 0.1),
    rng: np.random.Generator | None = None,
    eta: np.ndarray | None = None,
) -> NoisyTriple:
    """Build the noise-supervision candidate set for each (user, positive) pair."""
    if len(thetas) < 2:
        raise ValueError("need at least two noise scales")
    if any(t < 0 for t in thetas):
        raise ValueError("noise scales must be >= 0")
    if any(a >= b for a, b in zip(thetas, thetas[1:])):
        raise ValueError(f"noise scales must be strictly increasing, got {thetas}")
    users = np.asarray(users, dtype=np.int64)
    pos_items = np.asarray(pos_items, dtype=np.int64)
    if users.shape != pos_items.shape or users.ndim != 1:
        raise ValueError("users and pos_items must be matching 1-D arrays")
    sample = noise_net.sample(model, users, rng=rng, eta=eta)
    e_p = model.item_emb.values[pos_items]  # (B, d)
    embs = np.empty((users.size, len(thetas), model.dim), dtype=np.float64)
    for m, theta in enumerate(thetas):
        embs[:, m, :] = inject_noise(e_p, sample.epsilon, theta)
    return NoisyTriple(
        users=users,
        base_items=pos_items,
        thetas=tuple(float(t) for t in thetas),
        embeddings=embs,
        sample=sample,
    )
