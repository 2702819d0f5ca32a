"""Deterministic synthetic implicit-feedback corpora with planted low-rank structure.

Users and items get latent factors plus an item popularity offset; each user
interacts with the items winning a Gumbel-perturbed affinity top-n draw, which
samples without replacement proportionally to softmax(affinity / temperature).
A dot-product model can therefore genuinely learn these datasets, making them
usable for desk-scale end-to-end checks when no real dataset ships with the
environment.
"""

from __future__ import annotations

import os

import numpy as np

from .data import Interaction, InteractionStore, store_from_records

__all__ = ["synthetic_interactions", "synthetic_store", "write_interactions_tsv"]


def synthetic_interactions(
    n_users: int = 250,
    n_items: int = 400,
    latent_dim: int = 12,
    min_degree: int = 20,
    max_degree: int = 80,
    temperature: float = 0.35,
    popularity_scale: float = 0.6,
    seed: int = 0,
) -> list[Interaction]:
    """Generate (user, item) records; deterministic in ``seed``."""
    if n_users < 1 or n_items < 2:
        raise ValueError("need at least 1 user and 2 items")
    if not (1 <= min_degree <= max_degree <= n_items):
        raise ValueError("need 1 <= min_degree <= max_degree <= n_items")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_users, latent_dim)) / np.sqrt(latent_dim)
    w = rng.standard_normal((n_items, latent_dim)) / np.sqrt(latent_dim)
    pop = popularity_scale * rng.standard_normal(n_items)
    affinity = z @ w.T + pop  # (n_users, n_items)
    degrees = rng.integers(min_degree, max_degree + 1, size=n_users)
    records: list[Interaction] = []
    for u in range(n_users):
        gumbel = -np.log(-np.log(rng.uniform(size=n_items)))
        keys = affinity[u] / temperature + gumbel
        top = np.argsort(-keys, kind="stable")[: degrees[u]]
        for i in top:
            records.append(Interaction(f"u{u}", f"i{int(i)}"))
    return records


def synthetic_store(seed: int = 0, **kwargs) -> InteractionStore:
    """Unsplit store over a synthetic corpus."""
    return store_from_records(synthetic_interactions(seed=seed, **kwargs))


def write_interactions_tsv(records, path: str | os.PathLike) -> None:
    """Write records as user<TAB>item[<TAB>rating<TAB>timestamp] rows."""
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        for rec in records:
            if rec.timestamp is not None:
                fh.write(f"{rec.user}\t{rec.item}\t1\t{rec.timestamp}\n")
            else:
                fh.write(f"{rec.user}\t{rec.item}\n")
