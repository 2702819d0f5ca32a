"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .data import DataError, Interaction, InteractionStore, interactions_from_pairs

__all__ = ["as_records", "as_user_item_pairs"]


def as_records(X) -> list[Interaction]:
    """Coerce estimator input to interaction records.

    Accepts a sequence of (user, item[, timestamp]) tuples or a 2-or-3 column
    array; raw ids may be any scalar type and are stringified.
    """
    if isinstance(X, InteractionStore):
        raise TypeError("pass the store itself to fit, not through as_records")
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(
            f"interactions must be (n, 2+) of (user, item[, timestamp]); got shape {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise DataError("empty dataset")
    return interactions_from_pairs([tuple(row) for row in arr])


def as_user_item_pairs(X) -> tuple[list[str], list[str]]:
    """Coerce prediction input to parallel raw user/item id lists."""
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"prediction input must be (n, 2) of (user, item); got shape {arr.shape}")
    users = [str(u) for u in arr[:, 0]]
    items = [str(i) for i in arr[:, 1]]
    return users, items
