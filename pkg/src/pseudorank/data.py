"""Implicit-feedback interaction data: loading, k-core filtering, splitting, batch sampling.

The store keeps raw-to-dense ID maps (dense ids assigned in first-seen order),
deduplicated interaction records, and per-user train/valid/test item lists.
Ratings are binarized away on load; timestamps, when a fourth column parses,
are kept for provenance only and never influence splits or sampling.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Batch",
    "DataError",
    "Interaction",
    "InteractionStore",
    "kcore_filter",
    "load_interactions",
    "read_prepared",
    "sample_batch",
    "split",
    "store_from_records",
    "write_prepared",
]


class DataError(ValueError):
    """Raised for malformed input files, empty datasets, and unsatisfiable sampling."""


class Interaction(NamedTuple):
    user: str
    item: str
    timestamp: int | None = None


class InteractionStore:
    """Immutable container of interactions with dense ID maps and split lists.

    ``train``/``valid``/``test`` are per-user tuples of ascending dense item
    ids. An unsplit store carries everything in ``train`` with ``is_split``
    False. Treat instances as frozen; all transforms return new stores.
    """

    def __init__(
        self,
        user_ids: Sequence[str],
        item_ids: Sequence[str],
        records: Sequence[Interaction],
        train: Sequence[Sequence[int]],
        valid: Sequence[Sequence[int]] | None = None,
        test: Sequence[Sequence[int]] | None = None,
        is_split: bool = False,
        split_seed: int | None = None,
        split_ratios: tuple[float, float, float] | None = None,
    ):
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        self.user_index = {u: idx for idx, u in enumerate(self.user_ids)}
        self.item_index = {i: idx for idx, i in enumerate(self.item_ids)}
        if len(self.user_index) != len(self.user_ids):
            raise DataError("duplicate raw user ids")
        if len(self.item_index) != len(self.item_ids):
            raise DataError("duplicate raw item ids")
        self.records = tuple(records)
        n = len(self.user_ids)
        empty: tuple[tuple[int, ...], ...] = tuple(() for _ in range(n))
        self.train = tuple(tuple(int(i) for i in row) for row in train)
        self.valid = tuple(tuple(int(i) for i in row) for row in valid) if valid is not None else empty
        self.test = tuple(tuple(int(i) for i in row) for row in test) if test is not None else empty
        if not (len(self.train) == len(self.valid) == len(self.test) == n):
            raise DataError("per-user split lists must cover every user")
        self.is_split = is_split
        self.split_seed = split_seed
        self.split_ratios = split_ratios
        # sampling accelerators over train interactions
        self.train_positive_sets = tuple(frozenset(row) for row in self.train)
        users = []
        items = []
        for u, row in enumerate(self.train):
            users.extend([u] * len(row))
            items.extend(row)
        self._train_users = np.asarray(users, dtype=np.int64)
        self._train_items = np.asarray(items, dtype=np.int64)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.records)

    @property
    def n_train(self) -> int:
        return int(self._train_users.size)

    def user_items(self, u: int) -> tuple[int, ...]:
        """All items of user ``u`` across splits, ascending."""
        return tuple(sorted(set(self.train[u]) | set(self.valid[u]) | set(self.test[u])))

    def stats(self) -> dict:
        n_cells = self.n_users * self.n_items
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "n_train": self.n_train,
            "n_valid": sum(len(r) for r in self.valid),
            "n_test": sum(len(r) for r in self.test),
            "density": self.n_interactions / n_cells if n_cells else 0.0,
            "is_split": self.is_split,
        }

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"InteractionStore(users={self.n_users}, items={self.n_items}, "
            f"interactions={self.n_interactions}, split={self.is_split})"
        )


def store_from_records(records: Sequence[Interaction]) -> InteractionStore:
    """Build an unsplit store; dense ids in first-seen order, duplicates dropped (first kept)."""
    seen: set[tuple[str, str]] = set()
    user_ids: list[str] = []
    item_ids: list[str] = []
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    kept: list[Interaction] = []
    per_user: list[list[int]] = []
    for rec in records:
        key = (rec.user, rec.item)
        if key in seen:
            continue
        seen.add(key)
        if rec.user not in uidx:
            uidx[rec.user] = len(user_ids)
            user_ids.append(rec.user)
            per_user.append([])
        if rec.item not in iidx:
            iidx[rec.item] = len(item_ids)
            item_ids.append(rec.item)
        kept.append(rec)
        per_user[uidx[rec.user]].append(iidx[rec.item])
    if not kept:
        raise DataError("empty dataset")
    train = [sorted(row) for row in per_user]
    return InteractionStore(user_ids, item_ids, kept, train)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _detect_delimiter(line: str) -> str:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    raise DataError("cannot detect delimiter (no tab or comma in first row); pass one explicitly")


def load_interactions(path: str | os.PathLike, delimiter: str | None = None, atomic: bool = False) -> InteractionStore:
    """Load a user-item interaction file into an unsplit store.

    Plain mode: columns user, item[, rating[, timestamp]]; tab or comma
    delimited (auto-detected from the first row unless forced); a non-numeric
    first row over numeric data rows is treated as a header and skipped.
    Atomic mode: first row is a typed header (``name:type`` fields) and the
    user/item columns are located by the names ``user_id``/``item_id``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = [(no + 1, ln) for no, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise DataError("empty dataset")

    first_line = rows[0][1]
    delim = delimiter if delimiter is not None else _detect_delimiter(first_line)

    ucol, icol, tcol = 0, 1, 3
    data_rows = rows
    if atomic:
        header_no, header = rows[0]
        names = [f.split(":")[0].strip() for f in header.split(delim)]
        if "user_id" not in names or "item_id" not in names:
            raise DataError(
                f"line {header_no}: atomic header must name user_id and item_id columns, got {names}"
            )
        ucol, icol = names.index("user_id"), names.index("item_id")
        tcol = names.index("timestamp") if "timestamp" in names else -1
        data_rows = rows[1:]
    else:
        # a header is a non-numeric first row over numeric data; all-string id
        # files are indistinguishable from headers and keep their first row
        fields = first_line.split(delim)
        if len(fields) >= 2 and not (_is_number(fields[0]) and _is_number(fields[1])) and len(rows) > 1:
            nxt = rows[1][1].split(delim)
            if len(nxt) >= 2 and _is_number(nxt[0]) and _is_number(nxt[1]):
                data_rows = rows[1:]

    records: list[Interaction] = []
    for no, ln in data_rows:
        fields = ln.split(delim)
        needed = max(ucol, icol) + 1
        if len(fields) < max(needed, 2):
            raise DataError(f"line {no}: expected at least {max(needed, 2)} columns, got {len(fields)}")
        user = fields[ucol].strip()
        item = fields[icol].strip()
        if not user or not item:
            raise DataError(f"line {no}: blank user or item id")
        ts: int | None = None
        if 0 <= tcol < len(fields):
            tok = fields[tcol].strip()
            if _is_number(tok):
                ts = int(float(tok))
        records.append(Interaction(user, item, ts))
    if not records:
        raise DataError("empty dataset")
    return store_from_records(records)


def kcore_filter(store: InteractionStore, min_interactions: int) -> InteractionStore:
    """Drop users and items with fewer than ``min_interactions``, iterated to a fixpoint.

    Every user and item in the result has at least ``min_interactions``
    interactions. Raises if the fixpoint is empty. Dense ID maps are rebuilt.
    """
    if min_interactions < 0:
        raise ValueError("min_interactions must be >= 0")
    records = list(store.records)
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for rec in records:
            ucount[rec.user] = ucount.get(rec.user, 0) + 1
            icount[rec.item] = icount.get(rec.item, 0) + 1
        kept = [
            rec
            for rec in records
            if ucount[rec.user] >= min_interactions and icount[rec.item] >= min_interactions
        ]
        if not kept:
            raise DataError(f"k-core filter (min_interactions={min_interactions}) emptied the dataset")
        if len(kept) == len(records):
            return store_from_records(kept)
        records = kept


def split(
    store: InteractionStore,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> InteractionStore:
    """Per-user random split into train/valid/test lists.

    For a user with n items: if n < 3 everything goes to train; otherwise the
    test and valid lists each take max(1, floor(ratio * n)) items (0 when the
    ratio is 0), capped so at least one train item always remains, and the
    rest train. Deterministic in ``seed``; a user's items are permuted in
    ascending-id order before assignment.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative floats, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    _, r_valid, r_test = ratios
    rng = np.random.default_rng(seed)
    train: list[tuple[int, ...]] = []
    valid: list[tuple[int, ...]] = []
    test: list[tuple[int, ...]] = []
    for u in range(store.n_users):
        items = np.asarray(store.user_items(u), dtype=np.int64)
        n = items.size
        if n == 0:
            raise DataError(f"user {store.user_ids[u]!r} has no interactions")
        if n < 3:
            train.append(tuple(items.tolist()))
            valid.append(())
            test.append(())
            continue
        perm = items[rng.permutation(n)]
        n_test = max(1, int(r_test * n)) if r_test > 0 else 0
        n_valid = max(1, int(r_valid * n)) if r_valid > 0 else 0
        n_test = min(n_test, n - 1)
        n_valid = min(n_valid, n - 1 - n_test)
        n_train = n - n_valid - n_test
        train.append(tuple(sorted(perm[:n_train].tolist())))
        valid.append(tuple(sorted(perm[n_train : n_train + n_valid].tolist())))
        test.append(tuple(sorted(perm[n_train + n_valid :].tolist())))
    return InteractionStore(
        store.user_ids,
        store.item_ids,
        store.records,
        train,
        valid,
        test,
        is_split=True,
        split_seed=seed,
        split_ratios=tuple(float(r) for r in ratios),
    )


@dataclass
class Batch:
    """One training batch: candidate row b holds user b's positive first, then k-1 negatives."""

    users: np.ndarray  # (B,) int64
    pos_items: np.ndarray  # (B,) int64
    candidates: np.ndarray  # (B, k) int64, candidates[:, 0] == pos_items

    @property
    def size(self) -> int:
        return int(self.users.size)

    @property
    def k(self) -> int:
        return int(self.candidates.shape[1])


# rejected in-batch draws allowed per pair before falling back to the item universe
_FALLBACK_FACTOR = 50


def sample_batch(store: InteractionStore, batch_size: int, k: int, rng: np.random.Generator) -> Batch:
    """Sample (user, positive) pairs and per-pair candidate sets with in-batch negatives.

    Negatives for a pair are drawn uniformly from the batch's positives,
    rejecting the user's own train positives and duplicates; after 50*k
    rejections, draws switch to the full item universe. A pair whose user has
    interacted with too many items to form k distinct candidates is skipped
    and redrawn; the whole call fails if pairs cannot be formed at all.
    """
    if not store.is_split:
        raise DataError("sample_batch needs a split store (train lists drive sampling)")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > store.n_items:
        raise ValueError(f"k={k} exceeds the item universe ({store.n_items})")
    if store.n_train == 0:
        raise DataError("no train interactions to sample from")

    n_pairs = store.n_train
    idx = rng.integers(0, n_pairs, size=batch_size)
    users = store._train_users[idx].copy()
    pos = store._train_items[idx].copy()
    pos_sets = store.train_positive_sets

    # skip-and-resample pairs whose user cannot yield k distinct candidates
    skips = 0
    max_skips = _FALLBACK_FACTOR * batch_size
    for b in range(batch_size):
        while store.n_items - len(pos_sets[users[b]]) < k - 1:
            skips += 1
            if skips > max_skips:
                raise DataError(
                    "cannot form candidate sets: every sampled user has interacted "
                    f"with more than n_items - (k-1) items (k={k})"
                )
            j = int(rng.integers(0, n_pairs))
            users[b] = store._train_users[j]
            pos[b] = store._train_items[j]

    candidates = np.empty((batch_size, k), dtype=np.int64)
    candidates[:, 0] = pos
    limit = _FALLBACK_FACTOR * k
    for b in range(batch_size):
        u = int(users[b])
        own = pos_sets[u]
        chosen = {int(pos[b])}
        fill = 1
        rejections = 0
        # phase 1: in-batch positives, optimistic first draw
        for cand in pos[rng.integers(0, batch_size, size=k - 1)]:
            c = int(cand)
            if c in chosen or c in own:
                rejections += 1
            else:
                chosen.add(c)
                candidates[b, fill] = c
                fill += 1
        if fill < k and rejections < limit:
            for cand in pos[rng.integers(0, batch_size, size=limit)]:
                c = int(cand)
                if c in chosen or c in own:
                    rejections += 1
                    if rejections >= limit:
                        break
                else:
                    chosen.add(c)
                    candidates[b, fill] = c
                    fill += 1
                    if fill == k:
                        break
        # phase 2: uniform over the item universe
        if fill < k:
            universe_rejections = 0
            while fill < k and universe_rejections < limit:
                for cand in rng.integers(0, store.n_items, size=64):
                    c = int(cand)
                    if c in chosen or c in own:
                        universe_rejections += 1
                        if universe_rejections >= limit:
                            break
                    else:
                        chosen.add(c)
                        candidates[b, fill] = c
                        fill += 1
                        if fill == k:
                            break
            if fill < k:
                # guaranteed-termination path: explicit eligible complement
                blocked = np.fromiter(own | chosen, dtype=np.int64)
                eligible = np.setdiff1d(np.arange(store.n_items, dtype=np.int64), blocked)
                picked = rng.choice(eligible, size=k - fill, replace=False)
                candidates[b, fill:] = picked
                fill = k
    return Batch(users=users, pos_items=pos, candidates=candidates)


# ---------------------------------------------------------------------------
# prepared-directory round trip (used by the CLI)

_MANIFEST = "split_manifest.tsv"
_IDMAPS = "id_maps.json"
_STATS = "stats.json"


def write_prepared(store: InteractionStore, out_dir: str | os.PathLike) -> None:
    """Write a split store as a prepared directory: manifest, ID maps, stats."""
    if not store.is_split:
        raise DataError("write_prepared needs a split store")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, _MANIFEST), "w", encoding="utf-8") as fh:
        for name, rows in (("train", store.train), ("valid", store.valid), ("test", store.test)):
            for u, row in enumerate(rows):
                for i in row:
                    fh.write(f"{u}\t{i}\t{name}\n")
    id_maps = {
        "user_ids": list(store.user_ids),
        "item_ids": list(store.item_ids),
        "split_seed": store.split_seed,
        "split_ratios": list(store.split_ratios) if store.split_ratios else None,
    }
    with open(os.path.join(out_dir, _IDMAPS), "w", encoding="utf-8") as fh:
        json.dump(id_maps, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, _STATS), "w", encoding="utf-8") as fh:
        json.dump(store.stats(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_prepared(in_dir: str | os.PathLike) -> InteractionStore:
    """Rebuild a split store from a prepared directory."""
    in_dir = os.fspath(in_dir)
    manifest = os.path.join(in_dir, _MANIFEST)
    idmaps = os.path.join(in_dir, _IDMAPS)
    if not os.path.exists(manifest) or not os.path.exists(idmaps):
        raise DataError(f"not a prepared data directory: {in_dir}")
    with open(idmaps, "r", encoding="utf-8") as fh:
        maps = json.load(fh)
    user_ids = list(maps["user_ids"])
    item_ids = list(maps["item_ids"])
    lists: dict[str, list[list[int]]] = {
        name: [[] for _ in user_ids] for name in ("train", "valid", "test")
    }
    records: list[Interaction] = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for no, ln in enumerate(fh, start=1):
            ln = ln.rstrip("\n")
            if not ln:
                continue
            fields = ln.split("\t")
            if len(fields) != 3 or fields[2] not in lists:
                raise DataError(f"{manifest}: line {no}: malformed manifest row")
            u, i = int(fields[0]), int(fields[1])
            if not (0 <= u < len(user_ids)) or not (0 <= i < len(item_ids)):
                raise DataError(f"{manifest}: line {no}: id out of range")
            lists[fields[2]][u].append(i)
            records.append(Interaction(user_ids[u], item_ids[i]))
    if not records:
        raise DataError("empty dataset")
    ratios = maps.get("split_ratios")
    return InteractionStore(
        user_ids,
        item_ids,
        records,
        [sorted(r) for r in lists["train"]],
        [sorted(r) for r in lists["valid"]],
        [sorted(r) for r in lists["test"]],
        is_split=True,
        split_seed=maps.get("split_seed"),
        split_ratios=tuple(ratios) if ratios else None,
    )


def interactions_from_pairs(pairs: Iterable[tuple]) -> list[Interaction]:
    """Coerce (user, item[, timestamp]) tuples with arbitrary scalar types to records."""
    records = []
    for p in pairs:
        if len(p) < 2:
            raise DataError(f"need (user, item) pairs, got {p!r}")
        ts = int(p[2]) if len(p) > 2 and p[2] is not None else None
        records.append(Interaction(str(p[0]), str(p[1]), ts))
    return records
