"""Shared fixtures: small deterministic stores and trainers."""

import numpy as np
import pytest

from pseudorank.data import Interaction, split, store_from_records
from pseudorank.synth import synthetic_store
from pseudorank.training import TrainConfig, Trainer

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the one-line acceptance verdicts after the test summary."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pairs_store(pairs, **split_kwargs):
    """Split store from raw (user, item) string pairs."""
    store = store_from_records([Interaction(str(u), str(i)) for u, i in pairs])
    return split(store, **split_kwargs)


@pytest.fixture(scope="session")
def tiny_store():
    """Small synthetic split store shared by training-level tests."""
    base = synthetic_store(seed=7, n_users=30, n_items=60, min_degree=6, max_degree=14, latent_dim=6)
    return split(base, seed=7)


@pytest.fixture()
def tiny_trainer(tiny_store):
    cfg = TrainConfig(embedding_dim=8, batch_size=16, k=4, beta=0.5, epochs=2, seed=3)
    return Trainer(cfg, tiny_store)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(42)
