"""Shared fixtures and small dataset builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from netchoice.model import Alternative, ChoiceSequence, ChoiceSituation, Dataset


def situation(rows, chosen: int, ids=None) -> ChoiceSituation:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    ids = ids if ids is not None else [str(i) for i in range(len(rows))]
    return ChoiceSituation(tuple(Alternative(i, r) for i, r in zip(ids, rows)), chosen)


def random_dataset(rng: np.random.Generator, n_sequences: int = 6, k: int = 2, max_t: int = 4,
                   max_j: int = 5, scale: float = 1.0) -> Dataset:
    """Small random dataset with varied sequence lengths and set sizes."""
    seqs = []
    for n in range(n_sequences):
        sits = []
        for _ in range(int(rng.integers(1, max_t + 1))):
            J = int(rng.integers(1, max_j + 1))
            sits.append(situation(rng.normal(scale=scale, size=(J, k)), int(rng.integers(J))))
        seqs.append(ChoiceSequence(f"n{n}", tuple(sits)))
    return Dataset(tuple(seqs), tuple(f"x{i + 1}" for i in range(k)))


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(x, dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x, dtype=float)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
