"""Shared test fixtures and small builders."""

from __future__ import annotations

import numpy as np
import pytest

from tlens.ingest import Window
from tlens.matrix import TrafficMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_window(src, dst, ts=None, index=0) -> Window:
    """Window from id lists; timestamps default to 0, 1, 2, ..."""
    if ts is None:
        ts = list(range(len(src)))

    def col(values):
        try:
            return np.array(values, dtype=np.uint64)
        except OverflowError:
            out = np.empty(len(values), dtype=object)
            out[:] = values
            return out

    return Window(index, col(ts), col(src), col(dst))


def random_matrix(rng, n_packets=2048, id_space=1 << 20) -> TrafficMatrix:
    src = rng.integers(0, id_space, size=n_packets, dtype=np.uint64)
    dst = rng.integers(0, id_space, size=n_packets, dtype=np.uint64)
    return TrafficMatrix.from_arrays(src, dst)
