"""Shared dataset builders for the test suite."""

import numpy as np
import pytest

from strata_bounds import dataset_from_arrays


def build_dataset(y, s, d, blocks, x=None):
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=np.int64)
    return dataset_from_arrays(np.where(s == 1, y, np.nan), s, d, blocks, x=x)


def hand_arrays():
    """10 treated (8 observed, y=1..8) and 10 controls (6 observed, y=1..6)."""
    y = list(range(1, 9)) + [0, 0] + list(range(1, 7)) + [0, 0, 0, 0]
    s = [1] * 8 + [0] * 2 + [1] * 6 + [0] * 4
    d = [1] * 10 + [0] * 10
    blocks = ["a"] * 20
    return np.array(y, float), np.array(s), np.array(d), blocks


@pytest.fixture
def hand_dataset():
    y, s, d, blocks = hand_arrays()
    return build_dataset(y, s, d, blocks)


@pytest.fixture
def two_block_dataset():
    """Blocks (size 4, 1 treated) and (size 6, 3 treated); all observed."""
    y = np.arange(1.0, 11.0)
    s = np.ones(10, dtype=int)
    d = np.array([1, 0, 0, 0, 1, 1, 1, 0, 0, 0])
    blocks = ["a"] * 4 + ["b"] * 6
    return build_dataset(y, s, d, blocks)


@pytest.fixture
def delta_hand_dataset():
    """Blocks (4 units, 1 treated, controls fully observed) and
    (4 units, 2 treated, 1 of 2 controls observed)."""
    y = np.array([5.0, 1.0, 2.0, 3.0, 6.0, 7.0, 4.0, 0.0])
    s = np.array([1, 1, 1, 1, 1, 1, 1, 0])
    d = np.array([1, 0, 0, 0, 1, 1, 0, 0])
    blocks = ["a"] * 4 + ["b"] * 4
    return build_dataset(y, s, d, blocks)


@pytest.fixture
def label_constant_dataset():
    """Two blocks, everything observed, treated y=5 and control y=2."""
    d = np.array([1, 1, 0, 0, 1, 1, 0, 0])
    y = np.where(d == 1, 5.0, 2.0)
    s = np.ones(8, dtype=int)
    blocks = ["a"] * 4 + ["b"] * 4
    return build_dataset(y, s, d, blocks)


EQUAL_SHARE_MENU = (
    (2, 1),
    (3, 1),
    (4, 1),
    (4, 3),
    (5, 2),
)


def random_equal_share_dataset(rng):
    """Blocks with one common treated share; observed outcomes in both arms."""
    while True:
        base_n, base_t = EQUAL_SHARE_MENU[rng.integers(len(EQUAL_SHARE_MENU))]
        n_blocks = int(rng.integers(2, 6))
        mults = rng.integers(1, 4, size=n_blocks)
        rate1 = rng.uniform(0.55, 1.0)
        rate0 = rng.uniform(0.25, 1.0)
        y, s, d, blocks = [], [], [], []
        for g in range(n_blocks):
            n_g = int(base_n * mults[g])
            t_g = int(base_t * mults[g])
            dg = np.zeros(n_g, dtype=int)
            dg[rng.permutation(n_g)[:t_g]] = 1
            sg = np.where(
                dg == 1, rng.random(n_g) < rate1, rng.random(n_g) < rate0
            ).astype(int)
            yg = rng.normal(g, 1.0, n_g)
            if rng.random() < 0.3:
                yg = np.round(yg, 1)  # provoke ties
            y.extend(yg)
            s.extend(sg)
            d.extend(dg)
            blocks.extend([f"g{g}"] * n_g)
        y, s, d = np.array(y), np.array(s), np.array(d)
        if (s * d).sum() == 0 or (s * (1 - d)).sum() == 0:
            continue
        # a zero raw share makes the reduction comparison trivial; keep it
        # sometimes, but avoid degenerate trims (keep mass below one unit)
        n1s = int((s * d).sum())
        q = max(0.0, 1.0 - ((s * (1 - d)).sum() * d.sum()) / (n1s * (1 - d).sum()))
        if (1.0 - q) * n1s < 1.0:
            continue
        return build_dataset(y, s, d, blocks)


def random_dataset(rng, min_block=2, max_block=8, allow_clamp=True):
    """Heterogeneous-share blocks with random selection; both arms observed."""
    while True:
        n_blocks = int(rng.integers(2, 6))
        y, s, d, blocks = [], [], [], []
        for g in range(n_blocks):
            n_g = int(rng.integers(min_block, max_block + 1))
            t_g = int(rng.integers(1, n_g))
            dg = np.zeros(n_g, dtype=int)
            dg[rng.permutation(n_g)[:t_g]] = 1
            hi = rng.uniform(0.5, 1.0)
            lo = rng.uniform(0.2, 1.0) if allow_clamp else rng.uniform(0.2, hi)
            sg = np.where(
                dg == 1, rng.random(n_g) < hi, rng.random(n_g) < lo
            ).astype(int)
            yg = rng.normal(0.5 * g, 1.0, n_g)
            if rng.random() < 0.3:
                yg = np.round(yg, 1)
            y.extend(yg)
            s.extend(sg)
            d.extend(dg)
            blocks.extend([f"g{g}"] * n_g)
        y, s, d = np.array(y), np.array(s), np.array(d)
        if (s * d).sum() == 0 or (s * (1 - d)).sum() == 0:
            continue
        return build_dataset(y, s, d, blocks)


def pair_design_normal(rng, n_pairs, s1, s0, m1, sd1, m0, sd0):
    """Pairs with one treated unit; normal outcomes; Bernoulli selection."""
    n = 2 * n_pairs
    d = np.zeros(n, dtype=int)
    coin = rng.integers(0, 2, n_pairs)
    d[0::2] = coin
    d[1::2] = 1 - coin
    y = np.where(d == 1, rng.normal(m1, sd1, n), rng.normal(m0, sd0, n))
    s = np.where(d == 1, rng.random(n) < s1, rng.random(n) < s0).astype(int)
    width = len(str(n_pairs - 1))
    blocks = [str(i // 2).zfill(width) for i in range(n)]
    return build_dataset(y, s, d, blocks)
