"""Property-based invariants on randomized inputs."""

import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strata_bounds import (
    Involution,
    PairingError,
    TrimSpec,
    block_design,
    dataset_from_arrays,
    dataset_to_csv_text,
    lee_bounds,
    meat_iid,
    pair_blocks,
    parse_csv,
    set_critical_value,
    trimmed_mean,
)

from scipy.stats import norm

COMMON = dict(deadline=None, max_examples=60)


values_strategy = st.lists(
    st.floats(
        min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
    ),
    min_size=1,
    max_size=30,
)


@given(values=values_strategy, q_frac=st.floats(0.0, 0.999), side=st.sampled_from(["upper", "lower"]))
@settings(**COMMON)
def test_trimmed_mean_stays_inside_range_and_orders(values, q_frac, side):
    y = np.array(values)
    m = y.size
    q = q_frac * max(0.0, 1.0 - 1.0 / m)  # keep at least one unit of mass
    res = trimmed_mean(y, TrimSpec(q=q, side=side))
    tol = 1e-9 * max(1.0, float(np.abs(y).max()))
    assert y.min() - tol <= res.mean <= y.max() + tol
    assert res.kept_mass == pytest.approx((1.0 - q) * m)
    assert 0.0 <= res.boundary_deficit <= res.ties_at_cutoff
    upper = trimmed_mean(y, TrimSpec(q=q, side="upper"))
    lower = trimmed_mean(y, TrimSpec(q=q, side="lower"))
    assert upper.mean <= lower.mean + tol  # dropping the top cannot raise it


@st.composite
def dataset_strategy(draw):
    n_blocks = draw(st.integers(1, 4))
    y, s, d, blocks = [], [], [], []
    for g in range(n_blocks):
        n_g = draw(st.integers(2, 8))
        t_g = draw(st.integers(1, n_g - 1))
        arm = [1] * t_g + [0] * (n_g - t_g)
        sel = draw(
            st.lists(st.integers(0, 1), min_size=n_g, max_size=n_g)
        )
        vals = draw(
            st.lists(
                st.floats(
                    min_value=-100, max_value=100,
                    allow_nan=False, allow_infinity=False,
                ),
                min_size=n_g,
                max_size=n_g,
            )
        )
        y.extend(vals)
        s.extend(sel)
        d.extend(arm)
        blocks.extend([f"g{g}"] * n_g)
    return np.array(y), np.array(s), np.array(d), blocks


@given(parts=dataset_strategy())
@settings(**COMMON)
def test_lee_bounds_order_and_share_bracket(parts):
    y, s, d, blocks = parts
    if (s * d).sum() == 0 or (s * (1 - d)).sum() == 0:
        return  # undefined trimming share; covered by unit tests
    n1s = int((s * d).sum())
    q = max(0.0, 1.0 - ((s * (1 - d)).sum() * d.sum()) / (n1s * (1 - d).sum()))
    if (1.0 - q) * n1s < 1.0:
        return  # degenerate trim
    data = dataset_from_arrays(np.where(s == 1, y, np.nan), s, d, blocks)
    est = lee_bounds(data, block_design(data))
    tol = 1e-9 * max(1.0, float(np.abs(y).max()))
    assert est.delta_lb <= est.delta_ub + tol
    assert 0.0 <= est.q < 1.0
    assert est.mu1_lb <= est.mu1_ub + tol
    obs1 = y[(d == 1) & (s == 1)]
    assert obs1.min() - tol <= est.mu1_lb
    assert est.mu1_ub <= obs1.max() + tol


@given(parts=dataset_strategy())
@settings(**COMMON)
def test_csv_round_trip_is_lossless(parts):
    y, s, d, blocks = parts
    if d.sum() == 0 or d.sum() == d.size:
        return
    data = dataset_from_arrays(np.where(s == 1, y, np.nan), s, d, blocks)
    back = parse_csv(io.StringIO(dataset_to_csv_text(data)))
    assert back.records == data.records


@given(
    width=st.floats(0.0, 50.0),
    sigma=st.floats(0.0, 10.0),
    alpha=st.sampled_from([0.01, 0.05, 0.10, 0.32]),
)
@settings(**COMMON)
def test_set_critical_value_bracketed_by_normal_quantiles(width, sigma, alpha):
    c = set_critical_value(width, sigma, alpha)
    lo = norm.ppf(1.0 - alpha)
    hi = norm.ppf(1.0 - alpha / 2.0)
    assert lo - 1e-9 <= c <= hi + 1e-9
    if sigma > 0.0:
        wider = set_critical_value(width + 1.0, sigma, alpha)
        assert wider <= c + 1e-9  # critical value shrinks with the gap


@given(
    n_singletons=st.integers(2, 6),
    extra=st.integers(0, 3),
)
@settings(**COMMON)
def test_pair_blocks_gives_fixed_point_free_involution(n_singletons, extra):
    n_blocks = n_singletons + extra
    y, s, d, blocks = [], [], [], []
    for g in range(n_blocks):
        for i in range(4):
            y.append(float(g + i))
            s.append(1)
            d.append(1 if i == 0 else 0)
            blocks.append(f"b{g}")
    data = dataset_from_arrays(np.array(y), np.array(s), np.array(d), blocks)
    design = block_design(data)
    needs = list(range(n_singletons))
    if len(needs) % 2 == 1 and extra == 0:
        with pytest.raises(PairingError):
            pair_blocks(design, needs)
        return
    inv = pair_blocks(design, needs)
    assert isinstance(inv, Involution)
    pm = inv.partner_map()
    assert all(pm[g] != g for g in needs)
    for g in needs:
        partner = pm[g]
        if partner in needs:
            assert pm[partner] == g  # mutual within the singleton set
    covered = {g for pair in inv.pairs for g in pair}
    assert set(needs) <= covered


@given(
    rows=st.integers(2, 30),
    cols=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
@settings(**COMMON)
def test_meat_iid_is_positive_semidefinite(rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(rows, cols))
    omega = meat_iid(m)
    eigvals = np.linalg.eigvalsh(omega)
    assert eigvals.min() >= -1e-10
    np.testing.assert_allclose(omega, omega.T, atol=1e-15)


@given(st.floats(0.0, 0.99), st.integers(1, 50))
@settings(**COMMON)
def test_trim_keeps_exact_mass_even_with_ties(q, m):
    if (1.0 - q) * m < 1.0:
        return
    y = np.ones(m)  # everything tied: the mean must be unaffected
    res = trimmed_mean(y, TrimSpec(q=q, side="upper"))
    assert res.mean == 1.0
    assert res.cutoff == 1.0
    assert res.ties_at_cutoff == m
