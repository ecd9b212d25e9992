"""Seeded data-generating processes and the Monte Carlo driver.

Randomness uses the Philox counter-based generator (4x64) keyed by
(seed mod 2^64, high word); the driver derives the child key for replication
r as (seed mod 2^64, r + 1), so output is identical across runs and across
thread counts. Each process documents its draw order, which is frozen:
changing it would silently change every seeded result.

matched_pairs: units sorted by a standard-normal covariate form consecutive
pairs; one unit per pair is treated; outcomes are 2X + 2 + noise; selection
is 0.8 (treated) / 0.7 (control) independent of outcomes; observed treated
outcomes get an additive Uniform(0, 2) bonus. Truth for the bounds comes
from a 10^7-draw direct simulation of the trimmed population quantities.

heavy_tails: 100 strata of 20 (10 treated each); outcomes 2X + 2 + 12V with
V a truncated Pareto tail; the largest control outcome in each stratum is an
"outlier" unit whose selection is 1.00 treated / 0.01 control (others: 0.98
/ 0.94, comonotone so treated selection dominates); per-stratum quota flips
guarantee at least 3 observed treated, 2 observed controls, and at least one
unselected unit per arm. The true always-observed effect is exactly 1.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data_model import Dataset, block_design, dataset_from_arrays
from .errors import EstimationError, ValidationError
from .ipw_estimator import lee_ipw_bounds
from .lee_estimator import conditional_lee_bounds, lee_bounds
from .variance import sandwich_report

DGP_MATCHED_PAIRS = "matched_pairs"
DGP_HEAVY_TAILS = "heavy_tails"
DGPS = (DGP_MATCHED_PAIRS, DGP_HEAVY_TAILS)

_MASK64 = (1 << 64) - 1
# fixed internal stream for the reference-truth simulation, independent of
# user seeds so the truth is identical across configs
_TRUTH_KEY = 86028157 | (999983 << 64)

THREADS_ENV = "STRATA_BOUNDS_THREADS"

REPLICATION_COLUMNS = (
    "rep",
    "estimator",
    "delta_lb",
    "delta_ub",
    "se_lb",
    "se_ub",
    "covered_lb",
    "covered_ub",
    "flags",
)

SUMMARY_COLUMNS = (
    "estimator",
    "reps",
    "failed",
    "mean_delta_lb",
    "mean_delta_ub",
    "sd_delta_lb",
    "sd_delta_ub",
    "mean_se_lb",
    "mean_se_ub",
    "coverage_lb",
    "coverage_ub",
    "flag_counts",
)


def philox_generator(seed: int) -> np.random.Generator:
    """Philox4x64 generator keyed by the low and high 64-bit words of seed."""
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed: int, rep: int) -> int:
    """Key for replication rep: low word = seed mod 2^64, high word = rep+1."""
    return (seed & _MASK64) | ((rep + 1) << 64)


# ---------------------------------------------------------------------------
# matched-pairs process
# ---------------------------------------------------------------------------

def simulate_dgp1(seed: int, n: int = 10000) -> Dataset:
    """Matched-pairs design with independent attrition.

    Draw order (frozen): covariate X(n); sort; outcome noise(n); per-pair
    treatment coin(n/2); treated selection uniforms(n); control selection
    uniforms(n); treated outcome bonus uniforms(n).
    """
    if n < 4 or n % 2 != 0:
        raise ValidationError("matched_pairs needs an even n of at least 4")
    rng = philox_generator(seed)
    x = rng.standard_normal(n)
    x = x[np.argsort(x, kind="stable")]
    eps = rng.standard_normal(n)
    coin = rng.integers(0, 2, n // 2)
    u_sel_treated = rng.random(n)
    u_sel_control = rng.random(n)
    bonus = 2.0 * rng.random(n)

    d = np.empty(n, dtype=np.int64)
    d[0::2] = coin
    d[1::2] = 1 - coin
    s_treated = u_sel_treated < 0.8
    s_control = u_sel_control < 0.7
    s = np.where(d == 1, s_treated, s_control).astype(np.int64)

    y_base = 2.0 * x + 2.0 + eps
    y = np.where(d == 1, y_base + bonus, y_base)

    width = len(str(n // 2 - 1))
    labels = [str(i // 2).zfill(width) for i in range(n)]
    return dataset_from_arrays(y, s, d, labels, x=x[:, None])


@lru_cache(maxsize=1)
def dgp1_truth() -> tuple[float, float]:
    """Population bounds for matched_pairs by direct 10^7-draw simulation.

    The treated-observed outcome is 2X + 2 + noise + Uniform(0,2); the
    population trimming share is 1 - 0.7/0.8 = 0.125; the control mean is
    exactly 2 because selection is independent of outcomes.
    """
    rng = philox_generator(_TRUTH_KEY)
    size = 10_000_000
    w = 2.0 * rng.standard_normal(size) + 2.0
    w += rng.standard_normal(size)
    w += 2.0 * rng.random(size)
    w.sort()
    keep = round(0.875 * size)
    lb = float(w[:keep].mean()) - 2.0
    ub = float(w[size - keep :].mean()) - 2.0
    return lb, ub


# ---------------------------------------------------------------------------
# heavy-tails process
# ---------------------------------------------------------------------------

def simulate_dgp2(seed: int) -> Dataset:
    """Stratified design with per-stratum outliers and selective attrition.

    Draw order (frozen): covariate X(2000); sort; tail uniforms(2000);
    per-stratum treatment permutations (stratum 0..99); selection
    uniforms(2000); then per-stratum quota flips (stratum 0..99, treated arm
    first), each drawing only when a flip is needed. Quotas raise selection
    only (at least 3 observed treated and 2 observed controls per stratum);
    lowering selection to manufacture attrition would shrink the pooled
    trimming share below the share of outlier mass and push the lower bound
    above the true effect.
    """
    n, size_g, n_strata = 2000, 20, 100
    min_obs_treated, min_obs_control = 3, 2
    rng = philox_generator(seed)

    x = rng.standard_normal(n)
    x = x[np.argsort(x, kind="stable")]
    u = rng.random(n) * 0.995
    v = (1.0 - u) ** (-1.0 / 2.2)
    y0 = 2.0 * x + 2.0 + 12.0 * v
    y1 = y0 + 1.0

    d = np.zeros(n, dtype=np.int64)
    for g in range(n_strata):
        perm = rng.permutation(size_g)
        d[g * size_g + perm[: size_g // 2]] = 1

    w = rng.random(n)
    s_pot_treated = w < 0.98
    s_pot_control = w < 0.94
    for g in range(n_strata):
        lo = g * size_g
        outlier = lo + int(np.argmax(y0[lo : lo + size_g]))
        s_pot_treated[outlier] = True
        s_pot_control[outlier] = w[outlier] < 0.01

    s = np.where(d == 1, s_pot_treated, s_pot_control)

    def flip_up(unit: int, arm: int) -> None:
        # raising selection keeps treated selection dominating control
        if arm == 1:
            s_pot_treated[unit] = True
        else:
            s_pot_control[unit] = True
            s_pot_treated[unit] = True
        s[unit] = True

    for g in range(n_strata):
        members = np.arange(g * size_g, (g + 1) * size_g)
        for arm, min_obs in ((1, min_obs_treated), (0, min_obs_control)):
            arm_units = members[d[members] == arm]
            selected = arm_units[s[arm_units]]
            if selected.size < min_obs:
                pool = arm_units[~s[arm_units]]
                picks = rng.choice(pool, size=min_obs - selected.size, replace=False)
                for unit in picks:
                    flip_up(int(unit), arm)

    s = s.astype(np.int64)
    y = np.where(d == 1, y1, y0)
    labels = [f"{i // size_g:03d}" for i in range(n)]
    return dataset_from_arrays(y, s, d, labels, x=x[:, None])


DGP2_TRUTH = 1.0  # constant unit effect by construction


# ---------------------------------------------------------------------------
# Monte Carlo driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """Monte Carlo run description.

    estimators holds tokens "<estimator>:<variance>" with estimator in
    {lee, conditional-lee, lee-ipw} and variance in {design, iid, label,
    none}; empty means the default panel for the process. n applies to
    matched_pairs only (heavy_tails is fixed at 2000).
    """

    dgp: str
    reps: int
    seed: int
    n: int | None = None
    estimators: tuple[str, ...] = ()
    alpha: float = 0.05


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    reps: int
    failed: int
    mean_delta_lb: float
    mean_delta_ub: float
    sd_delta_lb: float
    sd_delta_ub: float
    mean_se_lb: float
    mean_se_ub: float
    coverage_lb: float
    coverage_ub: float
    flag_counts: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class MonteCarloSummary:
    config: McConfig
    truth_lb: float
    truth_ub: float
    estimators: tuple[EstimatorSummary, ...]


_DEFAULT_PANEL = {
    DGP_MATCHED_PAIRS: ("lee:design",),
    DGP_HEAVY_TAILS: ("lee-ipw:design", "conditional-lee:none"),
}

_ESTIMATOR_NAMES = ("lee", "conditional-lee", "lee-ipw")
_VARIANCE_NAMES = ("design", "iid", "label", "none")


def _parse_token(token: str) -> tuple[str, str]:
    est, _, var = token.partition(":")
    var = var or "none"
    if est not in _ESTIMATOR_NAMES or var not in _VARIANCE_NAMES:
        raise ValidationError(
            f"bad estimator token {token!r}; use <estimator>:<variance> with "
            f"estimator in {_ESTIMATOR_NAMES} and variance in {_VARIANCE_NAMES}"
        )
    if est == "conditional-lee" and var != "none":
        raise ValidationError(
            "conditional-lee has no moment system, so no variance method "
            "applies; use conditional-lee:none"
        )
    return est, var


def _resolve_config(config: McConfig) -> tuple[McConfig, tuple[str, ...], int]:
    if config.dgp not in DGPS:
        raise ValidationError(f"dgp must be one of {DGPS}, got {config.dgp!r}")
    if config.reps < 1:
        raise ValidationError("reps must be at least 1")
    if not (0.0 < config.alpha < 1.0):
        raise ValidationError("alpha must be in (0, 1)")
    if config.dgp == DGP_HEAVY_TAILS:
        if config.n not in (None, 2000):
            raise ValidationError("heavy_tails has fixed n = 2000")
        n = 2000
    else:
        n = config.n if config.n is not None else 10000
        if n < 4 or n % 2 != 0:
            raise ValidationError("matched_pairs needs an even n of at least 4")
    tokens = config.estimators or _DEFAULT_PANEL[config.dgp]
    for token in tokens:
        _parse_token(token)
    return config, tuple(tokens), n


def _covered(interval: tuple[float, float], value: float) -> bool:
    return interval[0] <= value <= interval[1]


def _run_replication(config, tokens, n, truth, rep):
    data = (
        simulate_dgp1(child_seed(config.seed, rep), n)
        if config.dgp == DGP_MATCHED_PAIRS
        else simulate_dgp2(child_seed(config.seed, rep))
    )
    design = block_design(data)
    rows = []
    for token in tokens:
        est_name, var_name = _parse_token(token)
        row = {"rep": rep, "estimator": token, "flags": ""}
        try:
            report = None
            if var_name == "none":
                if est_name == "lee":
                    estimate = lee_bounds(data, design)
                elif est_name == "conditional-lee":
                    estimate = conditional_lee_bounds(data, design)
                else:
                    estimate, _ = lee_ipw_bounds(data, design)
            else:
                kind = "lee" if est_name == "lee" else "ipw"
                report = sandwich_report(
                    data, design, kind, var_name, alpha=config.alpha
                )
                estimate = report.fit_lb.estimate
            row["delta_lb"] = estimate.delta_lb
            row["delta_ub"] = estimate.delta_ub
            flags = list(estimate.flags)
            if report is not None:
                row["se_lb"] = report.se_lb
                row["se_ub"] = report.se_ub
                flags.extend(f for f in report.flags if f not in flags)
                if config.dgp == DGP_MATCHED_PAIRS:
                    row["covered_lb"] = _covered(report.ci_lb, truth[0])
                    row["covered_ub"] = _covered(report.ci_ub, truth[1])
                else:
                    # no per-bound truth here: both columns carry coverage of
                    # the constant effect by the identified-set interval
                    hit = _covered(report.ci_set, DGP2_TRUTH)
                    row["covered_lb"] = hit
                    row["covered_ub"] = hit
            row["flags"] = ";".join(flags)
        except EstimationError as exc:
            row["flags"] = f"error:{type(exc).__name__}"
        rows.append(row)
    return rows


def monte_carlo(config: McConfig, out_dir: str | None = None) -> MonteCarloSummary:
    """Run the replications, optionally writing the two CSV files.

    Parallelism is controlled by the STRATA_BOUNDS_THREADS environment
    variable (default 1); results are keyed by replication index, so output
    bytes do not depend on the thread count.
    """
    config, tokens, n = _resolve_config(config)
    truth = dgp1_truth() if config.dgp == DGP_MATCHED_PAIRS else (DGP2_TRUTH,) * 2

    threads = int(os.environ.get(THREADS_ENV, "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(
                pool.map(
                    lambda rep: _run_replication(config, tokens, n, truth, rep),
                    range(config.reps),
                )
            )
    else:
        per_rep = [
            _run_replication(config, tokens, n, truth, rep)
            for rep in range(config.reps)
        ]
    rows = [row for rep_rows in per_rep for row in rep_rows]
    if not any("delta_lb" in row for row in rows):
        raise EstimationError("every replication failed; no summary to report")

    summaries = []
    for token in tokens:
        mine = [r for r in rows if r["estimator"] == token]
        good = [r for r in mine if "delta_lb" in r]
        failed = len(mine) - len(good)

        def col(name):
            vals = [r[name] for r in good if name in r]
            return np.array(vals, dtype=float) if vals else np.array([])

        lbs, ubs = col("delta_lb"), col("delta_ub")
        ses_lb, ses_ub = col("se_lb"), col("se_ub")
        cov_lb, cov_ub = col("covered_lb"), col("covered_ub")
        flag_counts: dict[str, int] = {}
        for r in mine:
            for f in r["flags"].split(";"):
                if f:
                    flag_counts[f] = flag_counts.get(f, 0) + 1
        summaries.append(
            EstimatorSummary(
                estimator=token,
                reps=len(mine),
                failed=failed,
                mean_delta_lb=_mean_or_nan(lbs),
                mean_delta_ub=_mean_or_nan(ubs),
                sd_delta_lb=_sd_or_nan(lbs),
                sd_delta_ub=_sd_or_nan(ubs),
                mean_se_lb=_mean_or_nan(ses_lb),
                mean_se_ub=_mean_or_nan(ses_ub),
                coverage_lb=_mean_or_nan(cov_lb),
                coverage_ub=_mean_or_nan(cov_ub),
                flag_counts=tuple(sorted(flag_counts.items())),
            )
        )

    summary = MonteCarloSummary(
        config=config,
        truth_lb=truth[0],
        truth_ub=truth[1],
        estimators=tuple(summaries),
    )
    if out_dir is not None:
        write_replications_csv(rows, os.path.join(out_dir, "replications.csv"))
        write_summary_csv(summary, os.path.join(out_dir, "summary.csv"))
    return summary


def _mean_or_nan(arr: np.ndarray) -> float:
    return float(arr.mean()) if arr.size else float("nan")


def _sd_or_nan(arr: np.ndarray) -> float:
    # empirical SD needs two replications; a single one yields the sentinel
    return float(arr.std(ddof=1)) if arr.size >= 2 else float("nan")


def format_number(value) -> str:
    """Numeric cell: 12 significant digits; nan stays literal."""
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def _atomic_csv(path: str, header, rows_of_cells) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows_of_cells)
    os.replace(tmp, path)


def write_replications_csv(rows: list[dict], path: str) -> None:
    def cells(row):
        return [
            str(row["rep"]),
            row["estimator"],
            format_number(row["delta_lb"]) if "delta_lb" in row else "nan",
            format_number(row["delta_ub"]) if "delta_ub" in row else "nan",
            format_number(row["se_lb"]) if "se_lb" in row else "nan",
            format_number(row["se_ub"]) if "se_ub" in row else "nan",
            str(int(row["covered_lb"])) if "covered_lb" in row else "",
            str(int(row["covered_ub"])) if "covered_ub" in row else "",
            row["flags"],
        ]

    _atomic_csv(path, REPLICATION_COLUMNS, (cells(r) for r in rows))


def write_summary_csv(summary: MonteCarloSummary, path: str) -> None:
    def cells(est: EstimatorSummary):
        return [
            est.estimator,
            str(est.reps),
            str(est.failed),
            format_number(est.mean_delta_lb),
            format_number(est.mean_delta_ub),
            format_number(est.sd_delta_lb),
            format_number(est.sd_delta_ub),
            format_number(est.mean_se_lb),
            format_number(est.mean_se_ub),
            format_number(est.coverage_lb),
            format_number(est.coverage_ub),
            ";".join(f"{name}={count}" for name, count in est.flag_counts),
        ]

    _atomic_csv(path, SUMMARY_COLUMNS, (cells(e) for e in summary.estimators))
