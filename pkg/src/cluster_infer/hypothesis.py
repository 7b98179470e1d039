"""Wald tests, the superblock parameter-constancy test, and empirical
critical values.

Both Wald statistics test H0: R beta = r against a chi-squared reference
with q = rank(R) degrees of freedom. The cluster-average statistic carries
an explicit factor G because its covariance estimates Var(sqrt(G) * avg);
the pooled statistic does not because its sandwich estimates Var(beta_pols)
directly.

The constancy statistic sums, over superblocks, the quadratic distance of
each block mean from the overall average in the metric of the block's own
variance estimate, then standardizes to Z = (T - k*D) / sqrt(2*k*D).
Coefficient heterogeneity inflates T upward, so the default decision is
one-sided in the upper tail; a two-sided mode is available.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .covariance import CovarianceEstimate, invert_psd
from .errors import (
    ConfigurationError,
    DegenerateSuperblockError,
    EmptyInputError,
    HypothesisError,
)
from .estimators import AverageEstimate, PolsEstimate, SuperblockEstimate

DEFAULT_LEVELS = (0.01, 0.05, 0.10)
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class LinearHypothesis:
    """H0: R beta = r with R of full row rank q <= k."""

    R: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        r = np.atleast_1d(np.asarray(self.r, dtype=np.float64))
        q, k = R.shape
        if r.shape != (q,):
            raise HypothesisError(f"R has {q} rows but r has length {r.shape[0]}")
        if q > k:
            raise HypothesisError(f"R has more rows ({q}) than columns ({k})")
        sv = np.linalg.svd(R, compute_uv=False)
        if sv[0] <= 0 or sv[-1] <= RANK_RTOL * sv[0]:
            raise HypothesisError("R is rank deficient")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    @property
    def q(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int | str  # chi-squared df, or "standard-normal"
    p_value: float
    reject_at: dict[float, bool]
    method: str
    details: dict = field(default_factory=dict)


def _decisions(p_value: float, levels) -> dict[float, bool]:
    return {float(lvl): bool(p_value < lvl) for lvl in levels}


def _wald(
    delta: np.ndarray,
    cov_block: np.ndarray,
    scale: float,
    q: int,
    method: str,
    levels,
    context: str,
) -> TestResult:
    inv = invert_psd(cov_block, context=context)
    stat = float(scale * delta @ inv @ delta)
    stat = max(stat, 0.0)
    p = float(stats.chi2.sf(stat, q))
    return TestResult(
        statistic=stat, df=q, p_value=p, reject_at=_decisions(p, levels), method=method
    )


def wald_cluster_average(
    est: AverageEstimate,
    vhat: CovarianceEstimate,
    hyp: LinearHypothesis,
    levels=DEFAULT_LEVELS,
) -> TestResult:
    """Wald test of R beta = r using the cluster-average estimator."""
    if vhat.kind != "cluster-average":
        raise ConfigurationError(f"expected a cluster-average covariance, got {vhat.kind!r}")
    if hyp.R.shape[1] != est.k:
        raise HypothesisError(f"R has {hyp.R.shape[1]} columns, estimate has k={est.k}")
    delta = hyp.R @ est.beta_bar_hat - hyp.r
    block = hyp.R @ vhat.matrix @ hyp.R.T
    return _wald(
        delta, block, float(est.G), hyp.q, "wald-cluster-average", levels,
        context="R V R' (cluster-average)",
    )


def wald_pols(
    est: PolsEstimate,
    sigma: CovarianceEstimate,
    hyp: LinearHypothesis,
    levels=DEFAULT_LEVELS,
) -> TestResult:
    """Wald test of R beta = r using pooled OLS with its cluster-robust sandwich."""
    if sigma.kind != "crve-pols":
        raise ConfigurationError(f"expected a crve-pols covariance, got {sigma.kind!r}")
    if hyp.R.shape[1] != est.k:
        raise HypothesisError(f"R has {hyp.R.shape[1]} columns, estimate has k={est.k}")
    delta = hyp.R @ est.beta_pols - hyp.r
    block = hyp.R @ sigma.matrix @ hyp.R.T
    return _wald(
        delta, block, 1.0, hyp.q, "wald-pols", levels, context="R Sigma R' (pols)"
    )


def superblock_constancy(
    sbs: list[SuperblockEstimate],
    vtildes: list[CovarianceEstimate],
    est: AverageEstimate,
    levels=DEFAULT_LEVELS,
    two_sided: bool = False,
) -> TestResult:
    """Test whether the regression coefficients are constant across superblocks.

    Aborts when any superblock has fewer than two clusters: its variance
    estimate is built from own-mean residuals and cannot be inverted
    meaningfully. Emits a diagnostic warning when the number of superblocks
    is large relative to the smallest block (normal approximation strain).
    """
    D = len(sbs)
    if D < 2:
        raise ConfigurationError(f"constancy test needs at least 2 superblocks, got {D}")
    if len(vtildes) != D:
        raise ConfigurationError(
            f"{D} superblock estimates but {len(vtildes)} covariance estimates"
        )
    degenerate = []
    for sb, v in zip(sbs, vtildes):
        if v.kind != "superblock":
            raise ConfigurationError(f"expected superblock covariances, got {v.kind!r}")
        if v.label != sb.label:
            raise ConfigurationError(
                f"superblock/covariance label mismatch: {sb.label!r} vs {v.label!r}"
            )
        if sb.P < 2 or v.degenerate:
            degenerate.append(sb.label)
    if degenerate:
        raise DegenerateSuperblockError(
            f"superblock(s) with fewer than 2 clusters: {degenerate}", labels=degenerate
        )
    k = est.k
    min_p = min(sb.P for sb in sbs)
    if D / min_p > 0.5:
        warnings.warn(
            f"{D} superblocks with smallest block size {min_p}: the normal "
            "approximation for the constancy statistic may be strained",
            UserWarning,
            stacklevel=2,
        )
    t_sb = 0.0
    for sb, v in zip(sbs, vtildes):
        dev = sb.beta_tilde - est.beta_bar_hat
        inv = invert_psd(v.matrix, context=f"superblock {sb.label!r} variance")
        t_sb += float(dev @ inv @ dev)
    z = (t_sb - k * D) / math.sqrt(2.0 * k * D)
    p = float(2.0 * stats.norm.sf(abs(z))) if two_sided else float(stats.norm.sf(z))
    return TestResult(
        statistic=float(z),
        df="standard-normal",
        p_value=p,
        reject_at=_decisions(p, levels),
        method="superblock-constancy" + ("-two-sided" if two_sided else ""),
        details={"t_sb": float(t_sb), "k": k, "D": D, "min_block": min_p},
    )


def size_corrected_critical_value(null_stats, level: float) -> float:
    """Empirical (1-level)-quantile of simulated null statistics.

    Uses the 1-based order statistic at index ceil((1-level)*n), so results
    are bit-for-bit reproducible for a given draw.
    """
    arr = np.asarray(null_stats, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInputError("no null statistics supplied")
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must be in (0,1), got {level}")
    n = arr.size
    # tiny slack so exact products like 0.95*100 do not get pushed up a rank
    idx = int(np.ceil((1.0 - level) * n - 1e-12))
    idx = min(max(idx, 1), n)
    return float(np.sort(arr)[idx - 1])
