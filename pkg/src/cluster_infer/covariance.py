"""Sandwich variance estimators for the three estimators in this package.

Normalization differs by kind and is recorded in ``scale_note`` on every
estimate:

- cluster-average: the matrix estimates Var(sqrt(G) * beta_bar_hat); divide
  by G for the variance of the average itself.
- crve-pols: the matrix estimates Var(beta_pols) directly.
- superblock: the matrix estimates Var(beta_tilde_l) directly (note the
  1/P_l^2 prefactor).

All three are residual-based outer-product sums and therefore positive
semidefinite in exact arithmetic; :func:`invert_psd` enforces that
numerically before any statistic is formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClusteredDataset
from .errors import ConditioningError, ConfigurationError
from .estimators import AverageEstimate, PolsEstimate, SuperblockEstimate

PSD_RTOL = 1e-10
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    kind: str  # cluster-average | crve-pols | superblock
    scale_note: str
    label: str | None = None
    degenerate: bool = False


def invert_psd(matrix: np.ndarray, context: str = "covariance") -> np.ndarray:
    """Invert a symmetric PSD matrix with clamping and a condition guard.

    Eigenvalues in [-1e-10 * lambda_max, 0) are treated as rounding noise and
    clamped to zero; anything more negative means the matrix is not a valid
    covariance and raises. A condition number above 1e12 (including any zero
    eigenvalue after clamping) also raises.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"{context}: expected a square matrix, got {m.shape}")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    lam_max = vals[-1]
    if lam_max <= 0:
        raise ConditioningError(f"{context}: matrix has no positive eigenvalues")
    if vals[0] < -PSD_RTOL * lam_max:
        raise ConditioningError(
            f"{context}: matrix is not positive semidefinite "
            f"(min eigenvalue {vals[0]:.3e} vs max {lam_max:.3e})"
        )
    vals = np.where(vals < 0, 0.0, vals)
    if vals[0] <= lam_max / CONDITION_LIMIT:
        raise ConditioningError(
            f"{context}: condition number exceeds {CONDITION_LIMIT:.0e} "
            f"(eigenvalues {vals[0]:.3e} .. {lam_max:.3e})"
        )
    inv = (vecs / vals) @ vecs.T
    return 0.5 * (inv + inv.T)


def _clusters_by_id(ds: ClusteredDataset):
    return {c.id: c for c in ds.clusters}


def vhat_cluster_average(est: AverageEstimate, ds: ClusteredDataset) -> CovarianceEstimate:
    """Variance estimator for the cluster-average estimator.

    Averages the per-cluster sandwich terms built from residuals at the
    common average estimate (not at each cluster's own estimate).
    """
    by_id = _clusters_by_id(ds)
    k = est.k
    acc = np.zeros((k, k))
    for f in est.per_cluster:
        c = by_id[f.cluster_id]
        e = c.y - c.X @ est.beta_bar_hat
        h = f.gram_inv @ (c.X.T @ e)
        acc += np.outer(h, h)
    v = acc / est.G
    return CovarianceEstimate(
        matrix=0.5 * (v + v.T),
        kind="cluster-average",
        scale_note=(
            "estimates Var(sqrt(G) * beta_bar_hat); divide by G for the "
            "variance of beta_bar_hat itself; same formula serves under "
            "cluster-specific random coefficients"
        ),
    )


def crve_pols(
    est: PolsEstimate, ds: ClusteredDataset, small_sample_correction: bool = False
) -> CovarianceEstimate:
    """Cluster-robust sandwich for pooled OLS.

    By default no degrees-of-freedom correction is applied, matching the
    plain bread-meat-bread formula; ``small_sample_correction`` multiplies by
    the common G/(G-1) * (N-1)/(N-k) factor.
    """
    k = est.k
    meat = np.zeros((k, k))
    for c in ds.clusters:
        eps = c.y - c.X @ est.beta_pols
        s = c.X.T @ eps
        meat += np.outer(s, s)
    bread_meat = np.linalg.solve(est.xtx, meat)
    sigma = np.linalg.solve(est.xtx, bread_meat.T).T
    note = "estimates Var(beta_pols) directly; no small-sample correction"
    if small_sample_correction:
        G, n = ds.G, est.n_total
        if G < 2 or n <= k:
            raise ConfigurationError(
                f"small-sample correction needs G >= 2 and N > k (G={G}, N={n}, k={k})"
            )
        sigma = sigma * (G / (G - 1)) * ((n - 1) / (n - k))
        note = "estimates Var(beta_pols) directly; G/(G-1)*(N-1)/(N-k) correction applied"
    return CovarianceEstimate(matrix=0.5 * (sigma + sigma.T), kind="crve-pols", scale_note=note)


def vhat_superblock(sb: SuperblockEstimate, ds: ClusteredDataset) -> CovarianceEstimate:
    """Variance estimator for one superblock's mean estimate.

    Residuals are taken at the superblock's own mean. A single-cluster
    superblock is returned flagged as degenerate rather than raising here;
    the constancy test aborts on the flag.
    """
    by_id = _clusters_by_id(ds)
    k = sb.beta_tilde.shape[0]
    acc = np.zeros((k, k))
    for f in sb.members:
        c = by_id[f.cluster_id]
        e = c.y - c.X @ sb.beta_tilde
        h = f.gram_inv @ (c.X.T @ e)
        acc += np.outer(h, h)
    v = acc / sb.P**2
    return CovarianceEstimate(
        matrix=0.5 * (v + v.T),
        kind="superblock",
        scale_note="estimates Var(beta_tilde_l) itself",
        label=sb.label,
        degenerate=sb.P < 2,
    )
