"""Per-cluster OLS, the cluster-average estimator, and the pooled baseline.

The central object is the unweighted average of per-cluster OLS solutions:
each cluster is solved on its own, and the estimates are averaged with equal
weight regardless of cluster size. Superblock averages group the same
per-cluster solutions by a coarser label. Pooled OLS over the stacked data
is provided as the conventional baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import Cluster, ClusteredDataset
from .errors import SingularClusterError, SingularDesignError

RANK_RTOL = 1e-10


def _qr_solve(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Least-squares solve plus Gram inverse via QR; None when rank deficient."""
    n, k = X.shape
    if n < k:
        return None
    Q, R = np.linalg.qr(X)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[0] <= 0 or sv[-1] <= RANK_RTOL * sv[0]:
        return None
    beta = solve_triangular(R, Q.T @ y)
    r_inv = solve_triangular(R, np.eye(k))
    gram_inv = r_inv @ r_inv.T
    return beta, 0.5 * (gram_inv + gram_inv.T)


@dataclass(frozen=True)
class ClusterFit:
    """OLS solution for one cluster with its cached Gram inverse."""

    cluster_id: str
    beta_hat: np.ndarray
    gram_inv: np.ndarray
    n: int


@dataclass(frozen=True)
class AverageEstimate:
    beta_bar_hat: np.ndarray
    G: int
    per_cluster: tuple[ClusterFit, ...]

    @property
    def k(self) -> int:
        return self.beta_bar_hat.shape[0]


@dataclass(frozen=True)
class PolsEstimate:
    beta_pols: np.ndarray
    xtx: np.ndarray
    n_total: int

    @property
    def k(self) -> int:
        return self.beta_pols.shape[0]


@dataclass(frozen=True)
class SuperblockEstimate:
    label: str
    beta_tilde: np.ndarray
    P: int
    members: tuple[ClusterFit, ...]


def fit_cluster(c: Cluster) -> ClusterFit:
    """Solve one cluster's least-squares problem.

    Uses a QR decomposition rather than forming the normal equations; the
    cluster is rejected as singular when it has fewer rows than regressors
    or when its smallest singular value falls below 1e-10 of the largest.
    """
    solved = _qr_solve(c.X, c.y)
    if solved is None:
        raise SingularClusterError(
            f"cluster {c.id!r} is rank deficient (n={c.n}, k={c.k})",
            cluster_ids=[c.id],
        )
    beta, gram_inv = solved
    return ClusterFit(cluster_id=c.id, beta_hat=beta, gram_inv=gram_inv, n=c.n)


def _fit_all(ds: ClusteredDataset) -> list[ClusterFit]:
    fits: list[ClusterFit] = []
    bad: list[str] = []
    for c in ds.clusters:
        solved = _qr_solve(c.X, c.y)
        if solved is None:
            bad.append(c.id)
        else:
            beta, gram_inv = solved
            fits.append(ClusterFit(cluster_id=c.id, beta_hat=beta, gram_inv=gram_inv, n=c.n))
    if bad:
        raise SingularClusterError(
            f"{len(bad)} cluster(s) are rank deficient: {bad[:10]}"
            + ("..." if len(bad) > 10 else ""),
            cluster_ids=bad,
        )
    return fits


def cluster_average(ds: ClusteredDataset) -> AverageEstimate:
    """Average the per-cluster OLS estimates with equal weights.

    All rank-deficient clusters are collected before failing, so the error
    names every offender rather than the first one found.
    """
    fits = _fit_all(ds)
    betas = np.stack([f.beta_hat for f in fits])
    return AverageEstimate(
        beta_bar_hat=betas.mean(axis=0), G=ds.G, per_cluster=tuple(fits)
    )


def superblock_averages(ds: ClusteredDataset) -> list[SuperblockEstimate]:
    """Per-superblock means of the per-cluster estimates.

    The size-weighted combination of the returned block means reproduces the
    overall cluster average exactly (up to rounding).
    """
    groups = ds.superblock_members()  # raises if no superblock map
    fits = {f.cluster_id: f for f in _fit_all(ds)}
    out = []
    for label, members in groups.items():
        mfits = tuple(fits[c.id] for c in members)
        betas = np.stack([f.beta_hat for f in mfits])
        out.append(
            SuperblockEstimate(
                label=label, beta_tilde=betas.mean(axis=0), P=len(mfits), members=mfits
            )
        )
    return out


def pols_fit(ds: ClusteredDataset) -> PolsEstimate:
    """Pooled OLS over the stacked data."""
    X = np.vstack([c.X for c in ds.clusters])
    y = np.concatenate([c.y for c in ds.clusters])
    solved = _qr_solve(X, y)
    if solved is None:
        raise SingularDesignError(
            f"stacked design is rank deficient (n={X.shape[0]}, k={X.shape[1]})"
        )
    beta, _ = solved
    xtx = X.T @ X
    return PolsEstimate(beta_pols=beta, xtx=0.5 * (xtx + xtx.T), n_total=X.shape[0])
