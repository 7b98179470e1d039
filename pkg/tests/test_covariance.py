"""Sandwich variance estimators and the guarded PSD inversion."""

import numpy as np
import pytest

from cluster_infer import (
    Cluster,
    ClusteredDataset,
    ConditioningError,
    DependenceKind,
    DgpConfig,
    cluster_average,
    crve_pols,
    gen_dataset,
    invert_psd,
    pols_fit,
    superblock_averages,
    vhat_cluster_average,
    vhat_superblock,
)
from cluster_infer.montecarlo import DEFAULT_SEED, _error_blocks, _prepared
from conftest import blocks_of, make_dataset
from oracles import mp_cluster_average, mp_pols, mp_vhat, mp_vtilde, rel_frobenius, to_np


def test_vhat_matches_extended_precision():
    rng = np.random.default_rng(30)
    for trial in range(10):
        ds = make_dataset(rng, G=int(rng.integers(2, 9)), k=int(rng.integers(1, 4)))
        est = cluster_average(ds)
        v = vhat_cluster_average(est, ds)
        oracle = to_np(mp_vhat(blocks_of(ds), mp_cluster_average(blocks_of(ds))))
        assert rel_frobenius(v.matrix, oracle) < 1e-10
        assert v.kind == "cluster-average"


def test_crve_matches_extended_precision():
    rng = np.random.default_rng(31)
    for trial in range(10):
        ds = make_dataset(rng, G=int(rng.integers(2, 9)), k=int(rng.integers(1, 4)))
        sigma = crve_pols(pols_fit(ds), ds)
        _, oracle = mp_pols(blocks_of(ds))
        assert rel_frobenius(sigma.matrix, to_np(oracle)) < 1e-10
        assert sigma.kind == "crve-pols"


def test_vtilde_matches_extended_precision():
    rng = np.random.default_rng(32)
    for trial in range(6):
        ds = make_dataset(rng, G=8, k=2, n_superblocks=2)
        members = ds.superblock_members()
        for sb in superblock_averages(ds):
            vt = vhat_superblock(sb, ds)
            blocks = [(c.X, c.y) for c in members[sb.label]]
            oracle = to_np(mp_vtilde(blocks, mp_cluster_average(blocks)))
            assert rel_frobenius(vt.matrix, oracle) < 1e-10
            assert vt.kind == "superblock" and vt.label == sb.label
            assert not vt.degenerate


def test_returned_matrices_numerically_psd():
    rng = np.random.default_rng(33)
    for trial in range(10):
        ds = make_dataset(rng, G=5, k=3, n_superblocks=2)
        est = cluster_average(ds)
        mats = [vhat_cluster_average(est, ds).matrix, crve_pols(pols_fit(ds), ds).matrix]
        mats += [vhat_superblock(sb, ds).matrix for sb in superblock_averages(ds)]
        for m in mats:
            np.testing.assert_array_equal(m, m.T)
            w = np.linalg.eigvalsh(m)
            assert w.min() >= -1e-10 * max(w.max(), 0.0)


def test_response_scaling_squares_every_matrix():
    rng = np.random.default_rng(34)
    ds = make_dataset(rng, G=5, k=2, n_superblocks=2)
    a = 3.0
    scaled = ClusteredDataset(
        tuple(Cluster(id=c.id, X=c.X, y=a * c.y) for c in ds.clusters),
        ds.superblock_of,
    )
    v0 = vhat_cluster_average(cluster_average(ds), ds).matrix
    v1 = vhat_cluster_average(cluster_average(scaled), scaled).matrix
    np.testing.assert_allclose(v1, a**2 * v0, rtol=1e-9)
    s0 = crve_pols(pols_fit(ds), ds).matrix
    s1 = crve_pols(pols_fit(scaled), scaled).matrix
    np.testing.assert_allclose(s1, a**2 * s0, rtol=1e-9)
    for sb0, sb1 in zip(superblock_averages(ds), superblock_averages(scaled)):
        t0 = vhat_superblock(sb0, ds).matrix
        t1 = vhat_superblock(sb1, scaled).matrix
        np.testing.assert_allclose(t1, a**2 * t0, rtol=1e-9)


def test_single_cluster_vhat_is_zero():
    # with G=1 the residuals are that cluster's own OLS residuals, which are
    # orthogonal to its columns, so the sandwich collapses to zero
    rng = np.random.default_rng(35)
    ds = make_dataset(rng, G=1, k=3)
    v = vhat_cluster_average(cluster_average(ds), ds).matrix
    assert np.abs(v).max() < 1e-18


def test_perfect_fit_gives_zero_matrices():
    rng = np.random.default_rng(36)
    ds = make_dataset(rng, G=4, k=2, noise=0.0)
    assert np.abs(vhat_cluster_average(cluster_average(ds), ds).matrix).max() < 1e-20
    assert np.abs(crve_pols(pols_fit(ds), ds).matrix).max() < 1e-20


def test_singleton_clusters_reduce_crve_to_hc0():
    rng = np.random.default_rng(37)
    n, k = 40, 3
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(k - 1)])
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    ds = ClusteredDataset(
        tuple(Cluster(id=f"r{i}", X=X[i : i + 1], y=y[i : i + 1]) for i in range(n))
    )
    est = pols_fit(ds)
    sigma = crve_pols(est, ds).matrix
    resid = y - X @ est.beta_pols
    bread = np.linalg.inv(X.T @ X)
    hc0 = bread @ (X.T * resid**2) @ X @ bread
    assert rel_frobenius(sigma, hc0) < 1e-10


def test_small_sample_correction_factor():
    rng = np.random.default_rng(38)
    ds = make_dataset(rng, G=6, k=2)
    est = pols_fit(ds)
    plain = crve_pols(est, ds).matrix
    corrected = crve_pols(est, ds, small_sample_correction=True).matrix
    G, n, k = ds.G, ds.n_total, ds.k
    np.testing.assert_allclose(
        corrected, plain * (G / (G - 1)) * ((n - 1) / (n - k)), rtol=1e-14
    )


def test_identical_clusters_vtilde():
    # all clusters in the block identical: residuals at the block mean are
    # each cluster's own OLS residuals, so Vtilde = sandwich / P
    rng = np.random.default_rng(39)
    n, P = 10, 4
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ np.array([1.0, 2.0]) + rng.normal(size=n)
    clusters = tuple(Cluster(id=f"g{i}", X=X, y=y) for i in range(P))
    ds = ClusteredDataset(clusters, {f"g{i}": "blk" for i in range(P)})
    (sb,) = superblock_averages(ds)
    vt = vhat_superblock(sb, ds).matrix
    bread = np.linalg.inv(X.T @ X)
    e = y - X @ sb.beta_tilde
    h = bread @ (X.T @ e)
    np.testing.assert_allclose(vt, np.outer(h, h) / P, rtol=1e-12)


def test_single_cluster_superblock_flagged_degenerate():
    rng = np.random.default_rng(40)
    ds = make_dataset(rng, G=3, k=2)
    singles = ClusteredDataset(ds.clusters, {c.id: c.id for c in ds.clusters})
    for sb in superblock_averages(singles):
        assert vhat_superblock(sb, singles).degenerate


def test_invert_psd_matches_plain_inverse():
    rng = np.random.default_rng(41)
    for _ in range(20):
        k = int(rng.integers(1, 6))
        A = rng.normal(size=(k, k))
        m = A @ A.T + np.eye(k)
        inv = invert_psd(m)
        np.testing.assert_array_equal(inv, inv.T)
        assert rel_frobenius(inv, np.linalg.inv(m)) < 1e-10


def test_invert_psd_clamps_roundoff_negatives():
    # an eigenvalue at -1e-12 of the scale is roundoff, not a defect
    q = np.linalg.qr(np.random.default_rng(42).normal(size=(3, 3)))[0]
    m = q @ np.diag([2.0, 1.0, -1e-12]) @ q.T
    with pytest.raises(ConditioningError, match="condition"):
        # clamping to zero makes the matrix exactly singular downstream
        invert_psd(m)


def test_invert_psd_rejects_indefinite_and_ill_conditioned():
    with pytest.raises(ConditioningError, match="not positive semidefinite"):
        invert_psd(np.diag([1.0, -0.5]))
    with pytest.raises(ConditioningError, match="condition"):
        invert_psd(np.diag([1.0, 1e-14]))
    with pytest.raises(ConditioningError):
        invert_psd(np.zeros((2, 2)))


def test_population_variance_ordering_scalar_designs():
    # k=1 with per-cluster scale a_g: the cluster average has variance 1/G
    # while pooled OLS has sum(a^2)/sum(a)^2, which is never smaller and
    # equals it only when every a_g coincides
    rng = np.random.default_rng(43)
    G = 12
    for trial in range(100):
        a = rng.uniform(0.5, 20.0, size=G)
        V = 1.0 / G
        Sig = float(np.sum(a**2) / np.sum(a) ** 2)
        assert V <= Sig + 1e-15
        if np.ptp(a) > 1e-8:
            assert Sig > V
    equal = np.full(G, 7.3)
    assert abs(np.sum(equal**2) / np.sum(equal) ** 2 - 1.0 / G) < 1e-12


def test_population_variance_dominant_cluster_closed_forms():
    # equicorrelated errors, intercept-only design: with one cluster far
    # larger than the rest the pooled variance exceeds the average's
    a, b = 2.0, 0.8
    for G in (10, 20):
        sizes = np.array([10 * G * G] + [10] * (G - 1), dtype=float)
        V = (a - b) / G**2 * np.sum(1.0 / sizes) + b / G
        Sig = (a - b) / sizes.sum() + b * np.sum(sizes**2) / sizes.sum() ** 2
        assert V < Sig


def test_vhat_consistency_against_long_monte_carlo():
    # fixed nearly balanced design with heavy within-cluster dependence:
    # one draw of the variance estimator should land close to G times the
    # Monte Carlo variance of the average over 20000 redraws
    cfg = DgpConfig(
        G=200, k=2, beta=(1.0, 0.5), dependence=DependenceKind("strong"),
        seed=DEFAULT_SEED,
    )
    design, A, _, _, _ = _prepared(cfg)
    reps = 20000
    sum_w = np.zeros(2)
    sum_ww = np.zeros((2, 2))
    chunk = max(1, int(12_000_000 // design.n_total))
    lo = 0
    while lo < reps:
        hi = min(lo + chunk, reps)
        bdev, _ = _error_blocks(design, A, lo, hi)
        w = bdev.mean(axis=0)  # deviation of the average estimate, per rep
        sum_w += w.sum(axis=1)
        sum_ww += w @ w.T
        lo = hi
    mean_w = sum_w / reps
    target = cfg.G * (sum_ww / reps - np.outer(mean_w, mean_w))
    ds = gen_dataset(design, 0)
    v = vhat_cluster_average(cluster_average(ds), ds).matrix
    assert rel_frobenius(v, target) < 0.10
