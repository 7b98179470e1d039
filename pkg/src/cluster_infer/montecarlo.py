"""Replication engine for empirical size, power, and estimator accuracy.

Two protocols are implemented:

- :func:`run_size_power`: full-vector Wald tests of H0: beta = beta_null for
  the cluster-average and pooled estimators, reporting empirical size, the
  empirical null critical value, raw power at beta_alt, and size-corrected
  power (power evaluated at the empirical critical value).
- :func:`run_constancy`: the superblock parameter-constancy statistic under
  a homogeneous null (u_l identically zero) and, when the configured
  u-distribution is non-degenerate, its power against that heterogeneity.
  Rejection uses the upper-tail normal critical value z_{1-level}.

The hot path is a vectorized tensor pipeline: each cluster's projection
matrices are precomputed once from the frozen design, and replications are
processed in chunks as matrix columns. Per-replication random streams make
the results independent of chunk size and worker count. A slower reference
path that replays replications through the public estimator API is used for
configs that regenerate regressors per replication, and doubles as the
cross-check target in the test suite.

Failed replications (singular per-replication covariance under extreme
draws) are excluded from every rate's denominator and reported; more than 1%
failures aborts the run.
"""

from __future__ import annotations

import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import chi2, norm

from . import covariance as _cov
from . import estimators as _est
from . import hypothesis as _hyp
from .dgp import (
    DependenceKind,
    DgpConfig,
    FrozenDesign,
    Heterogeneity,
    UDistribution,
    gen_dataset,
    gen_design,
    stream,
)
from .errors import (
    ClusterInferError,
    ConditioningError,
    ConfigurationError,
    DegenerateSuperblockError,
    EmptyInputError,
    ExcessiveFailureError,
)

DEFAULT_SEED = 1234
DEFAULT_REPS = 2000
PAPER_SCALE_REPS = 10000
_CHUNK_SCALARS = 12_000_000
_MAX_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class McConfig:
    """One replication study: a design plus the hypothesis and budget."""

    dgp: DgpConfig
    reps: int = DEFAULT_REPS
    level: float = 0.05
    beta_null: tuple[float, ...] | None = None
    beta_alt: tuple[float, ...] | None = None
    workers: int = 1

    def __post_init__(self):
        if self.reps < 100:
            raise ConfigurationError(
                f"reps must be >= 100 for a reportable rate, got {self.reps}"
            )
        if not 0.0 < self.level <= 1.0:
            raise ConfigurationError(f"level must be in (0,1], got {self.level}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        bn = self.dgp.beta if self.beta_null is None else tuple(float(b) for b in self.beta_null)
        if len(bn) != self.dgp.k:
            raise ConfigurationError(
                f"beta_null has length {len(bn)}, expected k={self.dgp.k}"
            )
        object.__setattr__(self, "beta_null", bn)
        if self.beta_alt is not None:
            ba = tuple(float(b) for b in self.beta_alt)
            if len(ba) != self.dgp.k:
                raise ConfigurationError(
                    f"beta_alt has length {len(ba)}, expected k={self.dgp.k}"
                )
            object.__setattr__(self, "beta_alt", ba)


@dataclass(frozen=True)
class MethodRates:
    """Rates for one test method within a report."""

    method: str
    size: float
    mc_se_size: float
    critical_value_asymptotic: float
    critical_value_empirical: float
    power: float | None = None
    mc_se_power: float | None = None
    size_corrected_power: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items()}


@dataclass(frozen=True)
class McReport:
    protocol: str  # "size-power" | "constancy"
    params: dict
    level: float
    reps: int
    reps_used: int
    failures: int
    methods: dict[str, MethodRates]
    design_checksum: str
    wall_time: float
    statistics: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "params": dict(self.params),
            "level": self.level,
            "reps": self.reps,
            "reps_used": self.reps_used,
            "failures": self.failures,
            "methods": {name: m.to_dict() for name, m in self.methods.items()},
            "design_checksum": self.design_checksum,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class RmseReport:
    params: dict
    reps: int
    rmse: dict[str, float]
    rmse_by_component: dict[str, tuple[float, ...]]
    design_checksum: str
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "reps": self.reps,
            "rmse": dict(self.rmse),
            "rmse_by_component": {k: list(v) for k, v in self.rmse_by_component.items()},
            "design_checksum": self.design_checksum,
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# design preparation (cached per process; workers each build their own copy)

_design_for = lru_cache(maxsize=8)(gen_design)


@lru_cache(maxsize=8)
def _prepared(dgp: DgpConfig):
    """Frozen design plus per-cluster projection matrices for the fast path."""
    design = _design_for(dgp)
    A, S = [], []
    for X in design.X:
        Sg = X.T @ X
        try:
            A.append(np.linalg.solve(Sg, X.T))
        except np.linalg.LinAlgError:
            raise ConditioningError(
                "a frozen-design cluster has a singular Gram matrix"
            ) from None
        S.append(Sg)
    Sarr = np.array(S)
    Ssum = Sarr.sum(axis=0)
    try:
        Binv = np.linalg.inv(Ssum)
    except np.linalg.LinAlgError:
        raise ConditioningError("the pooled Gram matrix is singular") from None
    return design, tuple(A), Sarr, Ssum, Binv


def _chunks(lo: int, hi: int, n_total: int):
    step = max(1, int(_CHUNK_SCALARS // max(n_total, 1)))
    for a in range(lo, hi, step):
        yield a, min(hi, a + step)


def _error_blocks(design: FrozenDesign, A, lo: int, hi: int):
    """Per-cluster estimator and moment deviations for reps [lo, hi).

    Returns b (G,k,m) with b[g] = (X_g'X_g)^-1 X_g' eps_g and c (G,k,m) with
    c[g] = X_g' eps_g, columns indexed by replication.
    """
    cfg = design.config
    offs = design.offsets
    ntot = design.n_total
    m = hi - lo
    Z = np.empty((ntot, m))
    for j, rep in enumerate(range(lo, hi)):
        Z[:, j] = stream(cfg.seed, 1, rep).standard_normal(ntot)
    G, k = cfg.G, cfg.k
    b = np.empty((G, k, m))
    c = np.empty((G, k, m))
    for g in range(G):
        lg = design.L[g]
        zs = Z[offs[g] : offs[g + 1], :]
        E = lg[:, None] * zs if lg.ndim == 1 else lg @ zs
        b[g] = A[g] @ E
        c[g] = design.X[g].T @ E
    return b, c


def _u_blocks(design: FrozenDesign, lo: int, hi: int) -> np.ndarray | None:
    """Per-superblock coefficient perturbations, (D,k,m), or None."""
    cfg = design.config
    het = cfg.heterogeneity
    if het is None or het.u_dist.family == "degenerate":
        return None
    m = hi - lo
    u = np.empty((het.D, cfg.k, m))
    for j, rep in enumerate(range(lo, hi)):
        u[:, :, j] = het.u_dist.draw(stream(cfg.seed, 2, rep), het.D, cfg.k)
    return u


def _batched_quadform(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """vecs[i]' mats[i]^-1 vecs[i] per row; NaN where mats[i] is singular."""
    try:
        sol = np.linalg.solve(mats, vecs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.empty_like(vecs)
        for i in range(vecs.shape[0]):
            try:
                sol[i] = np.linalg.solve(mats[i], vecs[i])
            except np.linalg.LinAlgError:
                sol[i] = np.nan
    return np.einsum("mi,mi->m", vecs, sol)


# ---------------------------------------------------------------------------
# size / power protocol

def _worker_size_power(cfg: McConfig, lo: int, hi: int) -> dict[str, np.ndarray]:
    design, A, Sarr, Ssum, Binv = _prepared(cfg.dgp)
    G, k = cfg.dgp.G, cfg.dgp.k
    n = hi - lo
    want_alt = cfg.beta_alt is not None
    delta = (
        np.asarray(cfg.beta_alt) - np.asarray(cfg.beta_null) if want_alt else None
    )
    out = {
        "avg_null": np.empty(n),
        "pols_null": np.empty(n),
    }
    if want_alt:
        out["avg_alt"] = np.empty(n)
        out["pols_alt"] = np.empty(n)
    het = cfg.dgp.heterogeneity
    block_sizes = het.block_sizes if het is not None else None
    for a, bnd in _chunks(lo, hi, design.n_total):
        sl = slice(a - lo, bnd - lo)
        b, c = _error_blocks(design, A, a, bnd)
        u = _u_blocks(design, a, bnd)
        if u is not None:
            ublk = np.repeat(u, block_sizes, axis=0)  # (G,k,m)
            t = b + ublk
            cfull = c + np.einsum("gij,gjm->gim", Sarr, ublk)
        else:
            t, cfull = b, c
        # cluster-average statistic
        w = t.mean(axis=0)  # (k,m) deviation of the average from truth
        s = t - w
        V = np.einsum("gim,gjm->mij", s, s) / G
        out["avg_null"][sl] = G * _batched_quadform(V, w.T)
        # pooled statistic
        P = np.linalg.solve(Ssum, cfull.sum(axis=0))  # (k,m)
        sp = cfull - np.einsum("gij,jm->gim", Sarr, P)
        meat = np.einsum("gim,gjm->mij", sp, sp)
        Sig = Binv @ meat @ Binv
        out["pols_null"][sl] = _batched_quadform(Sig, P.T)
        if want_alt:
            out["avg_alt"][sl] = G * _batched_quadform(V, (w + delta[:, None]).T)
            out["pols_alt"][sl] = _batched_quadform(Sig, (P + delta[:, None]).T)
    return out


def _reference_size_power(cfg: McConfig, lo: int, hi: int) -> dict[str, np.ndarray]:
    """Replay reps through the public estimator API (slow, authoritative)."""
    design = _design_for(cfg.dgp)
    k = cfg.dgp.k
    hyp = _hyp.LinearHypothesis(np.eye(k), np.asarray(cfg.beta_null))
    want_alt = cfg.beta_alt is not None
    n = hi - lo
    out = {"avg_null": np.full(n, np.nan), "pols_null": np.full(n, np.nan)}
    if want_alt:
        out["avg_alt"] = np.full(n, np.nan)
        out["pols_alt"] = np.full(n, np.nan)
    betas = [("null", cfg.beta_null)] + ([("alt", cfg.beta_alt)] if want_alt else [])
    for j, rep in enumerate(range(lo, hi)):
        for tag, beta in betas:
            try:
                ds = gen_dataset(design, rep, beta=np.asarray(beta))
                avg = _est.cluster_average(ds)
                v = _cov.vhat_cluster_average(avg, ds)
                out[f"avg_{tag}"][j] = _hyp.wald_cluster_average(avg, v, hyp).statistic
                pols = _est.pols_fit(ds)
                sig = _cov.crve_pols(pols, ds)
                out[f"pols_{tag}"][j] = _hyp.wald_pols(pols, sig, hyp).statistic
            except ClusterInferError:
                pass  # leave NaN; counted as a failed replication
    return out


def _collect(cfg: McConfig, worker, keys: list[str]) -> dict[str, np.ndarray]:
    """Run a worker over [0, reps), optionally across processes, in rep order."""
    if cfg.workers == 1:
        return worker(cfg, 0, cfg.reps)
    bounds = np.linspace(0, cfg.reps, cfg.workers + 1).astype(int)
    ranges = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    with ProcessPoolExecutor(max_workers=len(ranges)) as ex:
        parts = list(ex.map(worker, [cfg] * len(ranges), *zip(*ranges)))
    return {key: np.concatenate([p[key] for p in parts]) for key in keys}


def _binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n)) if n > 0 else float("nan")


def _rate_pair(
    null_stats: np.ndarray,
    alt_stats: np.ndarray | None,
    level: float,
    crit_asym: float,
    method: str,
) -> MethodRates:
    n = null_stats.size
    size = float(np.mean(null_stats > crit_asym))
    if 0.0 < level < 1.0:
        crit_emp = _hyp.size_corrected_critical_value(null_stats, level)
    else:
        crit_emp = crit_asym  # level >= 1 rejects everything either way
    power = se_power = sc_power = None
    if alt_stats is not None:
        power = float(np.mean(alt_stats > crit_asym))
        sc_power = float(np.mean(alt_stats > crit_emp))
        se_power = _binomial_se(power, alt_stats.size)
        if crit_emp >= crit_asym:
            # size-corrected power cannot exceed raw power at a higher cutoff
            assert sc_power <= power
    return MethodRates(
        method=method,
        size=size,
        mc_se_size=_binomial_se(size, n),
        critical_value_asymptotic=float(crit_asym),
        critical_value_empirical=float(crit_emp),
        power=power,
        mc_se_power=se_power,
        size_corrected_power=sc_power,
    )


def _failure_mask(stats: dict[str, np.ndarray]) -> np.ndarray:
    ok = None
    for arr in stats.values():
        good = np.isfinite(arr)
        ok = good if ok is None else (ok & good)
    return ok


def _check_failures(cfg: McConfig, ok: np.ndarray) -> tuple[int, int]:
    used = int(ok.sum())
    failures = cfg.reps - used
    if failures > _MAX_FAILURE_FRACTION * cfg.reps:
        raise ExcessiveFailureError(
            f"{failures} of {cfg.reps} replications failed estimation "
            f"(more than {_MAX_FAILURE_FRACTION:.0%})"
        )
    return used, failures


def _size_power_params(dgp: DgpConfig) -> dict:
    return {
        "G": dgp.G,
        "N1": dgp.large_cluster_sizes[0] if dgp.large_cluster_sizes else None,
    }


def run_size_power(cfg: McConfig, keep_statistics: bool = False) -> McReport:
    """Empirical size/power of the full-vector Wald tests under a frozen design.

    The null statistics come from data generated at beta_null, the power
    statistics from the same error draws applied at beta_alt. Both the
    cluster-average and pooled methods are evaluated on identical draws.
    """
    t0 = time.perf_counter()
    worker = (
        _reference_size_power if cfg.dgp.regenerate_X_per_rep else _worker_size_power
    )
    keys = ["avg_null", "pols_null"] + (
        ["avg_alt", "pols_alt"] if cfg.beta_alt is not None else []
    )
    stats = _collect(cfg, worker, keys)
    ok = _failure_mask(stats)
    used, failures = _check_failures(cfg, ok)
    crit_asym = float(chi2.isf(cfg.level, cfg.dgp.k)) if cfg.level < 1.0 else 0.0
    methods = {}
    for name, prefix in (("cluster-average", "avg"), ("pols", "pols")):
        alt = stats[f"{prefix}_alt"][ok] if cfg.beta_alt is not None else None
        methods[name] = _rate_pair(
            stats[f"{prefix}_null"][ok], alt, cfg.level, crit_asym, name
        )
    design = _design_for(cfg.dgp)
    return McReport(
        protocol="size-power",
        params=_size_power_params(cfg.dgp),
        level=cfg.level,
        reps=cfg.reps,
        reps_used=used,
        failures=failures,
        methods=methods,
        design_checksum=design.checksum,
        wall_time=time.perf_counter() - t0,
        statistics=stats if keep_statistics else None,
    )


# ---------------------------------------------------------------------------
# constancy protocol

def _null_variant(dgp: DgpConfig) -> DgpConfig:
    """Same frozen design, u_l identically zero."""
    het = dgp.heterogeneity
    null_het = Heterogeneity(
        block_sizes=het.block_sizes, u_dist=UDistribution("degenerate")
    )
    return dataclasses.replace(dgp, heterogeneity=null_het)


def _worker_constancy(cfg: McConfig, lo: int, hi: int) -> dict[str, np.ndarray]:
    design, A, _, _, _ = _prepared(cfg.dgp)
    het = cfg.dgp.heterogeneity
    G, k, D = cfg.dgp.G, cfg.dgp.k, het.D
    p_l = np.asarray(het.block_sizes)
    starts = np.concatenate([[0], np.cumsum(p_l)[:-1]])
    draw_u = het.u_dist.family != "degenerate"
    n = hi - lo
    out = {"z_null": np.empty(n)}
    if draw_u:
        out["z_alt"] = np.empty(n)
    scale = np.sqrt(2.0 * k * D)
    for a, bnd in _chunks(lo, hi, design.n_total):
        sl = slice(a - lo, bnd - lo)
        b, _ = _error_blocks(design, A, a, bnd)
        variants = [("z_null", b)]
        if draw_u:
            u = _u_blocks(design, a, bnd)
            variants.append(("z_alt", b + np.repeat(u, p_l, axis=0)))
        for key, t in variants:
            m = t.shape[2]
            tilde = np.add.reduceat(t, starts, axis=0) / p_l[:, None, None]
            w = t.mean(axis=0)
            t_sb = np.zeros(m)
            for l in range(D):
                block = t[starts[l] : starts[l] + p_l[l]]
                sstar = block - tilde[l]
                Vl = np.einsum("gim,gjm->mij", sstar, sstar) / (p_l[l] ** 2)
                dev = (tilde[l] - w).T
                t_sb += _batched_quadform(Vl, dev)
            out[key][sl] = (t_sb - k * D) / scale
    return out


def _reference_constancy(cfg: McConfig, lo: int, hi: int) -> dict[str, np.ndarray]:
    """Public-API replay of the constancy statistic (slow, authoritative)."""
    het = cfg.dgp.heterogeneity
    draw_u = het.u_dist.family != "degenerate"
    variants = [("z_null", _design_for(_null_variant(cfg.dgp)))]
    if draw_u:
        variants.append(("z_alt", _design_for(cfg.dgp)))
    n = hi - lo
    out = {key: np.full(n, np.nan) for key, _ in variants}
    for j, rep in enumerate(range(lo, hi)):
        for key, design in variants:
            try:
                ds = gen_dataset(design, rep)
                sbs = _est.superblock_averages(ds)
                vts = [_cov.vhat_superblock(sb, ds) for sb in sbs]
                avg = _est.cluster_average(ds)
                out[key][j] = _hyp.superblock_constancy(sbs, vts, avg).statistic
            except ClusterInferError:
                pass
    return out


def _constancy_params(dgp: DgpConfig) -> dict:
    sizes = dgp.heterogeneity.block_sizes
    return {"P": min(sizes), "D": len(sizes)}


def run_constancy(cfg: McConfig, keep_statistics: bool = False) -> McReport:
    """Empirical size (and power) of the superblock constancy test.

    Size comes from homogeneous draws (u_l forced to zero on the same frozen
    design); power, when the configured u-distribution is non-degenerate,
    from redrawing u_l each replication. Rejection is one-sided: Z above the
    upper-tail normal critical value z_{1-level}.
    """
    t0 = time.perf_counter()
    het = cfg.dgp.heterogeneity
    if het is None:
        raise ConfigurationError("constancy protocol needs a heterogeneity config")
    if het.D < 2:
        raise ConfigurationError(f"constancy protocol needs D >= 2 superblocks, got {het.D}")
    small = [i for i, p in enumerate(het.block_sizes) if p < 2]
    if small:
        design = _design_for(cfg.dgp)
        labels = design.superblock_labels()
        raise DegenerateSuperblockError(
            "superblock(s) with fewer than 2 clusters cannot be tested: "
            f"{[labels[i] for i in small]}",
            labels=[labels[i] for i in small],
        )
    worker = (
        _reference_constancy if cfg.dgp.regenerate_X_per_rep else _worker_constancy
    )
    keys = ["z_null"] + (["z_alt"] if het.u_dist.family != "degenerate" else [])
    stats = _collect(cfg, worker, keys)
    ok = _failure_mask(stats)
    used, failures = _check_failures(cfg, ok)
    crit_asym = float(norm.isf(cfg.level)) if cfg.level < 1.0 else -np.inf
    alt = stats["z_alt"][ok] if "z_alt" in stats else None
    rates = _rate_pair(
        stats["z_null"][ok], alt, cfg.level, crit_asym, "superblock-constancy"
    )
    design = _design_for(cfg.dgp)
    return McReport(
        protocol="constancy",
        params=_constancy_params(cfg.dgp),
        level=cfg.level,
        reps=cfg.reps,
        reps_used=used,
        failures=failures,
        methods={"superblock-constancy": rates},
        design_checksum=design.checksum,
        wall_time=time.perf_counter() - t0,
        statistics=stats if keep_statistics else None,
    )


# ---------------------------------------------------------------------------
# estimator accuracy protocol

def run_estimator_rmse(cfg: McConfig) -> RmseReport:
    """Root-mean-squared error of both estimators around the true coefficients.

    With a heterogeneity config the per-superblock perturbations are part of
    the data-generating process and the target stays the configured beta
    (the perturbations have mean zero), so the reported RMSE includes the
    cost each estimator pays for coefficient dispersion.
    """
    if cfg.dgp.regenerate_X_per_rep:
        raise ConfigurationError(
            "estimator-accuracy runs require a frozen design "
            "(regenerate_X_per_rep is not supported here)"
        )
    t0 = time.perf_counter()
    design, A, Sarr, Ssum, _ = _prepared(cfg.dgp)
    G, k = cfg.dgp.G, cfg.dgp.k
    het = cfg.dgp.heterogeneity
    block_sizes = het.block_sizes if het is not None else None
    sq_avg = np.zeros(k)
    sq_pols = np.zeros(k)
    for a, bnd in _chunks(0, cfg.reps, design.n_total):
        b, c = _error_blocks(design, A, a, bnd)
        u = _u_blocks(design, a, bnd)
        if u is not None:
            ublk = np.repeat(u, block_sizes, axis=0)
            t = b + ublk
            cfull = c + np.einsum("gij,gjm->gim", Sarr, ublk)
        else:
            t, cfull = b, c
        w = t.mean(axis=0)  # (k,m) deviation of the cluster average
        sq_avg += (w**2).sum(axis=1)
        P = np.linalg.solve(Ssum, cfull.sum(axis=0))  # pooled deviation
        sq_pols += (P**2).sum(axis=1)
    rmse_avg = np.sqrt(sq_avg / cfg.reps)
    rmse_pols = np.sqrt(sq_pols / cfg.reps)
    return RmseReport(
        params=_size_power_params(cfg.dgp),
        reps=cfg.reps,
        rmse={
            "cluster-average": float(np.sqrt(rmse_avg @ rmse_avg)),
            "pols": float(np.sqrt(rmse_pols @ rmse_pols)),
        },
        rmse_by_component={
            "cluster-average": tuple(float(v) for v in rmse_avg),
            "pols": tuple(float(v) for v in rmse_pols),
        },
        design_checksum=design.checksum,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# reference protocol configurations

def size_power_config(
    G: int,
    N1: int,
    reps: int = DEFAULT_REPS,
    seed: int = DEFAULT_SEED,
    level: float = 0.05,
    beta_null: tuple[float, float] = (1.0, 0.5),
    beta_alt: tuple[float, float] | None = (1.0, 1.6),
    workers: int = 1,
) -> McConfig:
    """Dominant-cluster strong-dependence design for the size/power protocol."""
    dgp = DgpConfig(
        G=G,
        k=2,
        beta=beta_null,
        dependence=DependenceKind("strong"),
        seed=seed,
        large_cluster_sizes=(N1,),
    )
    return McConfig(
        dgp=dgp, reps=reps, level=level, beta_null=beta_null, beta_alt=beta_alt,
        workers=workers,
    )


def constancy_config(
    P: int,
    D: int,
    u_dist: UDistribution,
    reps: int = DEFAULT_REPS,
    seed: int = DEFAULT_SEED,
    level: float = 0.05,
    beta: tuple[float, float] = (1.0, 2.0),
    workers: int = 1,
) -> McConfig:
    """Equal-superblock strong-dependence design for the constancy protocol."""
    dgp = DgpConfig(
        G=P * D,
        k=2,
        beta=beta,
        dependence=DependenceKind("strong"),
        seed=seed,
        heterogeneity=Heterogeneity(block_sizes=(P,) * D, u_dist=u_dist),
    )
    return McConfig(dgp=dgp, reps=reps, level=level, beta_null=beta, workers=workers)


def rmse_config(
    G: int,
    reps: int = DEFAULT_REPS,
    seed: int = DEFAULT_SEED,
    u_sd: float = 0.5,
    workers: int = 1,
) -> McConfig:
    """Dominant-cluster intercept-only design for estimator-accuracy runs.

    One cluster of size G^2 dominates the pooled fit; per-cluster random
    coefficients (singleton superblocks) give the pooled estimator a bias
    term that grows with the dominant cluster's weight while the
    cluster-average estimator keeps shrinking at the 1/sqrt(G) rate.
    """
    dgp = DgpConfig(
        G=G,
        k=1,
        beta=(1.0,),
        dependence=DependenceKind("independent"),
        seed=seed,
        large_cluster_sizes=(G * G,),
        heterogeneity=Heterogeneity(
            block_sizes=(1,) * G, u_dist=UDistribution("normal", u_sd)
        ),
    )
    return McConfig(dgp=dgp, reps=reps, beta_null=(1.0,), workers=workers)


# ---------------------------------------------------------------------------
# report summarization

_SIZE_POWER_COLS = ("size", "critical_value_empirical", "power", "size_corrected_power")


def _summary_rows(reports: list[McReport]) -> tuple[list[str], list[list]]:
    def sort_key(r: McReport):
        p = r.params
        if r.protocol == "size-power":
            return (0, p.get("G") or 0, p.get("N1") or 0)
        return (1, p.get("P") or 0, p.get("D") or 0)

    ordered = sorted(reports, key=sort_key)
    method_names: list[str] = []
    for r in ordered:
        for name in r.methods:
            if name not in method_names:
                method_names.append(name)
    header = ["protocol", "G", "N1", "P", "D", "reps_used", "failures"]
    for name in method_names:
        for col in _SIZE_POWER_COLS:
            header.append(f"{name}.{col}")
    rows = []
    for r in ordered:
        row = [
            r.protocol,
            r.params.get("G"),
            r.params.get("N1"),
            r.params.get("P"),
            r.params.get("D"),
            r.reps_used,
            r.failures,
        ]
        for name in method_names:
            m = r.methods.get(name)
            for col in _SIZE_POWER_COLS:
                row.append(None if m is None else getattr(m, col))
        rows.append(row)
    return header, rows


def summarize(reports: list[McReport], fmt: str = "text") -> str:
    """Render reports as an aligned table, CSV, or JSON, sorted by design."""
    if not reports:
        raise EmptyInputError("no reports to summarize")
    if fmt == "json":
        import json

        def sort_key(r: McReport):
            p = r.params
            return (r.protocol, p.get("G") or p.get("P") or 0, p.get("N1") or p.get("D") or 0)

        return json.dumps([r.to_dict() for r in sorted(reports, key=sort_key)], indent=2)
    header, rows = _summary_rows(reports)
    if fmt == "csv":
        import csv

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
        return buf.getvalue()
    if fmt != "text":
        raise ConfigurationError(f"unknown summary format {fmt!r}")
    display = [header] + [
        ["" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in row]
        for row in rows
    ]
    widths = [max(len(r[i]) for r in display) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in display]
    return "\n".join(lines) + "\n"
