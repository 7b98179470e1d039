"""Synthetic data generators for the replication engine.

A design (cluster sizes, regressor matrices, error-covariance factors) is
generated once from a seed and then *frozen*: every replication reuses the
same X_g and L_g and redraws only the error vectors (and, when configured,
the per-superblock coefficient perturbations u_l). Freezing is what makes
empirical size and power statements about the test, not about design noise.

Randomness is organized as counter-based streams keyed by
``SeedSequence(seed, spawn_key=(purpose, index))``:

- purpose 0, index g: everything frozen into cluster g's design (its size,
  covariance entries, regressor draws), in that order;
- purpose 1, index rep: the stacked standard-normal error vector for one
  replication, split across clusters by offset;
- purpose 2, index rep: the (D, k) coefficient perturbations for one
  replication;
- purpose 3, index rep: regenerated regressors when
  ``regenerate_X_per_rep`` is set.

Because a replication's draws depend only on (seed, purpose, rep), results
are identical for any worker count or chunking of the replication loop.

Four error-dependence kinds are available. The ``strong`` kind draws
Omega_g = M_g M_g' with i.i.d. Unif[-5, 10] entries in M_g; its largest
eigenvalue grows like the square of the cluster size and its leading
eigenvector is (almost surely) sign-constant. The other three are synthetic
comparison points with bounded or slowly growing top eigenvalues:
``independent`` (identity), ``weak`` (correlation 0.5^|i-j|), and
``semi-strong`` (one common factor scaled so the top eigenvalue grows like
n^a for a configured exponent a in (0, 1)).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .dataset import Cluster, ClusteredDataset
from .errors import ConfigurationError

DEPENDENCE_KINDS = ("strong", "semi-strong", "weak", "independent")
U_FAMILIES = ("degenerate", "uniform", "normal")


def stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    """Counter-based generator for one (purpose, index) slot under a seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(purpose, index))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DependenceKind:
    """Error-dependence family, with the growth exponent for semi-strong."""

    variant: str
    exponent: float | None = None

    def __post_init__(self):
        if self.variant not in DEPENDENCE_KINDS:
            raise ConfigurationError(
                f"unknown dependence kind {self.variant!r}; expected one of {DEPENDENCE_KINDS}"
            )
        if self.variant == "semi-strong":
            if self.exponent is None or not 0.0 < self.exponent < 1.0:
                raise ConfigurationError(
                    f"semi-strong dependence needs an exponent in (0,1), got {self.exponent}"
                )
        elif self.exponent is not None:
            raise ConfigurationError(f"{self.variant} dependence takes no exponent")


@dataclass(frozen=True)
class UDistribution:
    """Distribution of the per-superblock coefficient perturbation u_l.

    family "uniform" draws Unif(-scale, scale) per component, "normal" draws
    N(0, scale^2), "degenerate" is identically zero (the homogeneous model).
    """

    family: str
    scale: float = 0.0

    def __post_init__(self):
        if self.family not in U_FAMILIES:
            raise ConfigurationError(
                f"unknown u-distribution {self.family!r}; expected one of {U_FAMILIES}"
            )
        if self.scale < 0:
            raise ConfigurationError(f"u-distribution scale must be >= 0, got {self.scale}")
        if self.family == "degenerate" and self.scale != 0.0:
            raise ConfigurationError("degenerate u-distribution must have scale 0")

    def draw(self, rng: np.random.Generator, D: int, k: int) -> np.ndarray:
        if self.family == "uniform":
            return rng.uniform(-self.scale, self.scale, size=(D, k))
        if self.family == "normal":
            return rng.normal(0.0, self.scale, size=(D, k))
        return np.zeros((D, k))

    @property
    def variance(self) -> float:
        if self.family == "uniform":
            return self.scale**2 / 3.0
        if self.family == "normal":
            return self.scale**2
        return 0.0


@dataclass(frozen=True)
class Heterogeneity:
    """Superblock partition plus the u_l distribution."""

    block_sizes: tuple[int, ...]  # P_l, clusters per superblock, in order
    u_dist: UDistribution

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(p) for p in self.block_sizes))
        if len(self.block_sizes) < 1 or any(p < 1 for p in self.block_sizes):
            raise ConfigurationError(f"invalid superblock sizes {self.block_sizes}")

    @property
    def D(self) -> int:
        return len(self.block_sizes)


@dataclass(frozen=True)
class DgpConfig:
    """Full description of one synthetic design."""

    G: int
    k: int
    beta: tuple[float, ...]
    dependence: DependenceKind
    seed: int
    large_cluster_sizes: tuple[int, ...] = ()
    small_size_range: tuple[int, int] = (25, 50)
    heterogeneity: Heterogeneity | None = None
    regenerate_X_per_rep: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(
            self, "large_cluster_sizes", tuple(int(n) for n in self.large_cluster_sizes)
        )
        object.__setattr__(
            self, "small_size_range", tuple(int(n) for n in self.small_size_range)
        )
        if self.G < 1:
            raise ConfigurationError(f"G must be >= 1, got {self.G}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if len(self.beta) != self.k:
            raise ConfigurationError(f"beta has length {len(self.beta)}, expected k={self.k}")
        if len(self.large_cluster_sizes) > self.G:
            raise ConfigurationError("more large clusters than clusters")
        lo, hi = self.small_size_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad small-size range {self.small_size_range}")
        if lo < self.k or any(n < self.k for n in self.large_cluster_sizes):
            raise ConfigurationError("every cluster size must be at least k")
        if self.heterogeneity is not None and sum(self.heterogeneity.block_sizes) != self.G:
            raise ConfigurationError(
                f"superblock sizes sum to {sum(self.heterogeneity.block_sizes)}, expected G={self.G}"
            )


@dataclass(frozen=True)
class FrozenDesign:
    """Per-cluster regressors and covariance factors, fixed across reps.

    ``L`` holds the error mixing factor for each cluster: a lower-triangular
    Cholesky factor of Omega_g, except for independent errors where a 1-D
    vector of ones stands in for the identity (a dense identity at large
    cluster sizes would be pure waste).
    """

    config: DgpConfig
    ids: tuple[str, ...]
    sizes: tuple[int, ...]
    X: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]
    checksum: str
    jittered: tuple[int, ...] = ()

    @property
    def n_total(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def superblock_labels(self) -> tuple[str, ...] | None:
        het = self.config.heterogeneity
        if het is None:
            return None
        width = len(str(het.D - 1)) if het.D > 1 else 1
        return tuple(f"b{i:0{width}d}" for i in range(het.D))

    def superblock_of(self) -> dict[str, str] | None:
        """Cluster-id -> superblock-label map (contiguous partition)."""
        het = self.config.heterogeneity
        if het is None:
            return None
        labels = self.superblock_labels()
        out: dict[str, str] = {}
        g = 0
        for l, p in enumerate(het.block_sizes):
            for _ in range(p):
                out[self.ids[g]] = labels[l]
                g += 1
        return out

    def block_index(self) -> np.ndarray | None:
        """Superblock index of each cluster, aligned with ``ids``."""
        het = self.config.heterogeneity
        if het is None:
            return None
        return np.repeat(np.arange(het.D), het.block_sizes)


def gen_strong_cov(n: int, rng: np.random.Generator) -> np.ndarray:
    """Factor M (n x n) of a strongly dependent covariance Omega = M M'.

    Entries are i.i.d. Unif[-5, 10]; the positive mean makes the top
    eigenvalue of Omega grow like n^2 with a sign-constant leading
    eigenvector.
    """
    if n < 1:
        raise ConfigurationError(f"cluster size must be >= 1, got {n}")
    return rng.uniform(-5.0, 10.0, size=(n, n))


def gen_dependence_cov(n: int, kind: DependenceKind, rng: np.random.Generator) -> np.ndarray:
    """Dense covariance matrix for one cluster under the given kind."""
    if n < 1:
        raise ConfigurationError(f"cluster size must be >= 1, got {n}")
    if kind.variant == "strong":
        m = gen_strong_cov(n, rng)
        return m @ m.T
    if kind.variant == "independent":
        return np.eye(n)
    if kind.variant == "weak":
        return toeplitz(0.5 ** np.arange(n))
    # semi-strong: identity plus a common factor scaled so the top
    # eigenvalue equals n^exponent exactly
    c = (float(n) ** kind.exponent - 1.0) / n
    return np.eye(n) + c * np.ones((n, n))


def _chol_with_jitter(om: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return np.linalg.cholesky(om), False
    except np.linalg.LinAlgError:
        n = om.shape[0]
        jitter = 1e-10 * np.trace(om) / n
        return np.linalg.cholesky(om + jitter * np.eye(n)), True


def _cov_factor(
    n: int, kind: DependenceKind, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """Error mixing factor for one cluster; 1-D ones marker for independent."""
    if kind.variant == "independent":
        return np.ones(n), False
    return _chol_with_jitter(gen_dependence_cov(n, kind, rng))


def _eigen_sign_column(om: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Second regressor column for a dominant cluster under strong dependence.

    Aligns the column with the signs of Omega's leading eigenvector so the
    regressor loads on the strongest error direction: entries are
    Unif(2, 10) scaled by the eigenvector's componentwise signs. The
    eigenvector's overall sign is fixed by making its largest-magnitude
    component positive; exact zeros (measure zero) count as positive.
    """
    _, vecs = np.linalg.eigh(om)
    p = vecs[:, -1]
    i = int(np.argmax(np.abs(p)))
    if p[i] < 0:
        p = -p
    signs = np.where(p >= 0, 1.0, -1.0)
    c = rng.uniform(2.0, 10.0, size=om.shape[0])
    return c * signs


def _draw_regressor_columns(
    n: int, k: int, rng: np.random.Generator, eigen_col: np.ndarray | None
) -> np.ndarray:
    """Intercept plus k-1 drawn columns; eigen_col replaces the first draw."""
    cols = [np.ones(n)]
    start = 1
    if eigen_col is not None:
        cols.append(eigen_col)
        start = 2
    for _ in range(start, k):
        mu = rng.uniform(10.0, 100.0)
        omega2 = rng.uniform(200.0, 300.0)
        cols.append(rng.normal(mu, np.sqrt(omega2), size=n))
    return np.column_stack(cols)


def gen_design(config: DgpConfig) -> FrozenDesign:
    """Generate the frozen design for a configuration.

    Per cluster, one stream supplies (in order) the size draw for small
    clusters, the covariance entries under strong dependence, then the
    regressor draws. Large clusters take their sizes from the config without
    consuming a draw. Under strong dependence a large cluster's second
    column uses the eigenvector-sign construction; all other columns are
    normal with cluster-specific random location and scale.
    """
    n_large = len(config.large_cluster_sizes)
    lo, hi = config.small_size_range
    width = max(4, len(str(config.G - 1)))
    ids, sizes, xs, ls, jittered = [], [], [], [], []
    for g in range(config.G):
        rng = stream(config.seed, 0, g)
        if g < n_large:
            n = config.large_cluster_sizes[g]
        else:
            n = int(rng.integers(lo, hi + 1))
        eigen_col = None
        if config.dependence.variant == "strong":
            om = gen_dependence_cov(n, config.dependence, rng)
            factor, jit = _chol_with_jitter(om)
            if g < n_large and config.k >= 2:
                eigen_col = _eigen_sign_column(om, rng)
        else:
            factor, jit = _cov_factor(n, config.dependence, rng)
        X = _draw_regressor_columns(n, config.k, rng, eigen_col)
        ids.append(f"g{g:0{width}d}")
        sizes.append(n)
        xs.append(X)
        ls.append(factor)
        if jit:
            jittered.append(g)
    checksum = _design_checksum(ids, sizes, xs, ls)
    return FrozenDesign(
        config=config,
        ids=tuple(ids),
        sizes=tuple(sizes),
        X=tuple(xs),
        L=tuple(ls),
        checksum=checksum,
        jittered=tuple(jittered),
    )


def gen_regressors_table1(config: DgpConfig) -> FrozenDesign:
    """Frozen design for the dominant-cluster strong-dependence protocol.

    Thin wrapper over :func:`gen_design` that insists on the protocol's
    preconditions: strong dependence (the eigenvector construction needs the
    error covariance) and at least one large cluster.
    """
    if config.dependence.variant != "strong":
        raise ConfigurationError(
            "the dominant-cluster regressor scheme requires strong dependence"
        )
    if not config.large_cluster_sizes:
        raise ConfigurationError("config declares no large cluster sizes")
    return gen_design(config)


def _design_checksum(ids, sizes, xs, ls) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(",".join(ids).encode())
    h.update(np.asarray(sizes, dtype=np.int64).tobytes())
    for x in xs:
        h.update(x.tobytes())
    for l in ls:
        h.update(l.tobytes())
    return h.hexdigest()


def _regenerated_X(design: FrozenDesign, rep_index: int) -> list[np.ndarray]:
    """Per-replication regressor redraw (sizes and covariances stay frozen)."""
    cfg = design.config
    rng = stream(cfg.seed, 3, rep_index)
    out = []
    for g, n in enumerate(design.sizes):
        eigen_col = None
        if cfg.dependence.variant == "strong" and g < len(cfg.large_cluster_sizes) and cfg.k >= 2:
            lg = design.L[g]
            eigen_col = _eigen_sign_column(lg @ lg.T, rng)
        out.append(_draw_regressor_columns(n, cfg.k, rng, eigen_col))
    return out


def gen_dataset(
    design: FrozenDesign, rep_index: int, beta: np.ndarray | None = None
) -> ClusteredDataset:
    """Materialize one replication as a ClusteredDataset.

    Errors come from the replication's own stream as one stacked
    standard-normal vector mixed through each cluster's factor; with
    heterogeneity configured, per-superblock perturbations u_l shift the
    coefficient vector cluster-wise. ``beta`` overrides the config's
    coefficient vector (used for power runs on the same frozen design).
    """
    if rep_index < 0:
        raise ConfigurationError(f"rep_index must be >= 0, got {rep_index}")
    cfg = design.config
    b = np.asarray(cfg.beta if beta is None else beta, dtype=np.float64)
    if b.shape != (cfg.k,):
        raise ConfigurationError(f"beta has shape {b.shape}, expected ({cfg.k},)")
    z = stream(cfg.seed, 1, rep_index).standard_normal(design.n_total)
    offsets = design.offsets
    u = None
    block_of = None
    if cfg.heterogeneity is not None:
        u = cfg.heterogeneity.u_dist.draw(
            stream(cfg.seed, 2, rep_index), cfg.heterogeneity.D, cfg.k
        )
        block_of = design.block_index()
    xs = _regenerated_X(design, rep_index) if cfg.regenerate_X_per_rep else design.X
    clusters = []
    for g in range(cfg.G):
        lg = design.L[g]
        zg = z[offsets[g] : offsets[g + 1]]
        eps = lg * zg if lg.ndim == 1 else lg @ zg
        bg = b if u is None else b + u[block_of[g]]
        y = xs[g] @ bg + eps
        clusters.append(Cluster(id=design.ids[g], X=xs[g], y=y))
    return ClusteredDataset(clusters=tuple(clusters), superblock_of=design.superblock_of())
