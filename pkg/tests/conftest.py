"""Shared builders for randomized test instances."""

import numpy as np

from cluster_infer import Cluster, ClusteredDataset

# one PASS/FAIL line per shipping criterion, echoed after the test table so
# the verdicts are visible even when pytest swallows per-test stdout
ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(rng, G=6, k=3, n_range=(8, 16), beta=None, n_superblocks=None,
                 noise=1.0):
    """Random well-conditioned dataset: intercept plus standard-normal columns.

    With ``n_superblocks`` set, cluster g goes to superblock g mod that count,
    so every label is hit when G >= n_superblocks.
    """
    if beta is None:
        beta = rng.normal(size=k)
    clusters = []
    for g in range(G):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        cols = [np.ones(n)] + [rng.normal(size=n) for _ in range(k - 1)]
        X = np.column_stack(cols)
        y = X @ beta + noise * rng.normal(size=n)
        clusters.append(Cluster(id=f"g{g}", X=X, y=y))
    sb = None
    if n_superblocks is not None:
        sb = {f"g{g}": f"s{g % n_superblocks}" for g in range(G)}
    return ClusteredDataset(clusters=tuple(clusters), superblock_of=sb)


def blocks_of(ds):
    """(X, y) pairs in dataset order, the shape the oracles take."""
    return [(c.X, c.y) for c in ds.clusters]
