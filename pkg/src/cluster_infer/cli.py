"""Command-line interface: analyze, constancy, simulate.

Conventions shared by all commands:

- stdout carries data (a single JSON document per run); stderr carries
  diagnostics and human-readable summaries.
- every JSON document embeds a manifest (command, resolved configuration,
  seed, input/design checksum, library version); wall time lives only in
  the manifest's ``wall_time_seconds`` field so outputs are otherwise
  byte-reproducible for identical flags and seed.
- exit codes: 0 success; 2 usage, schema, parse, or configuration problems;
  3 singular clusters or degenerate superblocks (ids/labels in the message);
  4 numerical breakdown (ill-conditioning, excessive replication failures).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from . import __version__
from .covariance import crve_pols, vhat_cluster_average, vhat_superblock
from .dataset import (
    MODEL_NAMES,
    ClusteredDataset,
    CsvSchema,
    ModelSpec,
    _parse_numeric,
    apply_model_spec,
    filter_min_cluster_size,
    group_rows,
    load_csv,
)
from .dgp import UDistribution
from .errors import (
    ClusterInferError,
    ConditioningError,
    ConfigurationError,
    DegenerateSuperblockError,
    EmptyInputError,
    EmptyResultError,
    ExcessiveFailureError,
    HypothesisError,
    ParseError,
    SchemaError,
    SingularClusterError,
    SingularDesignError,
    TransformError,
)
from .estimators import cluster_average, pols_fit, superblock_averages
from .hypothesis import (
    LinearHypothesis,
    TestResult,
    superblock_constancy,
    wald_cluster_average,
    wald_pols,
)
from .montecarlo import (
    DEFAULT_REPS,
    DEFAULT_SEED,
    PAPER_SCALE_REPS,
    constancy_config,
    run_constancy,
    run_size_power,
    size_power_config,
    summarize,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SINGULAR = 3
EXIT_NUMERIC = 4

_USAGE_ERRORS = (
    SchemaError,
    ParseError,
    EmptyInputError,
    EmptyResultError,
    TransformError,
    ConfigurationError,
    HypothesisError,
)
_DATA_ERRORS = (SingularClusterError, SingularDesignError, DegenerateSuperblockError)
_NUMERIC_ERRORS = (ConditioningError, ExcessiveFailureError)


def parse_hypothesis(text: str) -> LinearHypothesis:
    """Parse a matrix literal "R-row; R-row; ...; r".

    Rows are ';'-separated, entries whitespace-separated, and the final
    block is the right-hand side r (one entry per R row). Errors name the
    offending block and entry positions.
    """
    blocks = [b.strip() for b in text.split(";")]
    if len(blocks) < 2:
        raise HypothesisError(
            f"hypothesis {text!r}: expected at least one R row and an r block "
            "separated by ';'"
        )
    *row_blocks, r_block = blocks

    def parse_block(block: str, position: str) -> list[float]:
        tokens = block.split()
        if not tokens:
            raise HypothesisError(f"hypothesis {position} is empty")
        vals = []
        for j, tok in enumerate(tokens):
            try:
                vals.append(float(tok))
            except ValueError:
                raise HypothesisError(
                    f"hypothesis {position}, entry {j + 1}: {tok!r} is not a number"
                ) from None
        return vals

    rows = [parse_block(b, f"row {i + 1}") for i, b in enumerate(row_blocks)]
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise HypothesisError(
                f"hypothesis row {i + 1} has {len(row)} entries, row 1 has {width}"
            )
    r = parse_block(r_block, "r block (last)")
    if len(r) != len(rows):
        raise HypothesisError(
            f"hypothesis r block has {len(r)} entries but R has {len(rows)} rows"
        )
    return LinearHypothesis(R=np.asarray(rows), r=np.asarray(r))


def _file_checksum(path: str) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(command: str, config: dict, seed, checksum: str, wall: float) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "design_checksum": checksum,
        "version": __version__,
        "wall_time_seconds": wall,
    }


def _emit(doc: dict, out_path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)


def _test_result_dict(t: TestResult) -> dict:
    doc = {
        "method": t.method,
        "statistic": t.statistic,
        "df": t.df,
        "p_value": t.p_value,
        "reject_at": {f"{lvl:g}": dec for lvl, dec in sorted(t.reject_at.items())},
    }
    if t.details:
        doc["details"] = dict(t.details)
    return doc


def _load_model_dataset(
    path: str,
    spec: ModelSpec,
    cluster_col: str,
    superblock_col: str | None,
) -> ClusteredDataset:
    """Read raw expenditure columns, apply the model transform, group rows."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = [cluster_col, "food", "total"]
    if spec.include_hhsize:
        needed.append("hhsize")
    if superblock_col is not None:
        needed.append(superblock_col)
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing} (found {list(df.columns)})")
    if len(df) == 0:
        raise EmptyInputError(f"{path}: no data rows")
    numeric = {"food": _parse_numeric(df["food"], "food"),
               "total": _parse_numeric(df["total"], "total")}
    if spec.include_hhsize:
        numeric["hhsize"] = _parse_numeric(df["hhsize"], "hhsize")
    y, X = apply_model_spec(pd.DataFrame(numeric), spec)
    sb = df[superblock_col].to_numpy() if superblock_col is not None else None
    return group_rows(df[cluster_col].to_numpy(), y, X, sb)


def _covariance_dict(matrix: np.ndarray, scale_note: str) -> dict:
    return {"matrix": matrix.tolist(), "scale_note": scale_note}


def _resolve_workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get("CLUSTER_INFER_WORKERS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(
                f"CLUSTER_INFER_WORKERS={env!r} is not an integer"
            ) from None
    return 1


# ---------------------------------------------------------------------------
# analyze

def _build_analysis_dataset(args) -> tuple[ClusteredDataset, dict]:
    superblock_col = getattr(args, "superblock_col", None)
    if args.model is not None:
        spec = ModelSpec(name=args.model, include_hhsize=args.hhsize)
        ds = _load_model_dataset(args.csv, spec, args.cluster_col, superblock_col)
        echo = {"model": args.model, "hhsize": args.hhsize}
    else:
        if not args.y_col or not args.x_cols:
            raise ConfigurationError(
                "raw mode needs --y-col and --x-cols (or choose --model)"
            )
        schema = CsvSchema(
            cluster_col=args.cluster_col,
            y_col=args.y_col,
            x_cols=tuple(args.x_cols.split(",")),
            superblock_col=superblock_col,
            add_intercept=args.intercept,
        )
        ds = load_csv(args.csv, schema)
        echo = {
            "y_col": args.y_col,
            "x_cols": args.x_cols,
            "intercept": args.intercept,
        }
    m = args.min_cluster_size if args.min_cluster_size is not None else ds.k + 1
    ds = filter_min_cluster_size(ds, m)
    echo.update(
        {
            "csv": args.csv,
            "cluster_col": args.cluster_col,
            "superblock_col": superblock_col,
            "min_cluster_size": m,
        }
    )
    return ds, echo


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    ds, echo = _build_analysis_dataset(args)
    avg = cluster_average(ds)
    vg = vhat_cluster_average(avg, ds)
    pols = pols_fit(ds)
    sigma = crve_pols(pols, ds, small_sample_correction=args.crve_correction)
    doc = {
        "G": ds.G,
        "n_total": ds.n_total,
        "k": ds.k,
        "estimates": {
            "cluster_average": {
                "beta": avg.beta_bar_hat.tolist(),
                "covariance": _covariance_dict(
                    vg.matrix / avg.G,
                    "variance of the cluster-average estimate itself",
                ),
            },
            "pols": {
                "beta": pols.beta_pols.tolist(),
                "covariance": _covariance_dict(sigma.matrix, sigma.scale_note),
            },
        },
    }
    echo["crve_correction"] = args.crve_correction
    echo["hypothesis"] = args.hypothesis
    if args.hypothesis is not None:
        hyp = parse_hypothesis(args.hypothesis)
        doc["tests"] = {
            "cluster-average": _test_result_dict(wald_cluster_average(avg, vg, hyp)),
            "pols": _test_result_dict(wald_pols(pols, sigma, hyp)),
        }
    manifest = _manifest(
        "analyze", echo, None, _file_checksum(args.csv), time.perf_counter() - t0
    )
    _emit({"manifest": manifest, **doc}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# constancy

def cmd_constancy(args) -> int:
    t0 = time.perf_counter()
    if args.superblock_col is None:
        raise ConfigurationError("constancy needs --superblock-col")
    models = list(MODEL_NAMES) if args.model == "all" else [args.model]
    rows = []
    for name in models:
        spec = ModelSpec(name=name, include_hhsize=args.hhsize)
        ds = _load_model_dataset(args.csv, spec, args.cluster_col, args.superblock_col)
        m = args.min_cluster_size if args.min_cluster_size is not None else ds.k + 1
        ds = filter_min_cluster_size(ds, m)
        avg = cluster_average(ds)
        pols = pols_fit(ds)
        sbs = superblock_averages(ds)
        vts = [vhat_superblock(sb, ds) for sb in sbs]
        res = superblock_constancy(sbs, vts, avg, two_sided=args.two_sided)
        rows.append(
            {
                "model": name,
                "G": ds.G,
                "D": len(sbs),
                "beta_bar": avg.beta_bar_hat.tolist(),
                "beta_pols": pols.beta_pols.tolist(),
                "constancy": _test_result_dict(res),
            }
        )
        sys.stderr.write(
            f"{name}: Z = {res.statistic:.3f}, p = {res.p_value:.4f} "
            f"(G={ds.G}, D={len(sbs)})\n"
        )
    echo = {
        "csv": args.csv,
        "model": args.model,
        "hhsize": args.hhsize,
        "cluster_col": args.cluster_col,
        "superblock_col": args.superblock_col,
        "min_cluster_size": args.min_cluster_size,
        "two_sided": args.two_sided,
    }
    manifest = _manifest(
        "constancy", echo, None, _file_checksum(args.csv), time.perf_counter() - t0
    )
    _emit({"manifest": manifest, "models": rows}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    workers = _resolve_workers(args)
    reps = PAPER_SCALE_REPS if args.paper_scale else args.reps
    if args.table == 1:
        if args.G is None or args.N1 is None:
            raise ConfigurationError("--table 1 needs --G and --N1")
        if args.P is not None or args.D is not None:
            raise ConfigurationError("--P/--D apply to --table 2 only")
        cfg = size_power_config(
            G=args.G,
            N1=args.N1,
            reps=reps,
            seed=args.seed,
            level=args.level,
            beta_alt=None if args.size_only else (1.0, 1.6),
            workers=workers,
        )
        report = run_size_power(cfg)
        echo = {"table": 1, "G": args.G, "N1": args.N1}
    else:
        if args.P is None or args.D is None:
            raise ConfigurationError("--table 2 needs --P and --D")
        if args.G is not None or args.N1 is not None:
            raise ConfigurationError("--G/--N1 apply to --table 1 only")
        u_dist = UDistribution(family=args.u_family, scale=args.u_scale)
        cfg = constancy_config(
            P=args.P,
            D=args.D,
            u_dist=u_dist,
            reps=reps,
            seed=args.seed,
            level=args.level,
            workers=workers,
        )
        report = run_constancy(cfg)
        echo = {
            "table": 2,
            "P": args.P,
            "D": args.D,
            "u_family": args.u_family,
            "u_scale": args.u_scale,
        }
    echo.update({"reps": reps, "level": args.level, "workers": workers})
    sys.stderr.write(summarize([report]))
    payload = report.to_dict()
    payload.pop("wall_time")  # timing lives only in the manifest
    manifest = _manifest(
        "simulate", echo, args.seed, report.design_checksum, time.perf_counter() - t0
    )
    _emit({"manifest": manifest, "report": payload}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_data_flags(p: argparse.ArgumentParser, for_constancy: bool) -> None:
    p.add_argument("csv", help="input CSV file (UTF-8, header row required)")
    p.add_argument("--cluster-col", default="cluster", help="cluster id column")
    p.add_argument(
        "--superblock-col",
        default="superblock" if for_constancy else None,
        help="superblock label column",
    )
    p.add_argument(
        "--min-cluster-size",
        type=int,
        default=None,
        metavar="M",
        help="drop clusters smaller than M (default: k+1)",
    )
    p.add_argument(
        "--hhsize",
        action="store_true",
        help="append the hhsize column to the model regressors",
    )
    p.add_argument("--out", default=None, help="also write the JSON document here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cluster-infer",
        description=(
            "Cluster-average regression estimation and inference for one-way "
            "clustered data"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser(
        "analyze",
        help="estimate both methods on a CSV and test a linear hypothesis",
    )
    _add_data_flags(pa, for_constancy=False)
    pa.add_argument(
        "--model",
        choices=MODEL_NAMES,
        default=None,
        help="expenditure-data transform (columns food, total[, hhsize])",
    )
    pa.add_argument("--raw", action="store_true", help="use --y-col/--x-cols as-is")
    pa.add_argument("--y-col", default=None, help="response column (raw mode)")
    pa.add_argument(
        "--x-cols", default=None, help="comma-separated regressor columns (raw mode)"
    )
    pa.add_argument(
        "--intercept",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="prepend an intercept column in raw mode",
    )
    pa.add_argument(
        "--hypothesis",
        default=None,
        metavar="'R;r'",
        help="linear hypothesis, rows ';'-separated, entries whitespace, last block r",
    )
    pa.add_argument(
        "--crve-correction",
        action="store_true",
        help="apply the G/(G-1)*(N-1)/(N-k) small-sample factor to the pooled sandwich",
    )
    pa.set_defaults(func=cmd_analyze)

    pc = sub.add_parser(
        "constancy", help="superblock parameter-constancy tests per model"
    )
    _add_data_flags(pc, for_constancy=True)
    pc.add_argument(
        "--model",
        choices=MODEL_NAMES + ("all",),
        default="all",
        help="one transform or 'all' for the full per-model table",
    )
    pc.add_argument(
        "--two-sided",
        action="store_true",
        help="two-sided normal p-value instead of the upper tail",
    )
    pc.set_defaults(func=cmd_constancy)

    ps = sub.add_parser("simulate", help="replication studies on synthetic designs")
    ps.add_argument("--table", type=int, choices=(1, 2), required=True,
                    help="1 = size/power protocol, 2 = constancy protocol")
    ps.add_argument("--G", type=int, default=None, help="cluster count (table 1)")
    ps.add_argument("--N1", type=int, default=None, help="dominant cluster size (table 1)")
    ps.add_argument("--P", type=int, default=None, help="clusters per superblock (table 2)")
    ps.add_argument("--D", type=int, default=None, help="superblock count (table 2)")
    ps.add_argument("--reps", type=int, default=DEFAULT_REPS)
    ps.add_argument(
        "--paper-scale",
        action="store_true",
        help=f"run {PAPER_SCALE_REPS} replications regardless of --reps",
    )
    ps.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ps.add_argument("--level", type=float, default=0.05)
    ps.add_argument(
        "--size-only", action="store_true", help="skip the power pass (table 1)"
    )
    ps.add_argument(
        "--u-family",
        choices=("degenerate", "uniform", "normal"),
        default="degenerate",
        help="coefficient-perturbation family for table 2 power runs",
    )
    ps.add_argument("--u-scale", type=float, default=0.0,
                    help="half-width (uniform) or standard deviation (normal)")
    ps.add_argument("--workers", type=int, default=None,
                    help="process count (default: $CLUSTER_INFER_WORKERS or 1)")
    ps.add_argument("--out", default=None, help="also write the JSON document here")
    ps.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SINGULAR
    except _NUMERIC_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except ClusterInferError as exc:  # base-class fallback
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
