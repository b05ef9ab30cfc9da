"""Array-in/record-out wrappers around the pcfilter command line.

Every function here marshals its arguments into the file formats the
command line consumes, runs pcfilter in a subprocess, and parses the
delimited output back into native records.  No statistic is computed in
this layer; the subprocess boundary is the whole design, and it also
means each call releases the interpreter lock while the core computes,
so wrappers are safe to drive from worker threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "py_analyze",
    "py_diagnose_kappa_star",
    "py_simulate",
    "py_tune_kappa",
    "__version__",
]

_REPORT_COLUMNS = ("hypothesis_id", "S", "F", "adjusted", "rejected")
_COORD_COLUMNS = ("chromosome", "base_pair")


def _run_cli(args: list[str]) -> str:
    """Run one pcfilter invocation; raise RuntimeError with the core message."""
    proc = subprocess.run(
        [sys.executable, "-m", "pcfilter.cli", *args],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        lines = [line for line in proc.stderr.splitlines() if line.strip()]
        message = lines[-1] if lines else f"pcfilter exited with {proc.returncode}"
        # the CLI prefixes its own name; strip it so callers see the core text
        marker = "error: "
        if marker in message:
            message = message.split(marker, 1)[1]
        raise RuntimeError(message)
    return proc.stdout


def _write_studies(p_matrix, tmpdir: str) -> list[str]:
    """One TSV per matrix row; repr floats survive the text round trip exactly."""
    matrix = np.asarray(p_matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError("p_matrix must be a non-empty 2-D array")
    if not np.isfinite(matrix).all():
        raise ValueError("p_matrix entries must be finite")
    n, m = matrix.shape
    paths = []
    for i in range(n):
        path = os.path.join(tmpdir, f"s{i + 1}.tsv")
        with open(path, "w", newline="") as handle:
            handle.write("id\tpvalue\n")
            row = matrix[i].tolist()
            for j in range(m):
                handle.write(f"h{j:07d}\t{row[j]!r}\n")
        paths.append(path)
    return paths


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, list(reader)


@dataclass(frozen=True)
class BoundReport:
    """Native mirror of the core per-hypothesis analysis report."""

    procedure: str
    r: int
    n: int
    m: int
    alpha: float
    metric: str
    kappa: float | None
    combiner: str
    dropped_count: int
    gamma_e: float
    hypothesis_ids: list[str]
    S: list[float]
    F: list[float]
    adjusted: list[float]
    rejected: list[bool]
    coords: dict = field(default_factory=dict)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected)

    @property
    def rejected_ids(self) -> tuple[str, ...]:
        return tuple(
            hid for hid, flag in zip(self.hypothesis_ids, self.rejected) if flag
        )


def _parse_report(out_dir: str) -> BoundReport:
    with open(os.path.join(out_dir, "report.json")) as handle:
        header = json.load(handle)
    columns, rows = _read_rows(os.path.join(out_dir, "report.csv"))
    has_coords = tuple(columns) == _REPORT_COLUMNS + _COORD_COLUMNS
    ids, svals, fvals, adjusted, rejected, coords = [], [], [], [], [], {}
    for row in rows:
        ids.append(row[0])
        svals.append(float(row[1]))
        fvals.append(float(row[2]) if row[2] else math.nan)
        adjusted.append(float(row[3]))
        rejected.append(row[4] == "1")
        if has_coords and row[5]:
            coords[row[0]] = (int(row[5]), int(row[6]))
    return BoundReport(
        procedure=header["procedure"],
        r=int(header["r"]),
        n=int(header["n"]),
        m=int(header["m"]),
        alpha=float(header["alpha"]),
        metric=header["metric"],
        kappa=None if header["kappa"] is None else float(header["kappa"]),
        combiner=header["combiner"],
        dropped_count=int(header["dropped_count"]),
        gamma_e=float(header["gamma_e"]),
        hypothesis_ids=ids,
        S=svals,
        F=fvals,
        adjusted=adjusted,
        rejected=rejected,
        coords=coords,
    )


def py_analyze(
    p_matrix,
    r: int,
    alpha: float = 0.05,
    metric: str = "fdr",
    procedure: str = "e-filter",
    combiner: str = "bonferroni",
    kappa="auto",
) -> BoundReport:
    """Run one selection procedure on an n x m matrix of base p-values.

    Row i is study i, column j is hypothesis j.  Entries must be finite;
    domain checks beyond that are the core's and surface with its message.
    kappa is "auto" or a fixed value in (0, 1).
    """
    kappa_arg = kappa if kappa == "auto" else repr(float(kappa))
    with tempfile.TemporaryDirectory() as tmpdir:
        studies = _write_studies(p_matrix, tmpdir)
        out_dir = os.path.join(tmpdir, "out")
        _run_cli(
            [
                "analyze",
                *studies,
                "--r", str(int(r)),
                "--alpha", repr(float(alpha)),
                "--metric", metric,
                "--combiner", combiner,
                "--procedure", procedure,
                "--kappa", kappa_arg,
                "--out", out_dir,
                "--no-figures",
            ]
        )
        return _parse_report(out_dir)


def py_tune_kappa(
    p_matrix,
    r: int,
    alpha: float = 0.05,
    metric: str = "fdr",
    procedure: str = "e-filter-fdr",
    combiner: str = "bonferroni",
) -> float:
    """Pick the calibrator exponent for one procedure on real data."""
    with tempfile.TemporaryDirectory() as tmpdir:
        studies = _write_studies(p_matrix, tmpdir)
        out_dir = os.path.join(tmpdir, "out")
        _run_cli(
            [
                "tune-kappa",
                *studies,
                "--r", str(int(r)),
                "--alpha", repr(float(alpha)),
                "--metric", metric,
                "--combiner", combiner,
                "--procedure", procedure,
                "--out", out_dir,
            ]
        )
        _, rows = _read_rows(os.path.join(out_dir, "kappa.csv"))
        return float(rows[0][1])


def py_simulate(
    scenario: int,
    m: int | None = None,
    n: int | None = None,
    r: int | None = None,
    rho=None,
    pi00: float | None = None,
    pi1: float | None = None,
    mu_set=None,
    q=None,
    s: int | None = None,
    B: int | None = None,
    alpha: float | None = None,
    metric: str | None = None,
    seed: int | None = None,
    procedures=None,
    nr_grid: bool | None = None,
) -> list[dict]:
    """Run a scenario experiment; returns the aggregate metric records.

    Arguments mirror the simulate config keys; None means the core
    default.  rho and q accept a scalar or a list (a list sweeps).  Each
    returned record has procedure, scenario, rho, n, r, metric_name,
    mean, sd, and B fields with native types.
    """
    config: dict = {"scenario": int(scenario)}
    optional = {
        "m": m, "n": n, "r": r, "rho": rho, "pi00": pi00, "pi1": pi1,
        "mu_set": mu_set, "q": q, "s": s, "B": B, "alpha": alpha,
        "metric": metric, "seed": seed, "procedures": procedures,
        "nr_grid": nr_grid,
    }
    for key, value in optional.items():
        if value is not None:
            if isinstance(value, tuple):
                value = list(value)
            config[key] = value
    with tempfile.TemporaryDirectory() as tmpdir:
        cfg_path = os.path.join(tmpdir, "config.json")
        with open(cfg_path, "w") as handle:
            json.dump(config, handle)
        out_dir = os.path.join(tmpdir, "out")
        _run_cli(
            ["simulate", "--config", cfg_path, "--out", out_dir, "--no-figures"]
        )
        header, rows = _read_rows(os.path.join(out_dir, "metrics.csv"))
    out = []
    for row in rows:
        record = dict(zip(header, row))
        for key in ("scenario", "n", "r", "B"):
            record[key] = int(record[key])
        for key in ("rho", "mean", "sd"):
            record[key] = float(record[key])
        out.append(record)
    return out


def py_diagnose_kappa_star(
    mu,
    rho_grid,
    mc: int = 200_000,
    r: int | None = None,
    seed: int = 0,
) -> list[dict]:
    """Estimate the calibrator exponent threshold over a dependence grid.

    mu is the per-study mean vector, rho_grid the equicorrelation values.
    Each returned record has rho, mu (tuple of floats), d1, d2,
    kappa_star, and mc_samples fields.
    """
    # negative values would parse as option names in the split form
    mu_arg = ",".join(repr(float(v)) for v in mu)
    rho_arg = ",".join(repr(float(v)) for v in rho_grid)
    args = [
        "diagnose-kappa-star",
        f"--mu={mu_arg}",
        f"--rho-grid={rho_arg}",
        "--mc", str(int(mc)),
        "--seed", str(int(seed)),
    ]
    if r is not None:
        args.extend(["--r", str(int(r))])
    with tempfile.TemporaryDirectory() as tmpdir:
        out_dir = os.path.join(tmpdir, "out")
        _run_cli(args + ["--out", out_dir, "--no-figures"])
        header, rows = _read_rows(os.path.join(out_dir, "diagnostics.csv"))
    out = []
    for row in rows:
        record = dict(zip(header, row))
        record["rho"] = float(record["rho"])
        record["mu"] = tuple(float(v) for v in record["mu"].split("|"))
        for key in ("d1", "d2", "kappa_star"):
            record[key] = float(record[key])
        record["mc_samples"] = int(record["mc_samples"])
        out.append(record)
    return out
