"""Study-file ingestion, hypothesis alignment, and report serialization.

Study files are delimited tables with header columns ``id`` and ``pvalue``;
extra columns are ignored except the genome-coordinate pair ``chromosome``
and ``base_pair``, which passes through to reports untouched.  Alignment is
an inner join on hypothesis id across all studies with deterministic sorted
row order.  All writers emit CSV with repr-precision floats plus a JSON
sidecar so a written report reloads with the rejection set bit-exact.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .calibrate import DEFAULT_KAPPA_GRID
from .combine import P_FLOOR, BasePValueMatrix, PCHSpec, build_filter_pair, selection_pvalues
from .errors import ValidationError
from .select import run_procedure
from .simulate import CSV_COLUMNS

STUDY_COLUMNS = ("id", "pvalue")
COORD_COLUMNS = ("chromosome", "base_pair")
REPORT_COLUMNS = ("hypothesis_id", "S", "F", "adjusted", "rejected")
DIAG_COLUMNS = ("rho", "mu", "d1", "d2", "kappa_star", "mc_samples")
TUNE_COLUMNS = ("procedure", "kappa")
FORMATS = ("tsv", "csv")


def _delimiter(path: str, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "tsv"
    fmt = str(fmt).lower()
    if fmt not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}, got {fmt!r}")
    return "\t" if fmt == "tsv" else ","


def _fmt(value) -> str:
    """Render one CSV field; repr keeps floats round-trippable."""
    if isinstance(value, float) or isinstance(value, np.floating):
        value = float(value)
        return "" if np.isnan(value) else repr(value)
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _worker_count() -> int:
    raw = os.environ.get("PCFILTER_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class StudyTable:
    """One study's p-values keyed by hypothesis id, zeros already clamped."""

    study_id: str
    hypothesis_ids: tuple[str, ...]
    pvalues: np.ndarray
    clamped_count: int = 0
    coords: dict = field(default_factory=dict)

    def __post_init__(self):
        pvalues = np.asarray(self.pvalues, dtype=float)
        if pvalues.ndim != 1 or pvalues.size != len(self.hypothesis_ids):
            raise ValidationError("one p-value per hypothesis id required")
        if len(set(self.hypothesis_ids)) != len(self.hypothesis_ids):
            raise ValidationError(f"{self.study_id}: duplicate hypothesis ids")
        if pvalues.size and (
            not np.all(np.isfinite(pvalues))
            or np.any(pvalues <= 0.0)
            or np.any(pvalues > 1.0)
        ):
            raise ValidationError(f"{self.study_id}: p-values must lie in (0, 1]")
        object.__setattr__(self, "pvalues", pvalues)

    @property
    def m(self) -> int:
        return self.pvalues.size


def read_study(path, fmt: str | None = None, study_id: str | None = None) -> StudyTable:
    """Parse one study file; zero p-values clamp to the floor and are counted.

    The header must name ``id`` and ``pvalue`` columns.  Other columns are
    ignored apart from ``chromosome`` / ``base_pair``, kept verbatim per id.
    Malformed rows raise with the file name and 1-based line number.
    """
    path = str(path)
    delimiter = _delimiter(path, fmt)
    if study_id is None:
        base = os.path.basename(path)
        study_id = base.rsplit(".", 1)[0] if "." in base else base
    ids: list[str] = []
    seen: set[str] = set()
    pvalues: list[float] = []
    coords: dict[str, tuple[str, str]] = {}
    clamped = 0
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from exc
    with handle:
        reader = csv.reader(handle, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}:1: empty file, expected a header row")
        names = [cell.strip().lower() for cell in header]
        try:
            id_col = names.index("id")
            p_col = names.index("pvalue")
        except ValueError:
            raise ValidationError(
                f"{path}:1: header must contain 'id' and 'pvalue', got {header!r}"
            ) from None
        chrom_col = names.index("chromosome") if "chromosome" in names else -1
        bp_col = names.index("base_pair") if "base_pair" in names else -1
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(names):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}"
                )
            hid = row[id_col].strip()
            if not hid:
                raise ValidationError(f"{path}:{lineno}: blank hypothesis id")
            try:
                p = float(row[p_col])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: cannot parse p-value {row[p_col]!r}"
                ) from None
            if not np.isfinite(p) or p < 0.0 or p > 1.0:
                raise ValidationError(
                    f"{path}:{lineno}: p-value {row[p_col]!r} outside [0, 1]"
                )
            if p == 0.0:
                p = P_FLOOR
                clamped += 1
            if hid in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate hypothesis id {hid!r}")
            seen.add(hid)
            ids.append(hid)
            pvalues.append(p)
            if chrom_col >= 0 and bp_col >= 0:
                coords[hid] = (row[chrom_col].strip(), row[bp_col].strip())
    if not ids:
        raise ValidationError(f"{path}: no data rows")
    return StudyTable(
        study_id=study_id,
        hypothesis_ids=tuple(ids),
        pvalues=np.asarray(pvalues, dtype=float),
        clamped_count=clamped,
        coords=coords,
    )


@dataclass(frozen=True, eq=False)
class IngestResult:
    """Aligned matrix plus the join and clamping bookkeeping."""

    pmatrix: BasePValueMatrix
    dropped_count: int
    clamped_count: int
    coords: dict = field(default_factory=dict)


def ingest(paths, fmt: str | None = None) -> IngestResult:
    """Inner-join two or more study files into one aligned p-value matrix.

    Hypotheses missing from any study are dropped; dropped_count is the
    number of distinct ids lost that way.  Row order is sorted ids.  Files
    parse in parallel when PCFILTER_THREADS is set above 1.
    """
    paths = [str(p) for p in paths]
    if len(paths) < 2:
        raise ValidationError(f"need at least 2 study files, got {len(paths)}")
    workers = min(_worker_count(), len(paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(lambda p: read_study(p, fmt), paths))
    else:
        tables = [read_study(p, fmt) for p in paths]
    shared = set(tables[0].hypothesis_ids)
    everything = set(tables[0].hypothesis_ids)
    for table in tables[1:]:
        ids = set(table.hypothesis_ids)
        shared &= ids
        everything |= ids
    if not shared:
        raise ValidationError("no hypothesis id is present in every study")
    order = sorted(shared)
    index = {hid: j for j, hid in enumerate(order)}
    values = np.empty((len(tables), len(order)), dtype=float)
    for i, table in enumerate(tables):
        lookup = dict(zip(table.hypothesis_ids, table.pvalues))
        for hid, j in index.items():
            values[i, j] = lookup[hid]
    coords: dict[str, tuple[str, str]] = {}
    for table in tables:  # first study defining a coordinate wins
        for hid, pair in table.coords.items():
            if hid in index and hid not in coords:
                coords[hid] = pair
    pmatrix = BasePValueMatrix(
        values=values,
        study_ids=tuple(table.study_id for table in tables),
        hypothesis_ids=tuple(order),
    )
    return IngestResult(
        pmatrix=pmatrix,
        dropped_count=len(everything) - len(shared),
        clamped_count=sum(table.clamped_count for table in tables),
        coords=coords,
    )


def write_study(path, hypothesis_ids, pvalues, fmt: str | None = None) -> None:
    """Write one study in the ingestible id/pvalue layout."""
    delimiter = _delimiter(str(path), fmt)
    pvalues = np.asarray(pvalues, dtype=float)
    if pvalues.ndim != 1 or pvalues.size != len(hypothesis_ids):
        raise ValidationError("one p-value per hypothesis id required")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter=delimiter, lineterminator="\n")
        writer.writerow(STUDY_COLUMNS)
        for hid, p in zip(hypothesis_ids, pvalues):
            writer.writerow([str(hid), repr(float(p))])


def write_matrix(out_dir, pmatrix: BasePValueMatrix, fmt: str = "tsv") -> list[str]:
    """Write one study file per row; ingest() on the result recovers pmatrix."""
    ext = "csv" if str(fmt).lower() == "csv" else "tsv"
    paths = []
    os.makedirs(out_dir, exist_ok=True)
    for i, study_id in enumerate(pmatrix.study_ids):
        path = os.path.join(str(out_dir), f"{study_id}.{ext}")
        write_study(path, pmatrix.hypothesis_ids, pmatrix.values[i], fmt)
        paths.append(path)
    return paths


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    """Per-hypothesis selection statistics and the rejection decision.

    S is the partial-conjunction p-value the procedure ranked; F is the
    filter statistic for filter-based procedures and NaN otherwise.
    adjusted holds adjusted e-values for e-value procedures and adjusted
    p-values for the baselines.
    """

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
    hypothesis_ids: tuple[str, ...]
    S: np.ndarray
    F: np.ndarray
    adjusted: np.ndarray
    rejected: np.ndarray
    coords: dict = field(default_factory=dict)

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        F = np.asarray(self.F, dtype=float)
        adjusted = np.asarray(self.adjusted, dtype=float)
        rejected = np.asarray(self.rejected, dtype=bool)
        m = int(self.m)
        if len(self.hypothesis_ids) != m:
            raise ValidationError(f"expected {m} hypothesis ids")
        for name, arr in (("S", S), ("F", F), ("adjusted", adjusted), ("rejected", rejected)):
            if arr.ndim != 1 or arr.size != m:
                raise ValidationError(f"{name} must be a length-{m} vector")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "adjusted", adjusted)
        object.__setattr__(self, "rejected", rejected)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "hypothesis_ids", tuple(str(h) for h in self.hypothesis_ids))

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.rejected))

    @property
    def rejected_ids(self) -> tuple[str, ...]:
        return tuple(
            hid for hid, flag in zip(self.hypothesis_ids, self.rejected) if flag
        )

    def header(self) -> dict:
        return {
            "procedure": self.procedure,
            "r": self.r,
            "n": self.n,
            "m": self.m,
            "alpha": self.alpha,
            "metric": self.metric,
            "kappa": self.kappa,
            "combiner": self.combiner,
            "dropped_count": self.dropped_count,
            "gamma_e": self.gamma_e,
        }


def analyze(
    pmatrix: BasePValueMatrix,
    spec: PCHSpec,
    procedure: str = "e-filter",
    kappa="auto",
    grid=DEFAULT_KAPPA_GRID,
    dropped_count: int = 0,
    coords: dict | None = None,
) -> AnalysisReport:
    """Run one procedure on an aligned matrix and package a full report."""
    result = run_procedure(procedure, pmatrix, spec, kappa=kappa, grid=grid)
    name = str(procedure).lower()
    combiner = spec.combiner
    if name in ("e-filter-b", "adafilter"):
        combiner = "bonferroni"
    elif name == "e-filter-c":
        combiner = "cauchy"
    if name in ("e-filter", "e-filter-b", "e-filter-c", "adafilter"):
        fp = build_filter_pair(pmatrix, replace(spec, combiner=combiner))
        S, F = fp.S, fp.F
    else:
        S = selection_pvalues(pmatrix.values, spec.r, combiner)
        F = np.full(pmatrix.m, np.nan)
    rejected = np.zeros(pmatrix.m, dtype=bool)
    rejected[result.rejected] = True
    return AnalysisReport(
        procedure=result.procedure,
        r=spec.r,
        n=pmatrix.n,
        m=pmatrix.m,
        alpha=spec.alpha,
        metric=spec.metric,
        kappa=result.kappa_used,
        combiner=combiner,
        dropped_count=int(dropped_count),
        gamma_e=float(result.gamma_e),
        hypothesis_ids=pmatrix.hypothesis_ids,
        S=S,
        F=F,
        adjusted=result.adjusted_e,
        rejected=rejected,
        coords=dict(coords or {}),
    )


def _sidecar(csv_path) -> str:
    base = str(csv_path)
    return (base[: -len(".csv")] if base.endswith(".csv") else base) + ".json"


def write_report(report: AnalysisReport, csv_path, manifest_path=None) -> tuple[str, str]:
    """Write the per-hypothesis CSV and a JSON header sidecar."""
    csv_path = str(csv_path)
    manifest_path = _sidecar(csv_path) if manifest_path is None else str(manifest_path)
    has_coords = bool(report.coords)
    columns = list(REPORT_COLUMNS) + (list(COORD_COLUMNS) if has_coords else [])
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for j, hid in enumerate(report.hypothesis_ids):
            row = [
                hid,
                _fmt(report.S[j]),
                _fmt(report.F[j]),
                _fmt(report.adjusted[j]),
                _fmt(report.rejected[j]),
            ]
            if has_coords:
                chrom, bp = report.coords.get(hid, ("", ""))
                row.extend([chrom, bp])
            writer.writerow(row)
    header = report.header()
    header["columns"] = columns
    with open(manifest_path, "w") as handle:
        json.dump(header, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return csv_path, manifest_path


def read_report(csv_path, manifest_path=None) -> AnalysisReport:
    """Reload a written report; the rejection set comes back bit-exact."""
    csv_path = str(csv_path)
    manifest_path = _sidecar(csv_path) if manifest_path is None else str(manifest_path)
    try:
        with open(manifest_path) as handle:
            header = json.load(handle)
    except OSError as exc:
        raise ValidationError(f"{manifest_path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}: invalid JSON ({exc})") from exc
    ids: list[str] = []
    S: list[float] = []
    F: list[float] = []
    adjusted: list[float] = []
    rejected: list[bool] = []
    coords: dict[str, tuple[str, str]] = {}
    with open(csv_path, newline="") as handle:
        reader = csv.reader(handle)
        columns = next(reader, None)
        if columns is None or columns[: len(REPORT_COLUMNS)] != list(REPORT_COLUMNS):
            raise ValidationError(f"{csv_path}:1: unexpected report columns {columns!r}")
        has_coords = columns[len(REPORT_COLUMNS) :] == list(COORD_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if len(row) < len(columns):
                raise ValidationError(f"{csv_path}:{lineno}: truncated row")
            ids.append(row[0])
            S.append(float(row[1]))
            F.append(float(row[2]) if row[2] else float("nan"))
            adjusted.append(float(row[3]))
            rejected.append(row[4] == "1")
            if has_coords and (row[5] or row[6]):
                coords[row[0]] = (row[5], row[6])
    kappa = header.get("kappa")
    return AnalysisReport(
        procedure=str(header["procedure"]),
        r=int(header["r"]),
        n=int(header["n"]),
        m=int(header["m"]),
        alpha=float(header["alpha"]),
        metric=str(header["metric"]),
        kappa=None if kappa is None else float(kappa),
        combiner=str(header["combiner"]),
        dropped_count=int(header["dropped_count"]),
        gamma_e=float(header["gamma_e"]),
        hypothesis_ids=tuple(ids),
        S=np.asarray(S),
        F=np.asarray(F),
        adjusted=np.asarray(adjusted),
        rejected=np.asarray(rejected, dtype=bool),
        coords=coords,
    )


def write_rows(path, columns, rows) -> str:
    """Write dict or sequence rows under a fixed column order."""
    columns = tuple(columns)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                missing = [c for c in columns if c not in row]
                if missing:
                    raise ValidationError(f"row is missing columns {missing}")
                writer.writerow([_fmt(row[c]) for c in columns])
            else:
                row = list(row)
                if len(row) != len(columns):
                    raise ValidationError(
                        f"expected {len(columns)} fields per row, got {len(row)}"
                    )
                writer.writerow([_fmt(v) for v in row])
    return str(path)


def write_metrics_csv(path, rows) -> str:
    """Simulation metric rows under the fixed procedure/scenario schema."""
    return write_rows(path, CSV_COLUMNS, rows)


def write_diagnostics_csv(path, rows) -> str:
    return write_rows(path, DIAG_COLUMNS, rows)


def read_rows(path) -> tuple[tuple[str, ...], list[dict]]:
    """Read back a write_rows() CSV as (columns, list of string dicts)."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        columns = next(reader, None)
        if columns is None:
            raise ValidationError(f"{path}: empty CSV")
        rows = [dict(zip(columns, row)) for row in reader]
    return tuple(columns), rows
