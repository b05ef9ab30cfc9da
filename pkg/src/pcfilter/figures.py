"""File-based figure rendering for the command-line report paths.

Every renderer draws to an Agg canvas and writes a PNG next to the
delimited output.  Rendering is deterministic: fixed geometry, fixed
metadata, no timestamps, so repeated runs with the same inputs produce
identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError
from .simulate import CSV_COLUMNS

_DPI = 120
_META = {"Software": "pcfilter"}


def _save(fig, path) -> str:
    fig.savefig(str(path), dpi=_DPI, metadata=dict(_META))
    plt.close(fig)
    return str(path)


def render_analysis_figure(report, path) -> str:
    """Selection p-value histogram beside the sorted adjusted values."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    left.hist(report.S, bins=40, range=(0.0, 1.0), color="#4878a8", edgecolor="white")
    left.set_xlabel("selection p-value")
    left.set_ylabel("count")
    left.set_title(f"{report.procedure}, r={report.r} of n={report.n}")
    order = np.sort(np.asarray(report.adjusted, dtype=float))
    right.plot(np.arange(1, order.size + 1), order, lw=1.2, color="#4878a8")
    if report.procedure in ("adafilter", "bh-pc"):
        cutoff, label = report.alpha, "alpha"
    else:
        cutoff, label = 1.0 / report.alpha, "1/alpha"
    right.axhline(cutoff, color="#b04a4a", lw=1.0, ls="--", label=label)
    right.set_yscale("log")
    right.set_xlabel("rank")
    right.set_ylabel("adjusted value")
    right.set_title(f"{report.n_rejected} of {report.m} rejected")
    right.legend(loc="best", frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def _as_dicts(rows) -> list[dict]:
    out = []
    for row in rows:
        if isinstance(row, dict):
            out.append(row)
        else:
            row = list(row)
            if len(row) != len(CSV_COLUMNS):
                raise ValidationError(
                    f"expected {len(CSV_COLUMNS)} fields per metric row, got {len(row)}"
                )
            out.append(dict(zip(CSV_COLUMNS, row)))
    return out


def render_metrics_figure(rows, path) -> str:
    """One panel per metric: mean with sd bars against the dependence level."""
    rows = _as_dicts(rows)
    if not rows:
        raise ValidationError("no metric rows to plot")
    metrics = sorted({str(row["metric_name"]) for row in rows})
    procedures = sorted({str(row["procedure"]) for row in rows})
    fig, axes = plt.subplots(
        1, len(metrics), figsize=(4.0 * len(metrics), 3.4), squeeze=False
    )
    for ax, metric in zip(axes[0], metrics):
        for proc in procedures:
            picked = [
                row
                for row in rows
                if str(row["procedure"]) == proc and str(row["metric_name"]) == metric
            ]
            picked.sort(key=lambda row: (float(row["rho"]), int(row["n"]), int(row["r"])))
            if not picked:
                continue
            x = np.arange(len(picked))
            mean = np.array([float(row["mean"]) for row in picked])
            sd = np.array([float(row["sd"]) for row in picked])
            b = np.array([max(1, int(row["B"])) for row in picked])
            ax.errorbar(
                x, mean, yerr=sd / np.sqrt(b), marker="o", ms=3.5, lw=1.1,
                capsize=2.5, label=proc,
            )
            ax.set_xticks(x)
            ax.set_xticklabels(
                [f"{float(row['rho']):g}\n{row['n']}/{row['r']}" for row in picked],
                fontsize=7,
            )
        ax.set_title(metric)
        ax.set_xlabel("rho and n/r")
    axes[0][0].set_ylabel("mean over replications")
    axes[0][-1].legend(loc="best", frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def render_diagnostics_figure(rows, path) -> str:
    """Power-law exponents and the implied kappa threshold against rho."""
    rows = list(rows)
    if not rows:
        raise ValidationError("no diagnostic rows to plot")
    rows.sort(key=lambda row: float(row["rho"]))
    rho = np.array([float(row["rho"]) for row in rows])
    d1 = np.array([float(row["d1"]) for row in rows])
    d2 = np.array([float(row["d2"]) for row in rows])
    kappa_star = np.array([float(row["kappa_star"]) for row in rows])
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    left.plot(rho, d1, marker="o", ms=3.5, lw=1.1, label="d1 (selection)")
    left.plot(rho, d2, marker="s", ms=3.5, lw=1.1, label="d2 (filter)")
    left.axhline(1.0, color="gray", lw=0.8, ls=":")
    left.set_xlabel("rho")
    left.set_ylabel("exponent")
    left.legend(loc="best", frameon=False)
    right.plot(rho, kappa_star, marker="o", ms=3.5, lw=1.1, color="#b04a4a")
    right.set_xlabel("rho")
    right.set_ylabel("kappa threshold")
    right.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def render_enrichment_figure(rows, path, top: int = 10) -> str:
    """Horizontal bars of the combined score for the best-ranked pathways."""
    rows = list(rows)
    if not rows:
        raise ValidationError("no enrichment rows to plot")
    rows = rows[: max(1, int(top))]
    names = [str(row["pathway"]) for row in rows][::-1]
    scores = np.array([float(row["combined_score"]) for row in rows])[::-1]
    fig, ax = plt.subplots(figsize=(7.0, 0.45 * len(names) + 1.2))
    ax.barh(np.arange(len(names)), scores, color="#4878a8")
    ax.set_yticks(np.arange(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("combined score")
    fig.tight_layout()
    return _save(fig, path)
