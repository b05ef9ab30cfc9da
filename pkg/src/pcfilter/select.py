"""Selection procedures over partial conjunction hypotheses.

Two e-value families plus the classical baselines:

* efilter: calibrate the filter statistics, pick the largest feasible
  threshold gamma_e by a per-segment supremum, reject phi(S_j) > 1/gamma_e.
  Equivalent adjusted e-values are produced alongside and cross-checked.
* epch: calibrate every base p-value, average the n - r + 1 smallest
  e-values per hypothesis, run e-BH.
* adafilter (filtering on raw p-values, valid only under study
  independence), BH on PC p-values, and plain BH / e-BH building blocks.

All procedures are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibrate import DEFAULT_KAPPA_GRID, P_FLOOR, _checked_kappa, phi, tune_kappa
from .combine import (
    METRICS,
    BasePValueMatrix,
    FilterPair,
    PCHSpec,
    build_filter_pair,
    selection_pvalues,
)
from .errors import ComputationError, ValidationError

PROCEDURES = ("e-filter", "e-filter-b", "e-filter-c", "e-pch", "adafilter", "bh-pc")


@dataclass(frozen=True, eq=False)
class RejectionResult:
    """Outcome of one selection procedure on m hypotheses.

    rejected holds sorted hypothesis indices.  adjusted_e holds adjusted
    e-values for the e-value procedures and adjusted p-values for the
    p-value baselines (see each procedure's docstring for the exact
    rejection rule they encode).  kappa_used is None for procedures that do
    not calibrate.
    """

    gamma_e: float
    rejected: np.ndarray
    adjusted_e: np.ndarray
    metric: str
    procedure: str
    kappa_used: float | None = None

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.size)


def _checked_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha!r}")
    return alpha


def _checked_metric(metric: str, allowed=METRICS) -> str:
    metric = str(metric).lower()
    if metric not in allowed:
        raise ValidationError(f"metric must be one of {allowed}, got {metric!r}")
    return metric


def _threshold_metric(metric: str) -> str:
    # FWER requests run on the PFER threshold; the PFER bound dominates FWER.
    return "pfer" if metric in ("fwer", "pfer") else "fdr"


def _feasible_sup(b_filter: np.ndarray, b_select: np.ndarray, alpha: float, ratio: bool) -> float:
    """Largest gamma in [0, alpha] with gamma * N_F(gamma) <= alpha * denom(gamma).

    N_F(gamma) = #{j : b_filter_j < gamma} is constant on the half-open
    segments (lo, hi] between consecutive sorted breakpoints, so the sup
    restricted to one segment is min(hi, alpha * denom / N_F) whenever that
    stays above lo; the global sup is the best segment value.  denom is 1
    for the count form (PFER) and max(N_S(gamma), 1) with
    N_S(gamma) = #{j : b_select_j < gamma} for the ratio form (FDR).
    Returns 0.0 when no positive gamma is feasible.
    """
    alpha = float(alpha)
    bf_sorted = np.sort(b_filter)
    pieces = [b_filter] if not ratio else [b_filter, b_select]
    interior = np.unique(np.concatenate(pieces))
    interior = interior[(interior > 0.0) & (interior < alpha)]
    edges = np.concatenate(([0.0], interior, [alpha]))
    lo = edges[:-1]
    hi = edges[1:]
    n_f = np.searchsorted(bf_sorted, lo, side="right")
    if ratio:
        bs_sorted = np.sort(b_select)
        denom = np.maximum(np.searchsorted(bs_sorted, lo, side="right"), 1)
    else:
        denom = np.ones_like(n_f)
    with np.errstate(divide="ignore", over="ignore"):
        limit = np.where(n_f > 0, alpha * denom / np.maximum(n_f, 1), np.inf)
    cand = np.minimum(hi, limit)
    feasible = cand > lo
    if not np.any(feasible):
        return 0.0
    return float(np.max(cand[feasible]))


def efilter_threshold(fp: FilterPair, alpha: float, kappa: float, metric: str = "fdr") -> float:
    """Threshold gamma_e: the largest feasible gamma in [0, alpha].

    PFER form: gamma * sum_j 1{phi(F_j) > 1/gamma} <= alpha.
    FDR form: the left side divides by max(sum_j 1{phi(S_j) > 1/gamma}, 1).
    The indicators flip exactly at gamma = 1/phi(F_j) (resp. S_j), so the
    supremum is computed segment-exactly, not on a grid.
    """
    alpha = _checked_alpha(alpha)
    kappa = _checked_kappa(kappa)
    metric = _checked_metric(metric, allowed=("pfer", "fdr"))
    e_f = phi(np.maximum(fp.F, P_FLOOR), kappa)
    e_s = phi(np.maximum(fp.S, P_FLOOR), kappa)
    # phi(F_j) > 1/gamma holds iff gamma > 1/phi(F_j); both sides positive.
    return _feasible_sup(1.0 / e_f, 1.0 / e_s, alpha, ratio=(metric == "fdr"))


def efilter_adjusted(fp: FilterPair, kappa: float, metric: str = "fdr") -> np.ndarray:
    """Adjusted e-values; rejecting at level alpha means adjusted > 1/alpha.

    With S^e_(1) >= ... >= S^e_(m) the calibrated selection values sorted
    descending and m_(j) = #{h : phi(F_h) >= S^e_(j)} (ties count, and
    m_(j) >= j is guaranteed by F_h <= S_h):

    PFER: adjusted for rank j is S^e_(j) / m_(j).
    FDR: adjusted for rank j is max over h >= j of h * S^e_(h) / m_(h).

    Values are returned in input order.
    """
    kappa = _checked_kappa(kappa)
    metric = _checked_metric(metric, allowed=("pfer", "fdr"))
    e_s = phi(np.maximum(fp.S, P_FLOOR), kappa)
    e_f = phi(np.maximum(fp.F, P_FLOOR), kappa)
    m = e_s.size
    order = np.argsort(-e_s, kind="stable")
    s_desc = e_s[order]
    ef_sorted = np.sort(e_f)
    m_rank = m - np.searchsorted(ef_sorted, s_desc, side="left")
    if np.any(m_rank < np.arange(1, m + 1)):
        raise ComputationError("m_(j) < j; filter pair violates F <= S")
    if metric == "pfer":
        adj_desc = s_desc / m_rank
    else:
        terms = np.arange(1, m + 1) * s_desc / m_rank
        adj_desc = np.maximum.accumulate(terms[::-1])[::-1]
    out = np.empty(m)
    out[order] = adj_desc
    return out


def efilter(
    fp: FilterPair,
    alpha: float,
    kappa: float,
    metric: str = "fdr",
    procedure: str = "e-filter",
) -> RejectionResult:
    """Filter-calibrated selection: reject phi(S_j) > 1/gamma_e.

    FWER requests reuse the PFER threshold.  The adjusted e-value form is
    computed as well and must select the same hypotheses; a disagreement
    raises ComputationError because it would mean the two definitions
    diverged numerically.
    """
    alpha = _checked_alpha(alpha)
    metric = _checked_metric(metric)
    thr_metric = _threshold_metric(metric)
    gamma_e = efilter_threshold(fp, alpha, kappa, thr_metric)
    e_s = phi(np.maximum(fp.S, P_FLOOR), kappa)
    # phi(S_j) > 1/gamma_e is evaluated as 1/phi(S_j) < gamma_e: gamma_e lives
    # on the 1/phi scale, so this avoids a double reciprocal that can flip
    # strict comparisons when gamma_e lands exactly on a breakpoint.
    rejected = np.flatnonzero(1.0 / e_s < gamma_e)
    adjusted = efilter_adjusted(fp, kappa, thr_metric)
    adjusted_set = np.flatnonzero(adjusted > 1.0 / alpha)
    if not np.array_equal(rejected, adjusted_set):
        raise ComputationError(
            "threshold-form and adjusted-form rejection sets disagree "
            f"({rejected.size} vs {adjusted_set.size} rejections)"
        )
    return RejectionResult(
        gamma_e=gamma_e,
        rejected=rejected,
        adjusted_e=adjusted,
        metric=metric,
        procedure=procedure,
        kappa_used=float(kappa),
    )


def efilter_rejection_count(fp: FilterPair, alpha: float, kappa: float, metric: str = "fdr") -> int:
    """Rejection count only, for kappa tuning loops.

    Same threshold and comparison as efilter but skips the adjusted-form
    cross-check, which roughly halves the cost of an 18-point grid scan.
    """
    alpha = _checked_alpha(alpha)
    thr_metric = _threshold_metric(_checked_metric(metric))
    gamma_e = efilter_threshold(fp, alpha, kappa, thr_metric)
    e_s = phi(np.maximum(fp.S, P_FLOOR), kappa)
    return int(np.count_nonzero(1.0 / e_s < gamma_e))


def adafilter(fp: FilterPair, alpha: float, metric: str = "fdr") -> RejectionResult:
    """Filtering baseline on raw p-values: reject S_j < gamma_0.

    gamma_0 solves the same per-segment supremum as efilter but with the
    uncalibrated statistics: PFER feasibility gamma * #{F_j < gamma} <= alpha,
    FDR dividing by max(#{S_j < gamma}, 1).  Valid under independence of the
    studies only; kept as a comparison baseline.  adjusted_e repeats the raw
    selection p-values because this baseline has no adjusted form here.
    """
    alpha = _checked_alpha(alpha)
    metric = _checked_metric(metric)
    thr_metric = _threshold_metric(metric)
    gamma_0 = _feasible_sup(fp.F, fp.S, alpha, ratio=(thr_metric == "fdr"))
    rejected = np.flatnonzero(fp.S < gamma_0)
    return RejectionResult(
        gamma_e=gamma_0,
        rejected=rejected,
        adjusted_e=fp.S.copy(),
        metric=metric,
        procedure="adafilter",
        kappa_used=None,
    )


def bh(pvalues, alpha: float, procedure: str = "bh") -> RejectionResult:
    """BH step-up at level alpha: largest k with P_(k) <= k alpha / m.

    adjusted_e holds the usual BH-adjusted p-values (suffix minima of
    m P_(k) / k, capped at 1); the rejection set itself comes from the
    step-up rule.
    """
    alpha = _checked_alpha(alpha)
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("expected a nonempty 1-d vector of p-values")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("p-values must be finite and in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    p_sorted = p[order]
    ranks = np.arange(1, m + 1)
    below = np.flatnonzero(p_sorted <= alpha * ranks / m)
    k_star = int(below[-1]) + 1 if below.size else 0
    rejected = np.sort(order[:k_star])
    adjusted_sorted = np.minimum.accumulate((m * p_sorted / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(1.0, adjusted_sorted)
    return RejectionResult(
        gamma_e=alpha * k_star / m,
        rejected=rejected,
        adjusted_e=adjusted,
        metric="fdr",
        procedure=procedure,
        kappa_used=None,
    )


def ebh(evalues, alpha: float, procedure: str = "e-bh", kappa_used: float | None = None) -> RejectionResult:
    """e-BH: with e_[1] >= ... >= e_[m], reject the k* largest where
    k* = max{k : k e_[k] / m >= 1/alpha} (empty when no k qualifies).

    Ties never straddle the cut: at equal e-values the criterion only grows
    with k.  adjusted_e holds suffix maxima of k e_[k] / m in input order, so
    rejection means adjusted_e >= 1/alpha (closed inequality, unlike the
    efilter convention).
    """
    alpha = _checked_alpha(alpha)
    e = np.asarray(evalues, dtype=float)
    if e.ndim != 1 or e.size == 0:
        raise ValidationError("expected a nonempty 1-d vector of e-values")
    if np.any(np.isnan(e)) or np.any(e < 0.0):
        raise ValidationError("e-values must be nonnegative")
    m = e.size
    order = np.argsort(-e, kind="stable")
    e_desc = e[order]
    crit = np.arange(1, m + 1) * e_desc / m
    feasible = np.flatnonzero(crit >= 1.0 / alpha)
    k_star = int(feasible[-1]) + 1 if feasible.size else 0
    rejected = np.sort(order[:k_star])
    adjusted = np.empty(m)
    adjusted[order] = np.maximum.accumulate(crit[::-1])[::-1]
    return RejectionResult(
        gamma_e=alpha * k_star / m,
        rejected=rejected,
        adjusted_e=adjusted,
        metric="fdr",
        procedure=procedure,
        kappa_used=kappa_used,
    )


def epch_evalues(values, r: int, kappa: float) -> np.ndarray:
    """Per-column e-PCH e-values from an n x m array of base p-values.

    Calibrates every entry and averages the n - r + 1 smallest e-values per
    column; phi is decreasing, so those are phi of the n - r + 1 largest
    p-values.  Accepts any n >= 1 (n = r = 1 degenerates to phi(P_1j)).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise ValidationError("values must be a nonempty 2-d array")
    n = values.shape[0]
    if not 1 <= int(r) <= n:
        raise ValidationError(f"r must satisfy 1 <= r <= n = {n}, got {r!r}")
    k = n - int(r) + 1
    largest = np.sort(values, axis=0, kind="stable")[n - k:, :]
    return phi(np.maximum(largest, P_FLOOR), kappa).mean(axis=0)


def epch(pmatrix: BasePValueMatrix, spec: PCHSpec, kappa: float) -> RejectionResult:
    """Calibrate, average the smallest e-values, then select.

    metric fdr runs e-BH at alpha.  metric pfer (or fwer) rejects
    e_j >= m / alpha instead, the Markov threshold giving E(V) <= alpha; its
    adjusted_e is e_j / m so the rule reads adjusted_e >= 1/alpha.
    """
    e = epch_evalues(pmatrix.values, spec.r, kappa)
    if spec.metric == "fdr":
        result = ebh(e, spec.alpha, procedure="e-pch", kappa_used=float(kappa))
        return result
    m = e.size
    rejected = np.flatnonzero(e >= m / spec.alpha)
    return RejectionResult(
        gamma_e=spec.alpha / m,
        rejected=rejected,
        adjusted_e=e / m,
        metric=spec.metric,
        procedure="e-pch",
        kappa_used=float(kappa),
    )


def bh_on_pc(pmatrix: BasePValueMatrix, spec: PCHSpec, combiner: str | None = None) -> RejectionResult:
    """PC p-values per column, then a p-value multiple testing rule.

    metric fdr applies BH at alpha.  metric pfer (or fwer) rejects
    S_j <= alpha / m, whose adjusted_e is min(1, m S_j) with rule
    adjusted_e <= alpha.  Any combiner works and r = 1 (meta-analysis
    pooling) is allowed since no filter statistic is involved.
    """
    comb = (combiner or spec.combiner).lower()
    s = selection_pvalues(pmatrix.values, spec.r, comb)
    if spec.metric == "fdr":
        result = bh(s, spec.alpha, procedure="bh-pc")
        return result
    m = s.size
    rejected = np.flatnonzero(s <= spec.alpha / m)
    return RejectionResult(
        gamma_e=spec.alpha / m,
        rejected=rejected,
        adjusted_e=np.minimum(1.0, m * s),
        metric=spec.metric,
        procedure="bh-pc",
        kappa_used=None,
    )


def run_procedure(
    name: str,
    pmatrix: BasePValueMatrix,
    spec: PCHSpec,
    kappa="auto",
    grid=DEFAULT_KAPPA_GRID,
) -> RejectionResult:
    """Dispatch one named procedure.

    Names: e-filter (combiner from spec), e-filter-b / e-filter-c (combiner
    forced to bonferroni / cauchy), e-pch, adafilter, bh-pc.  kappa is a
    float or "auto"; auto tunes on the input data with the given grid and is
    ignored by the uncalibrated baselines.
    """
    name = str(name).lower()
    if name not in PROCEDURES:
        raise ValidationError(f"procedure must be one of {PROCEDURES}, got {name!r}")
    if name in ("e-filter", "e-filter-b", "e-filter-c"):
        if name == "e-filter-b":
            spec = replace(spec, combiner="bonferroni")
        elif name == "e-filter-c":
            spec = replace(spec, combiner="cauchy")
        if kappa == "auto":
            tune_id = "e-filter-fdr" if spec.metric == "fdr" else "e-filter-pfer"
            kappa = tune_kappa(pmatrix, spec, grid, tune_id)
        fp = build_filter_pair(pmatrix, spec)
        return efilter(fp, spec.alpha, kappa, spec.metric, procedure=name)
    if name == "e-pch":
        if kappa == "auto":
            kappa = tune_kappa(pmatrix, spec, grid, "e-pch")
        return epch(pmatrix, spec, kappa)
    if name == "adafilter":
        fp = build_filter_pair(pmatrix, replace(spec, combiner="bonferroni"))
        return adafilter(fp, spec.alpha, spec.metric)
    return bh_on_pc(pmatrix, spec)
