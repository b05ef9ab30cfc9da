"""Order statistics, partial conjunction p-value combiners and filter statistics.

A partial conjunction (PC) null at replicability level r says that fewer than
r of the n base nulls behind a hypothesis are false.  A valid PC p-value S_j
combines the n - r + 1 largest base p-values of column j; the companion
filter statistic F_j summarizes the r - 1 smallest ones and satisfies
F_j <= S_j, which is what makes filtering-based selection work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .calibrate import P_FLOOR
from .errors import ValidationError

COMBINERS = ("bonferroni", "simes", "fisher", "cauchy")
FILTER_COMBINERS = ("bonferroni", "cauchy")
METRICS = ("fwer", "pfer", "fdr")

# Clamp range for the Cauchy tan transform only; tan blows up at 0 and 1.
CAUCHY_EPS = 1e-15


def _check_r(r: int, n: int) -> int:
    if int(r) != r:
        raise ValidationError(f"r must be an integer, got {r!r}")
    r = int(r)
    if not 1 <= r <= n:
        raise ValidationError(f"r must satisfy 1 <= r <= n = {n}, got {r}")
    return r


def _checked_column(col) -> np.ndarray:
    arr = np.asarray(col, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("expected a nonempty 1-d vector of p-values")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise ValidationError("p-values must be finite and in (0, 1]")
    return arr


@dataclass(frozen=True, eq=False)
class BasePValueMatrix:
    """n x m matrix of per-study base p-values with row and column labels.

    Row i holds study i, column j holds hypothesis j.  Entries must already
    be clamped into (0, 1]; ingestion (see the io module) handles zeros.
    """

    values: np.ndarray
    study_ids: tuple[str, ...]
    hypothesis_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("values must be 2-d (studies x hypotheses)")
        n, m = values.shape
        if n < 2:
            raise ValidationError(f"need at least 2 studies, got {n}")
        if m < 1:
            raise ValidationError("need at least one hypothesis")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0) or np.any(values > 1.0):
            raise ValidationError("base p-values must be finite and in (0, 1]")
        study_ids = tuple(str(s) for s in self.study_ids)
        hypothesis_ids = tuple(str(h) for h in self.hypothesis_ids)
        if len(study_ids) != n:
            raise ValidationError(f"expected {n} study ids, got {len(study_ids)}")
        if len(hypothesis_ids) != m:
            raise ValidationError(
                f"expected {m} hypothesis ids, got {len(hypothesis_ids)}"
            )
        if len(set(hypothesis_ids)) != m:
            raise ValidationError("hypothesis ids must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "study_ids", study_ids)
        object.__setattr__(self, "hypothesis_ids", hypothesis_ids)

    @classmethod
    def from_values(cls, values) -> "BasePValueMatrix":
        """Wrap a raw array with generated study/hypothesis labels."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("values must be 2-d (studies x hypotheses)")
        n, m = values.shape
        return cls(
            values=values,
            study_ids=tuple(f"study{i + 1}" for i in range(n)),
            hypothesis_ids=tuple(f"h{j + 1}" for j in range(m)),
        )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PCHSpec:
    """What to test: r-of-n replicability at level alpha under a given metric."""

    n: int
    r: int
    alpha: float
    metric: str = "fdr"
    combiner: str = "bonferroni"

    def __post_init__(self):
        n = int(self.n)
        if n < 2:
            raise ValidationError(f"need at least 2 studies, got n = {self.n!r}")
        r = _check_r(self.r, n)
        alpha = float(self.alpha)
        if not 0.0 < alpha <= 1.0:
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        metric = str(self.metric).lower()
        if metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        combiner = str(self.combiner).lower()
        if combiner not in COMBINERS:
            raise ValidationError(
                f"combiner must be one of {COMBINERS}, got {self.combiner!r}"
            )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "combiner", combiner)

    def require_filter(self) -> None:
        """Filtering needs the (r-1)-th order statistic, hence r >= 2."""
        if self.r < 2:
            raise ValidationError("filter-based procedures need r >= 2")


@dataclass(frozen=True, eq=False)
class FilterPair:
    """Selection p-values S and filter statistics F with F_j <= S_j."""

    S: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if S.ndim != 1 or F.ndim != 1 or S.shape != F.shape or S.size == 0:
            raise ValidationError("S and F must be nonempty 1-d vectors of equal length")
        if not np.all(np.isfinite(S)) or np.any(S <= 0.0) or np.any(S > 1.0):
            raise ValidationError("selection values must be finite and in (0, 1]")
        if not np.all(np.isfinite(F)) or np.any(F < 0.0) or np.any(F > 1.0):
            raise ValidationError("filter values must be finite and in [0, 1]")
        if np.any(F > S):
            raise ValidationError("filter statistic exceeds its selection p-value")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "F", F)

    @property
    def m(self) -> int:
        return self.S.size


def order_stats(col) -> np.ndarray:
    """Nondecreasing copy of one column; stable with respect to input order."""
    return np.sort(_checked_column(col), kind="stable")


def _pc_matrix(sorted_vals: np.ndarray, r: int, combiner: str) -> np.ndarray:
    """PC p-values for each column of an n x m matrix already sorted within columns."""
    n = sorted_vals.shape[0]
    k = n - r + 1
    tail = sorted_vals[r - 1:, :]  # P_(r) .. P_(n)
    if combiner == "bonferroni":
        return np.minimum(1.0, k * tail[0])
    if combiner == "simes":
        denom = np.arange(1, k + 1, dtype=float)[:, None]  # i - r + 1 for i = r..n
        return np.minimum(1.0, np.min(k * tail / denom, axis=0))
    if combiner == "fisher":
        stat = -2.0 * np.sum(np.log(tail), axis=0)
        return stats.chi2.sf(stat, df=2 * k)
    if combiner == "cauchy":
        clipped = np.clip(tail, CAUCHY_EPS, 1.0 - CAUCHY_EPS)
        # tan((0.5 - p) pi) = cot(pi p); folding the angle into (0, pi/2]
        # keeps relative precision in the large terms near both endpoints,
        # which otherwise degrades to ~1e-9 by p = 1e-8
        near0 = clipped <= 0.5
        folded = np.where(near0, clipped, 1.0 - clipped)
        with np.errstate(divide="ignore"):
            cot = 1.0 / np.tan(np.pi * folded)
        stat = np.mean(np.where(near0, cot, -cot), axis=0)
        # upper tail via arctan(1/t)/pi for t > 0: algebraically equal to
        # 0.5 - arctan(t)/pi but immune to the cancellation that loses
        # relative precision once t exceeds ~1e6
        with np.errstate(divide="ignore"):
            small = np.arctan(np.where(stat > 0.0, 1.0 / stat, 1.0)) / np.pi
        return np.where(stat > 0.0, small, 0.5 - np.arctan(stat) / np.pi)
    raise ValidationError(f"combiner must be one of {COMBINERS}, got {combiner!r}")


def _pc_column(col, r: int, combiner: str) -> float:
    sorted_col = order_stats(col)
    r = _check_r(r, sorted_col.size)
    return float(_pc_matrix(sorted_col[:, None], r, combiner)[0])


def pc_bonferroni(col, r: int) -> float:
    """Bonferroni PC p-value min(1, (n - r + 1) * P_(r))."""
    return _pc_column(col, r, "bonferroni")


def pc_simes(col, r: int) -> float:
    """Simes PC p-value min over i = r..n of (n - r + 1) P_(i) / (i - r + 1)."""
    return _pc_column(col, r, "simes")


def pc_fisher(col, r: int) -> float:
    """Fisher PC p-value: chi-square upper tail of -2 sum of log P_(i), i >= r."""
    return _pc_column(col, r, "fisher")


def pc_cauchy(col, r: int) -> float:
    """Cauchy-combination PC p-value over P_(r) .. P_(n).

    Approximately valid under dependence; entries are clamped into
    [1e-15, 1 - 1e-15] before the tan transform.
    """
    return _pc_column(col, r, "cauchy")


def filter_stat(col, r: int, combiner: str = "bonferroni", literal_tan: bool = False) -> float:
    """Filter statistic built from the r - 1 smallest base p-values.

    bonferroni: min(1, (n - r + 1) * P_(r-1)), the AdaFilter filtering value.
    cauchy: P_(r-1) itself, which keeps the calibrator domain and satisfies
    F <= S against the Cauchy PC p-value.  literal_tan=True instead returns
    tan((0.5 - P_(r-1)) * pi); that variant is unbounded, cannot be
    calibrated, and exists only for side-by-side comparison.
    """
    sorted_col = order_stats(col)
    n = sorted_col.size
    r = _check_r(r, n)
    if r < 2:
        raise ValidationError("filter statistic needs r >= 2 (no (r-1)-th order stat)")
    if combiner not in FILTER_COMBINERS:
        raise ValidationError(
            f"filter combiner must be one of {FILTER_COMBINERS}, got {combiner!r}"
        )
    if literal_tan and combiner != "cauchy":
        raise ValidationError("literal_tan applies to the cauchy combiner only")
    p_prev = float(sorted_col[r - 2])
    if combiner == "bonferroni":
        return min(1.0, (n - r + 1) * p_prev)
    if literal_tan:
        clipped = min(max(p_prev, CAUCHY_EPS), 1.0 - CAUCHY_EPS)
        return float(np.tan((0.5 - clipped) * np.pi))
    return p_prev


def selection_pvalues(values: np.ndarray, r: int, combiner: str) -> np.ndarray:
    """PC p-values for every column of an n x m array; r = 1 is allowed."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValidationError("values must be 2-d (studies x hypotheses)")
    r = _check_r(r, values.shape[0])
    if combiner not in COMBINERS:
        raise ValidationError(f"combiner must be one of {COMBINERS}, got {combiner!r}")
    sorted_vals = np.sort(values, axis=0, kind="stable")
    return _pc_matrix(sorted_vals, r, combiner)


def build_filter_pair(pmatrix: BasePValueMatrix, spec: PCHSpec) -> FilterPair:
    """S and F vectors for every hypothesis under the given spec.

    Only the bonferroni and cauchy combiners define a filter statistic here.
    F is clipped up to S where floating-point wobble in the Cauchy tail would
    otherwise break F <= S by an ulp; exact arithmetic gives F <= S already.
    """
    if spec.n != pmatrix.n:
        raise ValidationError(
            f"spec expects n = {spec.n} studies but matrix has {pmatrix.n}"
        )
    spec.require_filter()
    if spec.combiner not in FILTER_COMBINERS:
        raise ValidationError(
            f"filter combiner must be one of {FILTER_COMBINERS}, got {spec.combiner!r}"
        )
    sorted_vals = np.sort(pmatrix.values, axis=0, kind="stable")
    S = _pc_matrix(sorted_vals, spec.r, spec.combiner)
    p_prev = sorted_vals[spec.r - 2, :]
    if spec.combiner == "bonferroni":
        F = np.minimum(1.0, (pmatrix.n - spec.r + 1) * p_prev)
    else:
        F = p_prev.copy()
    F = np.minimum(F, S)
    return FilterPair(S=S, F=F)
