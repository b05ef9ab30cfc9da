"""Power-family p-to-e calibrators and data-driven exponent tuning.

The calibrator phi(x) = kappa * x**(kappa - 1) with kappa in (0, 1) turns a
p-value into an e-value: when P is superuniform, E[phi(P)] <= 1.  Smaller
kappa concentrates the e-value budget on very small p-values; tune_kappa
scans a fixed grid and keeps the smallest exponent that maximizes the
rejection count of a chosen procedure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Floor applied to p-values before calibration; phi diverges at 0.
P_FLOOR = 1e-300

# 0.01..0.09 then 0.1..0.9.  Kept sorted ascending because tuning breaks ties
# toward the smallest kappa.
DEFAULT_KAPPA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 10)) + tuple(
    round(0.1 * k, 1) for k in range(1, 10)
)

TUNABLE_PROCEDURES = ("e-pch", "e-filter-pfer", "e-filter-fdr")


def _checked_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not 0.0 < kappa < 1.0:
        raise ValidationError(f"kappa must lie in (0, 1), got {kappa!r}")
    return kappa


def validate_kappa_grid(grid) -> tuple[float, ...]:
    """Return the grid as a tuple after checking it is usable for tuning."""
    values = tuple(float(g) for g in grid)
    if not values:
        raise ValidationError("kappa grid must be nonempty")
    for g in values:
        _checked_kappa(g)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValidationError("kappa grid must be strictly increasing")
    return values


def phi(x, kappa: float):
    """Calibrate p-values in (0, 1] to e-values kappa * x**(kappa - 1).

    Accepts a scalar or an array; scalars come back as float.  Strictly
    decreasing in x, so small p-values map to large e-values.
    """
    kappa = _checked_kappa(kappa)
    arr = np.asarray(x, dtype=float)
    if arr.size:
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValidationError("phi expects finite values in (0, 1]")
    out = kappa * arr ** (kappa - 1.0)
    return float(out) if np.ndim(x) == 0 else out


def phi_inverse(threshold, kappa: float):
    """Preimage of an e-value threshold: phi(phi_inverse(t, k), k) == t.

    For t = 1/gamma this equals (kappa * gamma) ** (1 / (1 - kappa)), the
    largest p with phi(p) >= t.  Requires t >= kappa = phi(1) so the preimage
    lies in (0, 1].
    """
    kappa = _checked_kappa(kappa)
    arr = np.asarray(threshold, dtype=float)
    if arr.size:
        if np.any(np.isnan(arr)) or np.any(arr < kappa):
            raise ValidationError(
                "threshold below phi(1) = kappa has no preimage in (0, 1]"
            )
    gamma = 1.0 / arr
    out = (kappa * gamma) ** (1.0 / (1.0 - kappa))
    return float(out) if np.ndim(threshold) == 0 else out


@dataclass(frozen=True)
class Calibrator:
    """A fixed-exponent power calibrator phi(x) = kappa * x**(kappa - 1)."""

    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", _checked_kappa(self.kappa))

    def __call__(self, x):
        return phi(x, self.kappa)

    def inverse(self, threshold):
        return phi_inverse(threshold, self.kappa)


def tune_kappa(pmatrix, spec, grid=DEFAULT_KAPPA_GRID, procedure="e-filter-fdr"):
    """Smallest grid kappa attaining the maximum rejection count.

    procedure is one of "e-pch", "e-filter-pfer" or "e-filter-fdr"; the
    e-filter variants use spec.combiner for the filter pair and target the
    error metric named in the procedure id.  The full procedure is rerun at
    every grid point (18 by default), which is cheap and avoids incremental
    state.  If every kappa yields zero rejections the smallest grid value is
    returned.

    The tuning reuses the same data that selection sees, so the selected
    exponent is data dependent; downstream error control with a tuned kappa
    is an empirical matter, not a theorem.
    """
    from . import select  # select builds on this module; import here to avoid a cycle

    grid = validate_kappa_grid(grid)
    proc = str(procedure).lower()
    if proc not in TUNABLE_PROCEDURES:
        raise ValidationError(
            f"procedure must be one of {TUNABLE_PROCEDURES}, got {procedure!r}"
        )

    fp = None
    if proc != "e-pch":
        from .combine import build_filter_pair

        fp = build_filter_pair(pmatrix, spec)
        metric = "pfer" if proc.endswith("pfer") else "fdr"

    best_kappa = grid[0]
    best_count = -1
    for kappa in grid:
        if proc == "e-pch":
            count = select.epch(pmatrix, spec, kappa).rejected.size
        else:
            count = select.efilter_rejection_count(fp, spec.alpha, kappa, metric)
        if count > best_count:
            best_kappa, best_count = kappa, count
    return best_kappa
