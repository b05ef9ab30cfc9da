"""Shared helpers: random instance generators and brute-force oracles."""

from __future__ import annotations

import numpy as np

from pcfilter import FilterPair


def random_filter_pair(rng: np.random.Generator, m: int | None = None) -> FilterPair:
    """A random (S, F) instance with deliberate ties and F = S cases mixed in.

    S values span many magnitudes so that calibrated e-values cross 1/alpha
    thresholds both ways; rounding injects exact ties, which exercise the
    strict-inequality boundaries of the selection rules.
    """
    if m is None:
        m = int(rng.integers(1, 201))
    S = rng.uniform(size=m) ** rng.uniform(0.5, 6.0)
    F = S * rng.uniform(size=m) ** rng.uniform(0.0, 2.0)
    if rng.random() < 0.25:
        F = S.copy()
    if rng.random() < 0.25:
        S = np.round(S, 2)
        F = np.round(F, 2)
    S = np.clip(S, 1e-12, 1.0)
    F = np.clip(F, 0.0, S)
    return FilterPair(S=S, F=F)


def grid_threshold_sup(
    b_filter: np.ndarray,
    b_select: np.ndarray,
    alpha: float,
    ratio: bool,
    step: float = 1e-6,
) -> float:
    """Dense-grid supremum oracle for the data-driven threshold.

    Scans gamma = step, 2*step, ..., alpha and returns the largest feasible
    value of gamma * N_F(gamma) <= alpha * denom(gamma), with counts taken
    strictly below gamma.  Only a test oracle; the library computes the sup
    segment-exactly.
    """
    grid = np.arange(step, alpha + step / 2.0, step)
    bf = np.sort(np.asarray(b_filter, dtype=float))
    n_f = np.searchsorted(bf, grid, side="left")
    if ratio:
        bs = np.sort(np.asarray(b_select, dtype=float))
        denom = np.maximum(np.searchsorted(bs, grid, side="left"), 1)
    else:
        denom = np.ones_like(n_f)
    feasible = grid * n_f <= alpha * denom
    return float(grid[feasible].max()) if feasible.any() else 0.0
