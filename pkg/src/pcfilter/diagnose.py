"""Power-law CDF diagnostics for the selection and filter statistics.

Under a true partial conjunction null the selection statistic S admits an
upper power bound pr(S <= x) <= x^d1 (d1 >= 1 for a valid p-value) while
the filter F admits a lower one pr(F <= x) >= x^d2.  The gap fixes the
smallest safe calibrator exponent kappa_star = max(0, d2 - d1 + 1): any
kappa in [kappa_star, 1) makes the calibrated selection statistic pay for
its look at the filter, i.e. pr{phi(S) >= 1/gamma} <= gamma pr{phi(F) >=
1/gamma} for every gamma.

Exponents are fitted on a finite probe grid from Monte-Carlo CDF estimates
of an equicorrelated multivariate normal configuration with two-sided
normal p-values: S is the Bonferroni partial conjunction p-value (the
maximum p-value when r = n) and F is the minimum p-value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .calibrate import _checked_kappa, phi_inverse
from .errors import ComputationError, ValidationError
from .simulate import _equicorrelated_chol, _worker_count, rep_generator

DEFAULT_GAMMA_LIST = (0.01, 0.05, 0.1)

BISECT_LO = 1e-6
BISECT_HI = 50.0
BISECT_TOL = 1e-8


def default_x_grid(size: int = 50) -> np.ndarray:
    """size equispaced interior points of (0, 1): i / (size + 1)."""
    if size < 2:
        raise ValidationError(f"grid needs at least 2 points, got {size}")
    return np.arange(1, size + 1) / (size + 1.0)


def _checked_mu(mu) -> np.ndarray:
    arr = np.asarray(mu, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ValidationError("mu must be a nonempty finite 1-d vector")
    return arr


def _checked_rho(rho: float, n: int) -> float:
    rho = float(rho)
    if n > 1 and not -1.0 / (n - 1) < rho < 1.0:
        raise ValidationError(
            f"equicorrelation rho must lie in (-1/{n - 1}, 1) for n = {n}, got {rho}"
        )
    return rho


def _checked_grid(x_grid) -> np.ndarray:
    grid = np.asarray(x_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValidationError("x_grid must hold at least 2 points")
    if not np.all((grid > 0.0) & (grid < 1.0)):
        raise ValidationError("x_grid points must lie strictly inside (0, 1)")
    if not np.all(np.diff(grid) > 0.0):
        raise ValidationError("x_grid must be strictly increasing")
    return grid


def _as_rng(rng) -> np.random.Generator:
    if rng is None:
        return rep_generator(0, 0)
    if isinstance(rng, (int, np.integer)):
        return rep_generator(int(rng), 0)
    return rng


@dataclass(frozen=True, eq=False)
class CdfEstimates:
    """Monte-Carlo CDF estimates of (S, F) on the probe grid, with SEs."""

    x_grid: np.ndarray
    p_s: np.ndarray
    p_f: np.ndarray
    se_s: np.ndarray
    se_f: np.ndarray
    mc_samples: int
    rho: float
    mu: tuple
    r: int

    def __post_init__(self):
        sizes = {arr.size for arr in (self.x_grid, self.p_s, self.p_f, self.se_s, self.se_f)}
        if len(sizes) != 1:
            raise ValidationError("grid and estimate arrays must have equal length")


@dataclass(frozen=True)
class LehmannDiagnostic:
    """Fitted exponents d1, d2 and kappa_star = max(0, d2 - d1 + 1).

    d1 < 1 signals that the probed S is not behaving like a valid p-value
    (estimation noise aside); it is reported as-is, never clamped.
    """

    d1: float
    d2: float
    kappa_star: float
    grid: tuple
    mc_samples: int
    rho: float
    mu: tuple

    def __post_init__(self):
        if self.d1 < 0.0 or self.d2 < 0.0:
            raise ValidationError("d1 and d2 must be nonnegative")
        want = max(0.0, self.d2 - self.d1 + 1.0)
        if abs(self.kappa_star - want) > 1e-9:
            raise ValidationError("kappa_star must equal max(0, d2 - d1 + 1)")

    @property
    def d1_below_one(self) -> bool:
        return self.d1 < 1.0

    @property
    def prop1_applicable(self) -> bool:
        return 0.0 <= self.kappa_star < 1.0


@dataclass(frozen=True)
class Prop1Check:
    """One gamma's Monte-Carlo margin for the calibrated-pair inequality.

    lhs estimates pr{phi(S) >= 1/gamma}, rhs estimates pr{phi(F) >= 1/gamma};
    diff is the paired mean of 1{S <= x_gamma} - gamma 1{F <= x_gamma} and
    the check passes when diff <= 3 se.
    """

    gamma: float
    lhs: float
    rhs: float
    diff: float
    se: float
    passed: bool


def _sample_sf(mu, rho, r, mc_samples, rng, chunk=200_000):
    """Draw (S, F) pairs for the configuration; chunked to bound memory."""
    mu = _checked_mu(mu)
    n = mu.size
    rho = _checked_rho(rho, n)
    r = n if r is None else int(r)
    if not 1 <= r <= n:
        raise ValidationError(f"r must satisfy 1 <= r <= n = {n}, got {r}")
    mc_samples = int(mc_samples)
    if mc_samples < 2:
        raise ValidationError("mc_samples must be at least 2")
    chol = _equicorrelated_chol(n, rho) if n > 1 else np.ones((1, 1))
    rng = _as_rng(rng)
    s_parts, f_parts = [], []
    left = mc_samples
    while left > 0:
        take = min(chunk, left)
        x = mu[:, None] + chol @ rng.standard_normal((n, take))
        p = np.sort(2.0 * ndtr(-np.abs(x)), axis=0)
        s_parts.append(np.minimum(1.0, (n - r + 1) * p[r - 1]))
        f_parts.append(p[0])
        left -= take
    return np.concatenate(s_parts), np.concatenate(f_parts), rho, r, mu


def estimate_cdfs(mu, rho, r=None, x_grid=None, mc_samples=1_000_000, rng=None) -> CdfEstimates:
    """Estimate pr(S < x) and pr(F < x) on the probe grid by Monte Carlo."""
    grid = default_x_grid() if x_grid is None else _checked_grid(x_grid)
    s, f, rho, r, mu = _sample_sf(mu, rho, r, mc_samples, rng)
    n_mc = s.size
    p_s = np.searchsorted(np.sort(s), grid, side="left") / n_mc
    p_f = np.searchsorted(np.sort(f), grid, side="left") / n_mc
    return CdfEstimates(
        x_grid=grid,
        p_s=p_s,
        p_f=p_f,
        se_s=np.sqrt(p_s * (1.0 - p_s) / n_mc),
        se_f=np.sqrt(p_f * (1.0 - p_f) / n_mc),
        mc_samples=n_mc,
        rho=rho,
        mu=tuple(float(v) for v in mu),
        r=r,
    )


def _bisect_exponent(x_bind: float, target: float, what: str) -> float:
    """Solve x_bind^d = target for d on [BISECT_LO, BISECT_HI] by bisection.

    x_bind^d is strictly decreasing in d for x_bind in (0, 1), so a sign
    change of x_bind^d - target brackets the root.
    """
    lo, hi = BISECT_LO, BISECT_HI
    g_lo = x_bind**lo - target
    g_hi = x_bind**hi - target
    if g_lo < 0.0 or g_hi > 0.0:
        raise ComputationError(
            f"no root for {what} in [{lo}, {hi}]: binding x = {x_bind:.6g}, "
            f"CDF estimate = {target:.6g}"
        )
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if x_bind**mid - target >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_lehmann(cdf_estimates, x_grid=None) -> LehmannDiagnostic:
    """Fit (d1, d2, kappa_star) from CDF estimates on the probe grid.

    cdf_estimates is a CdfEstimates, or a (p_s, p_f) pair with an explicit
    x_grid.  d1 is the largest exponent with x^d1 >= pr(S < x) at every
    grid point; equivalently the binding point minimizes log pr / log x and
    d1 solves that point's equation by bisection.  d2 symmetrically is the
    smallest exponent with x^d2 <= pr(F < x) everywhere (binding point
    maximizes the log ratio).  Grid points whose estimate is 0 or 1 cannot
    bind and are skipped; if nothing can bind, the fit fails loudly.
    """
    if isinstance(cdf_estimates, CdfEstimates):
        est = cdf_estimates
        grid, p_s, p_f = est.x_grid, est.p_s, est.p_f
        meta = dict(mc_samples=est.mc_samples, rho=est.rho, mu=est.mu)
    else:
        if x_grid is None:
            raise ValidationError("x_grid is required when passing raw (p_s, p_f) arrays")
        grid = _checked_grid(x_grid)
        p_s, p_f = (np.asarray(a, dtype=float) for a in cdf_estimates)
        meta = dict(mc_samples=0, rho=float("nan"), mu=())
    if not (grid.size == p_s.size == p_f.size):
        raise ValidationError("grid and CDF arrays must have equal length")
    if np.any(p_s < 0.0) or np.any(p_s > 1.0) or np.any(p_f < 0.0) or np.any(p_f > 1.0):
        raise ValidationError("CDF estimates must lie in [0, 1]")

    log_x = np.log(grid)
    with np.errstate(divide="ignore"):
        ratio_s = np.where((p_s > 0.0) & (p_s < 1.0), np.log(np.maximum(p_s, 1e-320)) / log_x, np.inf)
        ratio_f = np.where((p_f > 0.0) & (p_f < 1.0), np.log(np.maximum(p_f, 1e-320)) / log_x, -np.inf)
    if not np.any(np.isfinite(ratio_s)):
        raise ComputationError(
            "no grid point can bind d1: every pr(S < x) estimate is 0 or 1; "
            f"estimates range [{p_s.min():.3g}, {p_s.max():.3g}]"
        )
    if not np.any(np.isfinite(ratio_f)):
        raise ComputationError(
            "no grid point can bind d2: every pr(F < x) estimate is 0 or 1; "
            f"estimates range [{p_f.min():.3g}, {p_f.max():.3g}]"
        )
    i1 = int(np.argmin(ratio_s))
    i2 = int(np.argmax(ratio_f))
    d1 = _bisect_exponent(float(grid[i1]), float(p_s[i1]), "d1")
    d2 = _bisect_exponent(float(grid[i2]), float(p_f[i2]), "d2")
    return LehmannDiagnostic(
        d1=d1,
        d2=d2,
        kappa_star=max(0.0, d2 - d1 + 1.0),
        grid=tuple(grid),
        **meta,
    )


def diagnose(mu, rho, r=None, x_grid=None, mc_samples=1_000_000, rng=None) -> LehmannDiagnostic:
    """estimate_cdfs followed by fit_lehmann."""
    return fit_lehmann(estimate_cdfs(mu, rho, r, x_grid, mc_samples, rng))


def verify_prop1(
    diag: LehmannDiagnostic,
    kappa: float,
    gamma_list=DEFAULT_GAMMA_LIST,
    mc_samples: int = 1_000_000,
    rng=None,
    r=None,
) -> tuple:
    """Monte-Carlo check of pr{phi(S) >= 1/gamma} <= gamma pr{phi(F) >= 1/gamma}.

    The inequality is guaranteed only for kappa >= diag.kappa_star; calling
    with a smaller kappa is allowed precisely to observe the failure.  Since
    phi decreases, {phi(S) >= 1/gamma} is {S <= x_gamma} with x_gamma =
    phi_inverse(1/gamma), so both sides are estimated from the same draws
    and the paired difference gets a proper standard error.
    """
    kappa = _checked_kappa(kappa)
    gammas = [float(g) for g in gamma_list]
    if not gammas or any(not 0.0 < g < 1.0 for g in gammas):
        raise ValidationError("gamma_list entries must lie in (0, 1)")
    if not diag.mu:
        raise ValidationError("diagnostic carries no configuration to resample")
    s, f, _, _, _ = _sample_sf(diag.mu, diag.rho, r, mc_samples, _as_rng(rng))
    out = []
    for gamma in gammas:
        x_gamma = phi_inverse(1.0 / gamma, kappa)
        hit_s = s <= x_gamma
        hit_f = f <= x_gamma
        d = hit_s.astype(float) - gamma * hit_f.astype(float)
        diff = float(d.mean())
        se = float(d.std(ddof=1) / np.sqrt(d.size))
        out.append(
            Prop1Check(
                gamma=gamma,
                lhs=float(hit_s.mean()),
                rhs=float(hit_f.mean()),
                diff=diff,
                se=se,
                passed=bool(diff <= 3.0 * se),
            )
        )
    return tuple(out)


def kappa_star_curve(mu, rho_grid, r=None, x_grid=None, mc_samples=1_000_000, seed=0) -> tuple:
    """One LehmannDiagnostic per rho; each rho owns an RNG stream.

    With PCFILTER_THREADS > 1 the rho values run on a thread pool; results
    are identical to the sequential order.
    """
    rhos = [float(v) for v in rho_grid]
    if not rhos:
        raise ValidationError("rho_grid must be nonempty")

    def one(idx_rho):
        idx, rho = idx_rho
        return diagnose(mu, rho, r, x_grid, mc_samples, rep_generator(seed, idx))

    workers = _worker_count()
    items = list(enumerate(rhos))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return tuple(pool.map(one, items))
    return tuple(one(item) for item in items)


def diagnostics_rows(diags) -> list[dict]:
    """CSV-ready rows; mu renders as pipe-joined values."""
    out = []
    for diag in diags:
        out.append(
            {
                "rho": diag.rho,
                "mu": "|".join(repr(v) for v in diag.mu),
                "d1": diag.d1,
                "d2": diag.d2,
                "kappa_star": diag.kappa_star,
                "mc_samples": diag.mc_samples,
            }
        )
    return out
