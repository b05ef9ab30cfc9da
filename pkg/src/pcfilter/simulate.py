"""Seeded Monte-Carlo harness: scenario generators and error/power scoring.

Five data-generation scenarios stress the selection procedures under
different cross-study dependence mechanisms:

1. equicorrelated studies, two-sided tests;
2. subject-overlap design with 5 studies, overlap q between studies 2 and 5;
3. AR-correlated studies with negative rho, one-sided tests;
4. shared-control design, cross-study correlation exactly 1/2;
5. scale-mixture noise with deliberately misspecified normal p-values.

Every rep draws from its own counter-based RNG stream (Philox keyed by
(seed, rep)), so schedules and thread counts never change results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr

from .calibrate import DEFAULT_KAPPA_GRID, P_FLOOR
from .combine import METRICS, BasePValueMatrix, PCHSpec
from .errors import ValidationError
from .select import PROCEDURES, RejectionResult, run_procedure

SCENARIOS = (1, 2, 3, 4, 5)

# The six (n, r) combinations used by the averaged benchmark tables.
NR_GRID = ((2, 2), (4, 2), (8, 2), (4, 4), (8, 4), (8, 8))

METRIC_NAMES = ("fdr", "pfer", "fwer", "recall", "rejections")

CSV_COLUMNS = ("procedure", "scenario", "rho", "n", "r", "metric_name", "mean", "sd", "B")

_DEFAULT_MU = (-6.0, -5.0, -4.0, 4.0, 5.0, 6.0)
_SCENARIO2_MU = (-4.0, -3.0, 3.0, 4.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full parameterization of one simulation setting.

    n defaults to 4, except scenario 2 where the design fixes n = 5.  q and
    s apply to scenario 2 only (subject overlap and study-1 subject count);
    supplying them elsewhere is an error.  mu_set defaults to the
    scenario's standard nonzero mean pool.  rho is the equicorrelation
    (scenarios 1, 5) or AR parameter (scenario 3); scenarios 2 and 4 have a
    fixed dependence structure and require rho = 0.
    """

    scenario: int
    m: int = 10_000
    n: int | None = None
    r: int = 2
    rho: float = 0.0
    pi00: float = 0.98
    pi1: float = 0.01
    mu_set: tuple[float, ...] | None = None
    q: int | None = None
    s: int | None = None
    B: int = 100
    seed: int = 0
    alpha: float = 0.2
    metric: str = "fdr"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be in {SCENARIOS}, got {self.scenario!r}")
        for name in ("m", "B"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValidationError(f"{name} must be a positive integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        n = (5 if self.scenario == 2 else 4) if self.n is None else int(self.n)
        r = int(self.r)
        if n < 2 or n > 20:
            raise ValidationError(f"n must lie in [2, 20] (2^n enumeration), got {n}")
        if not 1 <= r <= n:
            raise ValidationError(f"r must satisfy 1 <= r <= n = {n}, got {r}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "r", r)
        pi00, pi1 = float(self.pi00), float(self.pi1)
        if pi00 < 0.0 or pi1 < 0.0 or pi00 + pi1 > 1.0 + 1e-12:
            raise ValidationError("need pi00, pi1 >= 0 with pi00 + pi1 <= 1")
        object.__setattr__(self, "pi00", pi00)
        object.__setattr__(self, "pi1", pi1)
        alpha = float(self.alpha)
        if not 0.0 < alpha <= 1.0:
            raise ValidationError(f"alpha must lie in (0, 1], got {alpha!r}")
        object.__setattr__(self, "alpha", alpha)
        metric = str(self.metric).lower()
        if metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "seed", int(self.seed))
        rho = float(self.rho)

        if self.scenario == 2:
            if n != 5:
                raise ValidationError("scenario 2 is a 5-study design; set n = 5")
            s = 5000 if self.s is None else int(self.s)
            if s < 5 or s % 5 != 0:
                raise ValidationError(f"scenario 2 needs s divisible by 5, got {s}")
            block = s // 5
            q = 500 if self.q is None else int(self.q)
            if not 0 <= q <= block:
                raise ValidationError(f"q must lie in [0, {block}], got {q}")
            object.__setattr__(self, "q", q)
            object.__setattr__(self, "s", s)
        else:
            if self.q is not None or self.s is not None:
                raise ValidationError("q and s apply to scenario 2 only")

        if self.scenario in (2, 4):
            if rho != 0.0:
                raise ValidationError(
                    f"scenario {self.scenario} has a fixed dependence structure; rho must be 0"
                )
        elif self.scenario == 3:
            if not -1.0 < rho < 1.0:
                raise ValidationError(f"AR parameter rho must lie in (-1, 1), got {rho}")
        else:
            if not -1.0 / (n - 1) < rho < 1.0:
                raise ValidationError(
                    f"equicorrelation rho must lie in (-1/{n - 1}, 1) for n = {n}, got {rho}"
                )
        object.__setattr__(self, "rho", rho)

        if self.mu_set is None:
            mu_set = _SCENARIO2_MU if self.scenario == 2 else _DEFAULT_MU
        else:
            mu_set = tuple(float(v) for v in self.mu_set)
            if not mu_set or any(v == 0.0 or not np.isfinite(v) for v in mu_set):
                raise ValidationError("mu_set must be nonempty finite nonzero means")
        object.__setattr__(self, "mu_set", mu_set)


@dataclass(frozen=True, eq=False)
class TruthAssignment:
    """Which base nulls are false (config_matrix) and which PC nulls are false."""

    config_matrix: np.ndarray  # (n, m) bool, True where the base null is false
    pc_truth: np.ndarray  # (m,) bool, True where >= r base nulls are false

    def __post_init__(self):
        cm = np.asarray(self.config_matrix, dtype=bool)
        pc = np.asarray(self.pc_truth, dtype=bool)
        if cm.ndim != 2 or pc.ndim != 1 or cm.shape[1] != pc.size:
            raise ValidationError("config_matrix (n, m) and pc_truth (m,) must align")
        object.__setattr__(self, "config_matrix", cm)
        object.__setattr__(self, "pc_truth", pc)


@dataclass(frozen=True)
class ErrorMetrics:
    """One rep's scores: fdp = v / max(rejections, 1), recall over false PC nulls."""

    fdp: float
    v: int
    fwer_indicator: bool
    recall: float
    rejections: int


def rep_generator(seed: int, rep: int) -> np.random.Generator:
    """Philox stream for one rep, split from the experiment seed by rep index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def sample_configurations(cfg: ScenarioConfig, rng: np.random.Generator) -> TruthAssignment:
    """Draw one of the 2^n base-null configurations per hypothesis.

    Global null with probability pi00; pi1 is split equally over the
    configurations with >= r false base nulls (the false PC nulls); the
    remaining mass is split equally over the non-global configurations with
    fewer than r false base nulls.
    """
    n, r, m = cfg.n, cfg.r, cfg.m
    if n > 20:
        raise ValidationError("n > 20 would enumerate more than 2^20 configurations")
    n_configs = 2**n
    bits = (np.arange(n_configs, dtype=np.uint32)[:, None] >> np.arange(n)) & 1
    bits = bits.astype(bool)
    n_false = bits.sum(axis=1)

    probs = np.zeros(n_configs)
    probs[0] = cfg.pi00
    false_pc = n_false >= r
    other = (~false_pc) & (n_false > 0)
    rest = 1.0 - cfg.pi00 - cfg.pi1
    if cfg.pi1 > 0.0 and not false_pc.any():
        raise ValidationError("pi1 > 0 but no configuration has >= r false base nulls")
    if rest > 1e-12 and not other.any():
        raise ValidationError(
            "pi00 + pi1 < 1 but r = 1 leaves no non-global true PC configuration"
        )
    if false_pc.any():
        probs[false_pc] = cfg.pi1 / false_pc.sum()
    if other.any():
        probs[other] = max(rest, 0.0) / other.sum()
    probs /= probs.sum()

    draw = rng.choice(n_configs, size=m, p=probs)
    config_matrix = bits[draw].T
    pc_truth = n_false[draw] >= r
    return TruthAssignment(config_matrix=config_matrix, pc_truth=pc_truth)


def _mean_matrix(cfg: ScenarioConfig, truth: TruthAssignment, rng: np.random.Generator) -> np.ndarray:
    mu = np.zeros((cfg.n, cfg.m))
    mask = truth.config_matrix
    count = int(mask.sum())
    if count:
        mu[mask] = rng.choice(np.asarray(cfg.mu_set), size=count)
    return mu


def _ar1_rows(z: np.ndarray, coef: float = 0.5) -> np.ndarray:
    """Apply the AR(1) hypothesis-direction factor along axis 1.

    x_1 = z_1 and x_k = coef x_{k-1} + sqrt(1 - coef^2) z_k gives stationary
    unit variance and corr(x_j, x_j') = coef^{|j - j'|} without ever
    materializing the m x m covariance.
    """
    zz = np.array(z, dtype=float, copy=True)
    zz[:, 1:] *= np.sqrt(1.0 - coef * coef)
    return lfilter([1.0], [1.0, -coef], zz, axis=1)


def _equicorrelated_chol(n: int, rho: float) -> np.ndarray:
    sigma = np.full((n, n), rho)
    np.fill_diagonal(sigma, 1.0)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(
            f"equicorrelated covariance not positive definite at rho = {rho}"
        ) from exc


def _ar_chol(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"AR covariance not positive definite at rho = {rho}") from exc


def _wrap(p: np.ndarray) -> BasePValueMatrix:
    return BasePValueMatrix.from_values(np.maximum(p, P_FLOOR))


def gen_scenario1(cfg: ScenarioConfig, rng: np.random.Generator):
    """Equicorrelated studies, AR(1) across hypotheses, two-sided tests."""
    _require_scenario(cfg, 1)
    truth = sample_configurations(cfg, rng)
    x = _mean_matrix(cfg, truth, rng)
    y = rng.standard_normal((cfg.n, cfg.m))
    x += _equicorrelated_chol(cfg.n, cfg.rho) @ _ar1_rows(y)
    return _wrap(2.0 * ndtr(-np.abs(x))), truth


def gen_scenario2(cfg: ScenarioConfig, rng: np.random.Generator):
    """Subject-overlap design with 5 studies.

    Study 1 averages s subjects with per-subject noise variance s.  Studies
    2 to 4 each reuse a disjoint block of s/5 study-1 subjects, scaled by
    1/sqrt(5).  Study 5 has s/5 subjects, q of them borrowed from study 2
    (borrowed noise keeps its study-2 scaling so every statistic has unit
    variance; corr(X_2, X_5) = q / (s/5)).  Sampling works on block sums,
    whose joint normal law matches the subject-level construction exactly.
    """
    _require_scenario(cfg, 2)
    truth = sample_configurations(cfg, rng)
    mu = _mean_matrix(cfg, truth, rng)
    m, s, q = cfg.m, cfg.s, cfg.q
    block = s // 5
    sqrt5 = np.sqrt(5.0)

    # Block sums of iid N(0, s) subject noise; Q covers the q shared subjects.
    shared_q = rng.normal(0.0, np.sqrt(q * s), size=m) if q else np.zeros(m)
    rest_1 = rng.normal(0.0, np.sqrt((block - q) * s), size=m) if block > q else np.zeros(m)
    block_1 = shared_q + rest_1
    blocks = [rng.normal(0.0, np.sqrt(block * s), size=m) for _ in range(4)]
    fresh_5 = rng.normal(0.0, np.sqrt((block - q) * block), size=m) if block > q else np.zeros(m)

    x = np.empty((5, m))
    x[0] = mu[0] + (block_1 + sum(blocks)) / s
    x[1] = mu[1] + block_1 / (block * sqrt5)
    x[2] = mu[2] + blocks[0] / (block * sqrt5)
    x[3] = mu[3] + blocks[1] / (block * sqrt5)
    x[4] = mu[4] + (fresh_5 + shared_q / sqrt5) / block
    return _wrap(2.0 * ndtr(-np.abs(x))), truth


def gen_scenario3(cfg: ScenarioConfig, rng: np.random.Generator):
    """AR-correlated studies (negative rho expected), one-sided tests."""
    _require_scenario(cfg, 3)
    truth = sample_configurations(cfg, rng)
    x = _mean_matrix(cfg, truth, rng)
    y = rng.standard_normal((cfg.n, cfg.m))
    x += _ar_chol(cfg.n, cfg.rho) @ _ar1_rows(y)
    return _wrap(ndtr(-x)), truth


def gen_scenario4(cfg: ScenarioConfig, rng: np.random.Generator):
    """Shared-control design: X = (X_tr - X_c) / sqrt(2), corr 1/2 across studies."""
    _require_scenario(cfg, 4)
    truth = sample_configurations(cfg, rng)
    mu = _mean_matrix(cfg, truth, rng)
    x_tr = mu + rng.standard_normal((cfg.n, cfg.m))
    x_c = rng.standard_normal(cfg.m)
    x = (x_tr - x_c[None, :]) / np.sqrt(2.0)
    return _wrap(2.0 * ndtr(-np.abs(x))), truth


def gen_scenario5(cfg: ScenarioConfig, rng: np.random.Generator):
    """Scenario 1 dependence but scale-mixture noise; p-values stay normal
    (misspecified on purpose, so null p-values are not superuniform)."""
    _require_scenario(cfg, 5)
    truth = sample_configurations(cfg, rng)
    x = _mean_matrix(cfg, truth, rng)
    comp = rng.choice(3, size=(cfg.n, cfg.m), p=[0.5, 0.25, 0.25])
    sd = np.sqrt(np.array([1.0, 2.0, 4.0]))[comp]
    y = rng.standard_normal((cfg.n, cfg.m)) * sd
    x += _equicorrelated_chol(cfg.n, cfg.rho) @ _ar1_rows(y)
    return _wrap(2.0 * ndtr(-np.abs(x))), truth


GENERATORS = {1: gen_scenario1, 2: gen_scenario2, 3: gen_scenario3, 4: gen_scenario4, 5: gen_scenario5}


def _require_scenario(cfg: ScenarioConfig, scenario: int) -> None:
    if cfg.scenario != scenario:
        raise ValidationError(f"config is for scenario {cfg.scenario}, generator is {scenario}")


def generate(cfg: ScenarioConfig, rng: np.random.Generator):
    """Dispatch to the scenario generator."""
    return GENERATORS[cfg.scenario](cfg, rng)


def score(result: RejectionResult, truth: TruthAssignment) -> ErrorMetrics:
    """Score one rejection set against the truth; v + true positives = rejections."""
    rejected = result.rejected
    n_rej = int(rejected.size)
    tp = int(np.count_nonzero(truth.pc_truth[rejected]))
    v = n_rej - tp
    n_false = int(truth.pc_truth.sum())
    return ErrorMetrics(
        fdp=v / max(n_rej, 1),
        v=v,
        fwer_indicator=v > 0,
        recall=tp / max(n_false, 1),
        rejections=n_rej,
    )


def _metric_series(metrics: tuple[ErrorMetrics, ...], name: str) -> np.ndarray:
    if name == "fdr":
        return np.array([m.fdp for m in metrics])
    if name == "pfer":
        return np.array([float(m.v) for m in metrics])
    if name == "fwer":
        return np.array([float(m.fwer_indicator) for m in metrics])
    if name == "recall":
        return np.array([m.recall for m in metrics])
    if name == "rejections":
        return np.array([float(m.rejections) for m in metrics])
    raise ValidationError(f"metric_name must be one of {METRIC_NAMES}, got {name!r}")


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Per-rep scores for every procedure plus aggregation helpers."""

    config: ScenarioConfig
    procedure_names: tuple[str, ...]
    per_rep: dict

    def series(self, procedure: str, metric_name: str) -> np.ndarray:
        return _metric_series(self.per_rep[procedure], metric_name)

    def mean(self, procedure: str, metric_name: str) -> float:
        return float(self.series(procedure, metric_name).mean())

    def sd(self, procedure: str, metric_name: str) -> float:
        vals = self.series(procedure, metric_name)
        return float(vals.std(ddof=1)) if vals.size > 1 else 0.0

    def rows(self) -> list[dict]:
        """Aggregate rows with the fixed CSV schema.

        Scenario 2 reports q / (s/5) in the rho column: that design has no
        free rho, and the overlap fraction equals the induced correlation
        between the overlapping pair of studies.
        """
        cfg = self.config
        rho = cfg.rho if cfg.scenario != 2 else cfg.q / (cfg.s // 5)
        out = []
        for name in self.procedure_names:
            for metric_name in METRIC_NAMES:
                out.append(
                    {
                        "procedure": name,
                        "scenario": cfg.scenario,
                        "rho": rho,
                        "n": cfg.n,
                        "r": cfg.r,
                        "metric_name": metric_name,
                        "mean": self.mean(name, metric_name),
                        "sd": self.sd(name, metric_name),
                        "B": cfg.B,
                    }
                )
        return out


def _normalize_procedures(procedures) -> list[tuple[str, object]]:
    out = []
    seen = set()
    for item in procedures:
        if isinstance(item, str):
            name, kappa = item, "auto"
        else:
            name, kappa = item
        name = str(name).lower()
        if name not in PROCEDURES:
            raise ValidationError(f"procedure must be one of {PROCEDURES}, got {name!r}")
        if name in seen:
            raise ValidationError(f"duplicate procedure {name!r}")
        seen.add(name)
        if kappa != "auto":
            kappa = float(kappa)
        out.append((name, kappa))
    if not out:
        raise ValidationError("need at least one procedure")
    return out


def _worker_count() -> int:
    raw = os.environ.get("PCFILTER_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ValidationError(f"PCFILTER_THREADS must be an integer, got {raw!r}") from exc
    return max(1, workers)


def run_experiment(cfg: ScenarioConfig, procedures, grid=DEFAULT_KAPPA_GRID) -> ExperimentResult:
    """B independent reps of (generate, select, score) for each procedure.

    procedures is a list of registry names or (name, kappa) pairs; kappa
    "auto" tunes per rep on that rep's data.  Reps use independent RNG
    streams and any rep failure aborts the whole experiment.  With
    PCFILTER_THREADS > 1 reps run on a thread pool; results are identical to
    the sequential order because each rep owns its stream.
    """
    procs = _normalize_procedures(procedures)
    spec = PCHSpec(n=cfg.n, r=cfg.r, alpha=cfg.alpha, metric=cfg.metric, combiner="bonferroni")

    def one_rep(rep: int) -> list[ErrorMetrics]:
        rng = rep_generator(cfg.seed, rep)
        pmatrix, truth = generate(cfg, rng)
        return [score(run_procedure(name, pmatrix, spec, kappa=kappa, grid=grid), truth)
                for name, kappa in procs]

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rep_scores = list(pool.map(one_rep, range(cfg.B)))
    else:
        rep_scores = [one_rep(rep) for rep in range(cfg.B)]

    per_rep = {
        name: tuple(rep_scores[rep][i] for rep in range(cfg.B))
        for i, (name, _) in enumerate(procs)
    }
    return ExperimentResult(
        config=cfg,
        procedure_names=tuple(name for name, _ in procs),
        per_rep=per_rep,
    )


def run_nr_grid(cfg: ScenarioConfig, procedures, pairs=NR_GRID, grid=DEFAULT_KAPPA_GRID):
    """Run the same config across the (n, r) preset; returns one result per pair."""
    out = []
    for n, r in pairs:
        out.append(run_experiment(replace(cfg, n=n, r=r), procedures, grid=grid))
    return out
