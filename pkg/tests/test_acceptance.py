"""End-to-end acceptance checks; every test prints one pass/fail line.

Each criterion exercises a user-visible guarantee at its stated tolerance:
procedure equivalences, dense-grid threshold oracles, scenario-level error
control and power targets, diagnostic thresholds, high-precision combiner
oracles, and byte-level determinism of the command line.
"""

import json
import math
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import mpmath as mp
import numpy as np

from pcfilter import cli
from pcfilter import io as pio
from pcfilter.calibrate import phi, phi_inverse
from pcfilter.combine import (
    CAUCHY_EPS,
    P_FLOOR,
    FilterPair,
    pc_cauchy,
    pc_fisher,
    pc_simes,
)
from pcfilter.diagnose import diagnose, kappa_star_curve, verify_prop1
from pcfilter.enrich import EnrichmentTable, fisher_exact_p
from pcfilter.select import adafilter, efilter_adjusted, efilter_threshold
from pcfilter.simulate import ScenarioConfig, rep_generator, run_experiment, run_nr_grid

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_STUDIES = [str(FIXTURES / f"study{i}.tsv") for i in range(1, 6)]
RHO_GRID = (-0.3, 0.0, 0.3, 0.6, 0.9)


def report(num, ok, detail):
    print(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {detail}", flush=True)


def random_pair(rng) -> FilterPair:
    """Random valid instance with ties, tiny values, and F = S collisions."""
    m = int(rng.integers(1, 201))
    S = rng.uniform(0.0, 1.0, m)
    tiny = rng.random(m) < 0.2
    S[tiny] = 10.0 ** -rng.uniform(0.0, 10.0, int(tiny.sum()))
    if rng.random() < 0.3:
        S = np.maximum(np.round(S, 2), 0.01)
    F = S * rng.uniform(0.0, 1.0, m)
    equal = rng.random(m) < 0.2
    F[equal] = S[equal]
    F = np.minimum(F, S)
    return FilterPair(S=np.clip(S, 1e-12, 1.0), F=np.clip(F, 0.0, 1.0))


def test_criterion_01_threshold_vs_adjusted_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    checks = 0
    worst = ""
    ok = True
    for _ in range(1000):
        fp = random_pair(rng)
        kappa = float(rng.uniform(0.05, 0.95))
        e_s = phi(np.maximum(fp.S, P_FLOOR), kappa)
        for metric in ("pfer", "fdr"):
            adjusted = efilter_adjusted(fp, kappa, metric)
            for alpha in (0.01, 0.05, 0.1, 0.2, 1.0):
                gamma = efilter_threshold(fp, alpha, kappa, metric)
                via_threshold = np.flatnonzero(1.0 / e_s < gamma)
                via_adjusted = np.flatnonzero(adjusted > 1.0 / alpha)
                checks += 1
                if not np.array_equal(via_threshold, via_adjusted):
                    ok = False
                    worst = f"m={fp.m} metric={metric} alpha={alpha}"
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 30.0
    report(1, ok, f"{checks} rejection-set comparisons identical, {elapsed:.1f}s (< 30s)"
           + (f"; first divergence {worst}" if worst else ""))
    assert ok


def dense_sup(b_filter, b_select, alpha, ratio, step=1e-6):
    """Brute-force sup of gamma * N_F(gamma) <= alpha * denom(gamma) on a grid."""
    gammas = np.arange(1, int(round(alpha / step)) + 1, dtype=float) * step
    gammas = gammas[gammas <= alpha]
    if gammas.size == 0 or gammas[-1] != alpha:
        gammas = np.append(gammas, alpha)
    n_f = np.searchsorted(np.sort(b_filter), gammas, side="left")
    if ratio:
        denom = np.maximum(np.searchsorted(np.sort(b_select), gammas, side="left"), 1)
    else:
        denom = np.ones_like(n_f)
    feasible = gammas * n_f <= alpha * denom
    return float(gammas[feasible].max()) if feasible.any() else 0.0


def test_criterion_02_threshold_dense_grid_oracle():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_gap = 0.0
    ok = True
    for _ in range(200):
        fp = random_pair(rng)
        alpha = float(rng.choice([0.01, 0.05, 0.1, 0.2, 1.0]))
        kappa = float(rng.uniform(0.05, 0.95))
        metric = str(rng.choice(["pfer", "fdr"]))
        ratio = metric == "fdr"

        exact = efilter_threshold(fp, alpha, kappa, metric)
        grid = dense_sup(
            1.0 / phi(np.maximum(fp.F, P_FLOOR), kappa),
            1.0 / phi(np.maximum(fp.S, P_FLOOR), kappa),
            alpha, ratio,
        )
        gap = exact - grid
        worst_gap = max(worst_gap, abs(gap))
        if not (-1e-9 <= gap <= 1.000001e-6):
            ok = False

        exact0 = adafilter(fp, alpha, metric).gamma_e
        grid0 = dense_sup(fp.F, fp.S, alpha, ratio)
        gap0 = exact0 - grid0
        worst_gap = max(worst_gap, abs(gap0))
        if not (-1e-9 <= gap0 <= 1.000001e-6):
            ok = False
    elapsed = time.perf_counter() - start
    report(2, ok, f"200 instances, both procedures: worst |gamma - dense sup| = "
           f"{worst_gap:.2e} (<= 1e-6), {elapsed:.1f}s")
    assert ok


def nr_average(results, procedure, metric):
    means = [res.mean(procedure, metric) for res in results]
    ses = [res.sd(procedure, metric) / math.sqrt(res.config.B) for res in results]
    avg_se = math.sqrt(sum(se * se for se in ses)) / len(ses)
    return float(np.mean(means)), avg_se


def test_criterion_03_scenario1_table_targets():
    start = time.perf_counter()
    base = ScenarioConfig(scenario=1, m=10_000, B=100, alpha=0.2, metric="fdr", seed=31)
    low = run_nr_grid(replace(base, rho=0.2), ("e-filter-b", "adafilter"))
    high = run_nr_grid(replace(base, rho=0.8), ("adafilter",))
    fdr, _ = nr_average(low, "e-filter-b", "fdr")
    recall, _ = nr_average(low, "e-filter-b", "recall")
    ada_fdr, _ = nr_average(high, "adafilter", "fdr")
    elapsed = time.perf_counter() - start
    ok = abs(fdr - 0.006) <= 0.02 and abs(recall - 0.896) <= 0.05 and ada_fdr >= 0.5
    ok = ok and elapsed < 600.0
    report(3, ok, f"e-filter-b rho=0.2: FDR={fdr:.4f} (0.006 +/- 0.02), "
           f"recall={recall:.3f} (0.896 +/- 0.05); adafilter rho=0.8 FDR={ada_fdr:.3f} "
           f"(>= 0.5); {elapsed:.0f}s (< 600s)")
    assert ok


def test_criterion_04_scenario3_error_control():
    start = time.perf_counter()
    rows = {}
    for rho in (-0.2, -0.4, -0.6, -0.8):
        procs = ("e-filter-b", "adafilter") if rho == -0.8 else ("e-filter-b",)
        cfg = ScenarioConfig(scenario=3, m=10_000, rho=rho, B=100, alpha=0.2,
                             metric="fdr", seed=41)
        rows[rho] = run_nr_grid(cfg, procs)
    ok = True
    detail = []
    for rho in (-0.2, -0.4, -0.6, -0.8):
        fdr, se = nr_average(rows[rho], "e-filter-b", "fdr")
        detail.append(f"rho={rho}: {fdr:.3f}")
        if fdr > 0.05 + 3.0 * se:
            ok = False
    ada_fdr, ada_se = nr_average(rows[-0.8], "adafilter", "fdr")
    if ada_fdr < 0.15 - 3.0 * ada_se:
        ok = False
    elapsed = time.perf_counter() - start
    report(4, ok, f"e-filter-b FDR <= 0.05 at every rho ({', '.join(detail)}); "
           f"adafilter rho=-0.8 FDR={ada_fdr:.3f} (>= 0.15); {elapsed:.0f}s")
    assert ok


def test_criterion_05_scenario2_overlap_inflation():
    start = time.perf_counter()
    ok = True
    ada_vals, e_vals = [], []
    for q in (0, 250, 500, 1000):
        cfg = ScenarioConfig(scenario=2, m=10_000, q=q, B=100, alpha=0.2,
                             metric="fdr", seed=51)
        res = run_experiment(cfg, ("adafilter", "e-filter-b", "e-filter-c"))
        ada = res.mean("adafilter", "fdr")
        ada_vals.append(f"q={q}: {ada:.3f}")
        if q >= 250 and ada <= 0.2:
            ok = False
        for proc in ("e-filter-b", "e-filter-c"):
            mean = res.mean(proc, "fdr")
            se = res.sd(proc, "fdr") / math.sqrt(cfg.B)
            e_vals.append(f"{proc} q={q}: {mean:.3f}")
            if mean > 0.2 + 3.0 * se:
                ok = False
    elapsed = time.perf_counter() - start
    report(5, ok, f"adafilter FDR {', '.join(ada_vals)} (> 0.2 for q >= 250); "
           f"e-filter variants all <= 0.2 + 3 SE; {elapsed:.0f}s")
    assert ok


def test_criterion_06_global_null_expected_v():
    # The PFER guarantee holds for any fixed kappa at or above the Lehmann
    # threshold kappa*.  Tuning kappa on the same data voids it: under the
    # global null the tuner picks kappa in [0.01, 0.2], below kappa* at high
    # rho, and rejection maximization drives E(V) to ~5.9 at rho = 0.8.  So
    # this property is checked at fixed kappa = 0.9, inside [kappa*, 1) for
    # every rho tested here (the n = r = 4 global-null diagnostic puts
    # kappa* at 0.53 even at rho = 0.9).
    start = time.perf_counter()
    ok = True
    detail = []
    for rho in (0.2, 0.4, 0.6, 0.8):
        cfg = ScenarioConfig(scenario=1, m=10_000, n=4, r=4, rho=rho,
                             pi00=1.0, pi1=0.0, B=500, alpha=1.0,
                             metric="pfer", seed=61)
        res = run_experiment(cfg, (("e-filter", 0.9),))
        name = res.procedure_names[0]
        ev = res.mean(name, "pfer")
        se = res.sd(name, "pfer") / math.sqrt(cfg.B)
        detail.append(f"rho={rho}: E(V)={ev:.3f}+/-{se:.3f}")
        if ev > 1.0 + 3.0 * se:
            ok = False
    elapsed = time.perf_counter() - start
    report(6, ok, f"global null, alpha=1 PFER: {', '.join(detail)} (<= 1 + 3 SE); "
           f"{elapsed:.0f}s")
    assert ok


def test_criterion_07_epch_fdr_all_scenarios():
    start = time.perf_counter()
    ok = True
    detail = []
    for scenario in (1, 2, 3, 4, 5):
        cfg = ScenarioConfig(scenario=scenario, B=100, seed=71)
        res = run_experiment(cfg, ("e-pch",))
        fdr = res.mean("e-pch", "fdr")
        se = res.sd("e-pch", "fdr") / math.sqrt(cfg.B)
        detail.append(f"S{scenario}: {fdr:.3f}")
        if fdr > cfg.alpha + 3.0 * se:
            ok = False
    elapsed = time.perf_counter() - start
    report(7, ok, f"e-pch FDR <= alpha + 3 SE on all scenarios ({', '.join(detail)}, "
           f"alpha=0.2); {elapsed:.0f}s")
    assert ok


def test_criterion_08_kappa_star_diagnostics():
    start = time.perf_counter()
    mc = 400_000

    one_false = kappa_star_curve((0.0, 0.0, 0.0, 3.0), RHO_GRID, mc_samples=mc, seed=81)
    clause1 = all(diag.kappa_star <= 0.01 for diag in one_false)

    global_null = diagnose((0.0,) * 4, 0.9, mc_samples=mc, rng=rep_generator(82, 0))
    clause2 = global_null.kappa_star >= 0.85

    bottom_left = kappa_star_curve((0.0, 3.0, 3.0, 3.0), RHO_GRID, mc_samples=mc, seed=83)
    kappa_hat = max(diag.kappa_star for diag in bottom_left)
    clause3 = True
    for idx, diag in enumerate(bottom_left):
        checks = verify_prop1(diag, min(kappa_hat + 0.01, 0.999), mc_samples=mc,
                              rng=rep_generator(84, idx))
        if not all(c.passed for c in checks):
            clause3 = False
    elapsed = time.perf_counter() - start

    ok = clause1 and clause2 and clause3
    report(8, ok,
           f"one-false kappa* max={max(d.kappa_star for d in one_false):.3f} (= 0 +/- 0.01: "
           f"{clause1}); global-null rho=0.9 kappa*={global_null.kappa_star:.3f} "
           f"(>= 0.85: {clause2}); three-false MC check at kappa={kappa_hat + 0.01:.3f}: "
           f"{clause3}; {elapsed:.0f}s")
    assert clause1
    assert clause3
    # Known shortfall: with the min-filter recipe the global-null threshold at
    # rho = 0.9 sits near 0.53 and only approaches 0.85 as rho -> 1.
    assert clause2


def simes_fraction(tail, r, n):
    k = n - r + 1
    best = min(Fraction(x) * k / (i + 1) for i, x in enumerate(tail))
    return min(best, Fraction(1))


def test_criterion_09_combiner_and_fisher_oracles():
    start = time.perf_counter()
    mp.mp.dps = 30
    rng = np.random.default_rng(909)
    n_cols = 100_000
    worst = {"fisher": 0.0, "cauchy": 0.0, "simes": 0.0}
    for _ in range(n_cols):
        n = int(rng.integers(2, 9))
        r = int(rng.integers(1, n + 1))
        col = rng.uniform(0.0, 1.0, n)
        if rng.random() < 0.3:
            col[rng.integers(0, n)] = 10.0 ** -rng.uniform(1.0, 12.0)
        tail = np.sort(col)[r - 1:]

        ours = pc_fisher(col, r)
        stat = -2 * sum(mp.log(mp.mpf(float(x))) for x in tail)
        oracle = mp.gammainc(len(tail), stat / 2, mp.inf, regularized=True)
        worst["fisher"] = max(worst["fisher"], abs(ours - float(oracle)) / float(oracle))

        ours = pc_cauchy(col, r)
        terms = []
        for x in tail:
            x = mp.mpf(float(min(max(x, CAUCHY_EPS), 1.0 - 1e-15)))
            terms.append(mp.cos(mp.pi * x) / mp.sin(mp.pi * x))
        t = sum(terms) / len(terms)
        oracle = mp.atan(1 / t) / mp.pi if t > 0 else mp.mpf("0.5") - mp.atan(t) / mp.pi
        worst["cauchy"] = max(worst["cauchy"], abs(ours - float(oracle)) / float(oracle))

        ours = pc_simes(col, r)
        oracle = simes_fraction(tail, r, n)
        worst["simes"] = max(worst["simes"], abs(Fraction(ours) - oracle) / oracle)

    combiners_ok = all(v <= 1e-10 for v in worst.values())

    fisher_worst = 0.0
    tables = 0
    for n1 in range(1, 61):
        comb_n1 = [math.comb(n1, j) for j in range(n1 + 1)]
        for n2 in range(0, n1 + 1):
            den = comb_n1[n2]
            for big_k in range(0, n1 + 1):
                lo = max(0, n2 + big_k - n1)
                hi = min(n2, big_k)
                weights = [
                    math.comb(big_k, i) * math.comb(n1 - big_k, n2 - i)
                    for i in range(lo, hi + 1)
                ]
                suffix = 0
                exact_by_k = {}
                for i in range(hi, lo - 1, -1):
                    suffix += weights[i - lo]
                    exact_by_k[i] = suffix
                for k in range(lo, hi + 1):
                    ours = fisher_exact_p(EnrichmentTable(N1=n1, N2=n2, K=big_k, k=k))
                    exact = exact_by_k[k] / den
                    rel = abs(ours - exact) / exact
                    fisher_worst = max(fisher_worst, rel)
                    tables += 1
    fisher_ok = fisher_worst <= 1e-10
    elapsed = time.perf_counter() - start
    ok = combiners_ok and fisher_ok
    report(9, ok, f"{n_cols} columns: worst rel fisher={worst['fisher']:.1e} "
           f"cauchy={worst['cauchy']:.1e} simes={float(worst['simes']):.1e} (<= 1e-10); "
           f"fisher-exact on {tables} tables (N1 <= 60) worst rel={fisher_worst:.1e}; "
           f"{elapsed:.0f}s")
    assert ok


def test_criterion_10_byte_identical_reruns(tmp_path):
    start = time.perf_counter()
    config = tmp_path / "cfg.toml"
    config.write_text(
        "scenario = 1\nm = 2000\nn = 4\nr = 2\nrho = [0.2, 0.8]\nB = 5\n"
        "alpha = 0.2\nprocedures = [\"e-filter-b\", \"adafilter\", \"e-pch\"]\nseed = 10\n"
    )
    compared = 0
    ok = True
    pairs = []
    for name in ("sim_a", "sim_b"):
        out = tmp_path / name
        assert cli.main(["simulate", "--config", str(config), "--out", str(out)]) == 0
        pairs.append(out)
    for fname in ("metrics.csv", "metrics.png", "manifest.json"):
        compared += 1
        if (pairs[0] / fname).read_bytes() != (pairs[1] / fname).read_bytes():
            ok = False
    pairs = []
    for name in ("an_a", "an_b"):
        out = tmp_path / name
        code = cli.main(
            ["analyze", *FIXTURE_STUDIES, "--r", "2", "--alpha", "0.01",
             "--procedure", "e-filter-b", "--seed", "5", "--out", str(out)]
        )
        assert code == 0
        pairs.append(out)
    for fname in ("report.csv", "report.json", "analysis.png", "manifest.json"):
        compared += 1
        if (pairs[0] / fname).read_bytes() != (pairs[1] / fname).read_bytes():
            ok = False
    manifest = json.loads((pairs[0] / "manifest.json").read_text())
    ok = ok and manifest["seed"] == 5
    report_obj = pio.read_report(pairs[0] / "report.csv")
    ok = ok and report_obj.n_rejected > 0
    elapsed = time.perf_counter() - start
    report(10, ok, f"simulate + analyze reruns: {compared} files byte-identical; "
           f"{elapsed:.0f}s")
    assert ok
