"""Combiner correctness against closed forms and high-precision oracles."""

from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest

from pcfilter import (
    BasePValueMatrix,
    FilterPair,
    PCHSpec,
    ValidationError,
    build_filter_pair,
    filter_stat,
    order_stats,
    pc_bonferroni,
    pc_cauchy,
    pc_fisher,
    pc_simes,
    selection_pvalues,
)

mp.mp.dps = 50


def mp_fisher(col, r: int) -> float:
    """Fisher PC p-value evaluated in 50-digit arithmetic."""
    tail = sorted(col)[r - 1 :]
    stat = -2 * mp.fsum(mp.log(mp.mpf(p)) for p in tail)
    k = len(tail)
    return float(mp.gammainc(k, stat / 2, mp.inf, regularized=True))


def mp_cauchy(col, r: int) -> float:
    """Cauchy-combination PC p-value in 50-digit arithmetic (with the same
    endpoint clamps as the implementation)."""
    tail = sorted(col)[r - 1 :]
    eps = mp.mpf("1e-15")
    stat = mp.fsum(
        mp.tan((mp.mpf("0.5") - min(max(mp.mpf(p), eps), 1 - eps)) * mp.pi)
        for p in tail
    ) / len(tail)
    return float(mp.mpf(1) / 2 - mp.atan(stat) / mp.pi)


def mp_simes(col, r: int) -> float:
    tail = sorted(col)[r - 1 :]
    k = len(tail)
    best = min(mp.mpf(k) * mp.mpf(p) / (i + 1) for i, p in enumerate(tail))
    return float(min(best, mp.mpf(1)))


def test_order_stats_examples() -> None:
    assert list(order_stats([0.5, 0.1, 0.3])) == [0.1, 0.3, 0.5]
    assert list(order_stats([0.2, 0.2])) == [0.2, 0.2]


def test_order_stats_matches_python_sorted() -> None:
    rng = np.random.default_rng(17)
    for _ in range(50):
        col = rng.uniform(1e-9, 1.0, size=rng.integers(1, 12))
        assert list(order_stats(col)) == sorted(col)


def test_order_stats_domain() -> None:
    with pytest.raises(ValidationError):
        order_stats([0.0, 0.5])
    with pytest.raises(ValidationError):
        order_stats([])


def test_pc_bonferroni_examples() -> None:
    assert pc_bonferroni([0.01, 0.03], 2) == pytest.approx(0.03)
    assert pc_bonferroni([0.02, 0.05, 0.10], 2) == pytest.approx(0.10)
    assert pc_bonferroni([0.9, 0.9, 0.9], 1) == 1.0


def test_pc_bonferroni_r_equal_n_is_max() -> None:
    rng = np.random.default_rng(3)
    for _ in range(25):
        col = rng.uniform(1e-6, 1.0, size=rng.integers(2, 9))
        assert pc_bonferroni(col, col.size) == col.max()


def test_pc_simes_examples() -> None:
    assert pc_simes([0.01, 0.02, 0.03], 2) == pytest.approx(0.03)
    assert pc_simes([0.04, 0.04], 2) == pytest.approx(0.04)


def test_pc_fisher_examples() -> None:
    # n = r: a chi-square_2 tail at -2 log p is exactly p
    assert pc_fisher([0.05], 1) == pytest.approx(0.05, rel=1e-12)
    assert pc_fisher([1.0, 1.0], 1) == 1.0
    assert pc_fisher([0.5, 0.5], 1) == pytest.approx(0.5966, abs=2e-4)


def test_pc_cauchy_examples() -> None:
    # equal entries at r=1: quantile round-trip returns p itself
    assert pc_cauchy([0.2, 0.2, 0.2], 1) == pytest.approx(0.2, rel=1e-12)
    assert pc_cauchy([0.5, 0.5], 1) == pytest.approx(0.5, rel=1e-12)


def test_r_out_of_range_raises() -> None:
    for fn in (pc_bonferroni, pc_simes, pc_fisher, pc_cauchy):
        with pytest.raises(ValidationError):
            fn([0.1, 0.2], 0)
        with pytest.raises(ValidationError):
            fn([0.1, 0.2], 3)


def test_combiners_match_high_precision_oracles() -> None:
    rng = np.random.default_rng(41)
    for _ in range(400):
        n = int(rng.integers(2, 9))
        r = int(rng.integers(1, n + 1))
        col = 10.0 ** rng.uniform(-12, 0, size=n)
        assert pc_fisher(col, r) == pytest.approx(mp_fisher(col, r), rel=1e-10)
        assert pc_cauchy(col, r) == pytest.approx(mp_cauchy(col, r), rel=1e-10)
        assert pc_simes(col, r) == pytest.approx(mp_simes(col, r), rel=1e-10)


def test_selection_monotone_in_base_pvalues() -> None:
    """Raising any single base p-value never lowers S."""
    rng = np.random.default_rng(23)
    for combiner in ("bonferroni", "simes", "fisher", "cauchy"):
        for _ in range(60):
            n = int(rng.integers(2, 7))
            r = int(rng.integers(1, n + 1))
            col = rng.uniform(1e-6, 0.9, size=n)
            base = selection_pvalues(col[:, None], r, combiner)[0]
            i = int(rng.integers(0, n))
            bumped = col.copy()
            bumped[i] = min(1.0, bumped[i] + rng.uniform(0.0, 0.1))
            after = selection_pvalues(bumped[:, None], r, combiner)[0]
            assert after >= base - 1e-15


def test_least_favorable_null_validity() -> None:
    """With r - 1 base p-values at the clamp floor and the rest iid uniform,
    the ECDF of S at gamma stays below gamma + 3 MC standard errors."""
    rng = np.random.default_rng(77)
    reps = 20000
    n, r = 4, 2
    values = np.vstack(
        [
            np.full((r - 1, reps), 1e-300),
            rng.uniform(size=(n - r + 1, reps)),
        ]
    )
    for combiner in ("bonferroni", "simes", "fisher", "cauchy"):
        s = selection_pvalues(values, r, combiner)
        for gamma in (0.01, 0.05, 0.1):
            hit = float(np.mean(s <= gamma))
            se = np.sqrt(gamma * (1.0 - gamma) / reps)
            assert hit <= gamma + 3.0 * se, (combiner, gamma, hit)


def test_filter_stat_examples() -> None:
    assert filter_stat([0.01, 0.03], 2) == pytest.approx(0.01)
    assert filter_stat([0.02, 0.05, 0.10], 2) == pytest.approx(0.04)
    assert filter_stat([0.01, 0.03], 2, "cauchy") == pytest.approx(0.01)


def test_filter_stat_errors() -> None:
    with pytest.raises(ValidationError):
        filter_stat([0.1, 0.2], 1)
    with pytest.raises(ValidationError):
        filter_stat([0.1, 0.2], 2, "fisher")
    with pytest.raises(ValidationError):
        filter_stat([0.1, 0.2], 2, "bonferroni", literal_tan=True)


def test_filter_stat_literal_tan_variant() -> None:
    got = filter_stat([0.25, 0.9], 2, "cauchy", literal_tan=True)
    assert got == pytest.approx(np.tan(0.25 * np.pi), rel=1e-12)
    # unbounded below for p close to 1
    assert filter_stat([0.999, 0.9995], 2, "cauchy", literal_tan=True) < 0.0


def test_build_filter_pair_example() -> None:
    pm = BasePValueMatrix.from_values(np.array([[0.01], [0.03]]))
    spec = PCHSpec(n=2, r=2, alpha=0.05, combiner="bonferroni")
    fp = build_filter_pair(pm, spec)
    assert fp.S[0] == pytest.approx(0.03)
    assert fp.F[0] == pytest.approx(0.01)


def test_build_filter_pair_deterministic() -> None:
    rng = np.random.default_rng(8)
    values = rng.uniform(1e-6, 1.0, size=(4, 50))
    pm = BasePValueMatrix.from_values(np.hstack([values, values]))
    spec = PCHSpec(n=4, r=2, alpha=0.05, combiner="cauchy")
    fp = build_filter_pair(pm, spec)
    assert np.array_equal(fp.S[:50], fp.S[50:])
    assert np.array_equal(fp.F[:50], fp.F[50:])


def test_filter_never_exceeds_selection_on_random_columns() -> None:
    rng = np.random.default_rng(12)
    for combiner in ("bonferroni", "cauchy"):
        for n, r in ((2, 2), (5, 3), (8, 2), (8, 8)):
            values = 10.0 ** rng.uniform(-14, 0, size=(n, 100_000))
            pm = BasePValueMatrix.from_values(values)
            spec = PCHSpec(n=n, r=r, alpha=0.05, combiner=combiner)
            fp = build_filter_pair(pm, spec)
            assert np.all(fp.F <= fp.S)


def test_filter_pair_rejects_f_above_s() -> None:
    with pytest.raises(ValidationError):
        FilterPair(S=np.array([0.1]), F=np.array([0.2]))


def test_matrix_validation() -> None:
    with pytest.raises(ValidationError):
        BasePValueMatrix.from_values(np.array([[0.5, 0.2]]))  # n = 1
    with pytest.raises(ValidationError):
        BasePValueMatrix.from_values(np.array([[0.5], [0.0]]))  # zero entry
    with pytest.raises(ValidationError):
        BasePValueMatrix.from_values(np.array([[0.5], [1.2]]))  # above 1
    with pytest.raises(ValidationError):
        BasePValueMatrix(
            values=np.full((2, 2), 0.5),
            study_ids=("a", "b"),
            hypothesis_ids=("x", "x"),
        )


def test_pchspec_validation() -> None:
    with pytest.raises(ValidationError):
        PCHSpec(n=4, r=0, alpha=0.05)
    with pytest.raises(ValidationError):
        PCHSpec(n=4, r=5, alpha=0.05)
    with pytest.raises(ValidationError):
        PCHSpec(n=4, r=2, alpha=0.0)
    with pytest.raises(ValidationError):
        PCHSpec(n=4, r=2, alpha=0.05, metric="fcr")
    with pytest.raises(ValidationError):
        PCHSpec(n=4, r=2, alpha=0.05, combiner="stouffer")
    spec = PCHSpec(n=4, r=1, alpha=0.05)
    with pytest.raises(ValidationError):
        spec.require_filter()
