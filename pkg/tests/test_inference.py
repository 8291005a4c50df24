import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from mixedrank.design import build_design, dataset_from_columns
from mixedrank.errors import InferenceError
from mixedrank.formula import parse_formula
from mixedrank.inference import (EmmTable, estimated_marginal_means,
                                 friedman_nemenyi, glrt, tukey_hsd)
from mixedrank.lmm import REML, fit_lmm


def fit_two(simple_f, complex_f, data):
    simple = fit_lmm(build_design(parse_formula(simple_f), data))
    complex_ = fit_lmm(build_design(parse_formula(complex_f), data))
    return simple, complex_


def seedish_data(rows=90, rng_seed=0, slope=0.08):
    rng = np.random.default_rng(rng_seed)
    loss, algos, seeds = [], [], []
    for a in range(3):
        for s in range(rows // 3):
            mean = slope * s if a == 1 else 2.5
            loss.append(float(rng.normal(mean, 0.7)))
            algos.append(f"A-{a}")
            seeds.append(str(s))
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "seed": seeds})


# --- GLRT ---------------------------------------------------------------------

def test_glrt_appendix_numbers():
    """The printed seed-check run: l0=-708.25, l1=-582.03 give the statistic
    252.436 with an underflowing p-value."""
    data = seedish_data()
    simple, complex_ = fit_two(
        "loss ~ algorithm", "loss ~ algorithm + (0 + algorithm||seed)", data)
    object.__setattr__(simple, "loglik", -708.25)
    object.__setattr__(complex_, "loglik", -582.032)
    g = glrt(simple, complex_)
    assert g.statistic == pytest.approx(252.436, abs=1e-3)
    assert g.underflow and g.p_value == 0.0
    assert g.preferred == "complex"


def test_glrt_identical_likelihoods():
    data = seedish_data()
    simple, complex_ = fit_two(
        "loss ~ algorithm", "loss ~ algorithm + (0 + algorithm||seed)", data)
    object.__setattr__(complex_, "loglik", simple.loglik)
    g = glrt(simple, complex_)
    assert g.statistic == 0.0
    assert g.p_value == 1.0
    assert g.preferred == "simple"


def test_glrt_chi2_boundary_value():
    data = seedish_data()
    simple, complex_ = fit_two(
        "loss ~ 1", "loss ~ 1 + (1|seed)", data)
    object.__setattr__(complex_, "loglik", simple.loglik + 3.841 / 2)
    g = glrt(simple, complex_)
    assert g.df == 1
    assert g.p_value == pytest.approx(0.050, abs=1e-3)


def test_glrt_self_test():
    data = seedish_data()
    a = fit_lmm(build_design(parse_formula("loss ~ algorithm"), data))
    b = fit_lmm(build_design(parse_formula("loss ~ algorithm"), data))
    assert abs(2 * (a.loglik - b.loglik)) < 1e-8


def test_glrt_rejects_non_nested():
    data = dataset_from_columns(
        {"loss": np.arange(20.0).tolist(),
         "algorithm": [f"A{i % 2}" for i in range(20)],
         "benchmark": [f"B{i % 5}" for i in range(20)]})
    m1 = fit_lmm(build_design(parse_formula("loss ~ algorithm"), data))
    m2 = fit_lmm(build_design(
        parse_formula("loss ~ benchmark + (1|algorithm)"), data))
    with pytest.raises(InferenceError, match="not nested"):
        glrt(m1, m2)


def test_glrt_rejects_mismatched_data():
    d1 = seedish_data(rng_seed=1)
    d2 = seedish_data(rng_seed=2)
    m1 = fit_lmm(build_design(parse_formula("loss ~ algorithm"), d1))
    m2 = fit_lmm(build_design(
        parse_formula("loss ~ algorithm + (1|seed)"), d2))
    with pytest.raises(InferenceError, match="different data"):
        glrt(m1, m2)


def test_glrt_rejects_reml_with_differing_fixed_effects():
    data = seedish_data()
    m1 = fit_lmm(build_design(
        parse_formula("loss ~ 1 + (1|seed)"), data), method=REML)
    m2 = fit_lmm(build_design(
        parse_formula("loss ~ algorithm + (1|seed)"), data), method=REML)
    with pytest.raises(InferenceError, match="REML"):
        glrt(m1, m2)


def test_glrt_requires_more_parameters():
    data = seedish_data()
    m1 = fit_lmm(build_design(parse_formula("loss ~ algorithm"), data))
    with pytest.raises(InferenceError, match="more parameters"):
        glrt(m1, m1)


def test_glrt_boundary_warning():
    rng = np.random.default_rng(6)
    y = rng.normal(0.0, 1.0, 60)
    data = dataset_from_columns(
        {"loss": y.tolist(), "algorithm": [f"A{i % 2}" for i in range(60)],
         "benchmark": [f"B{i % 6}" for i in range(60)]})
    simple, complex_ = fit_two(
        "loss ~ algorithm", "loss ~ algorithm + (1|benchmark)", data)
    assert complex_.singular
    g = glrt(simple, complex_)
    assert g.boundary_warning


# --- estimated marginal means -----------------------------------------------------

def test_emm_balanced_ols_equals_group_means():
    data = dataset_from_columns(
        {"loss": [1.0, 3.0, 2.0, 4.0], "algorithm": ["A", "A", "B", "B"]})
    dm = build_design(parse_formula("loss ~ algorithm"), data)
    fit = fit_lmm(dm)
    emm = estimated_marginal_means(fit, dm, "algorithm")
    assert emm.means == pytest.approx([2.0, 3.0])
    assert emm.ses[0] == pytest.approx(emm.ses[1])
    assert emm.grid_size == 2


def test_emm_mixed_model_matches_group_averages():
    rng = np.random.default_rng(17)
    loss, algos, benches = [], [], []
    for b in range(2):
        for a in range(3):
            for _ in range(25):
                loss.append(float(rng.normal(1.0 + 0.5 * a + 0.3 * b, 0.4)))
                algos.append(f"A{a}")
                benches.append(f"B{b}")
    data = dataset_from_columns(
        {"loss": loss, "algorithm": algos, "benchmark": benches})
    dm = build_design(
        parse_formula("loss ~ algorithm + (1|benchmark)"), data)
    fit = fit_lmm(dm)
    emm = estimated_marginal_means(fit, dm, "algorithm")
    arr = np.asarray(loss).reshape(2, 3, 25)
    oracle = arr.mean(axis=(0, 2))  # per-algorithm mean across benchmarks
    assert emm.means == pytest.approx(oracle, abs=1e-6)


def test_emm_balanced_equal_ses():
    data = seedish_data()
    dm = build_design(parse_formula("loss ~ algorithm"), data)
    fit = fit_lmm(dm)
    emm = estimated_marginal_means(fit, dm, "algorithm")
    assert np.ptp(emm.ses) < 1e-12


def test_emm_focus_errors():
    data = seedish_data()
    dm = build_design(parse_formula("loss ~ algorithm"), data)
    fit = fit_lmm(dm)
    with pytest.raises(InferenceError, match="categorical fixed effect"):
        estimated_marginal_means(fit, dm, "seed")


def test_emm_grid_cap():
    data = seedish_data()
    dm = build_design(parse_formula("loss ~ algorithm"), data)
    fit = fit_lmm(dm)
    with pytest.raises(InferenceError, match="cap"):
        estimated_marginal_means(fit, dm, "algorithm", grid_cap=2)


# --- Tukey HSD ---------------------------------------------------------------------

def make_emm(means, ses, df=30.0, n=100):
    k = len(means)
    return EmmTable(
        focus="algorithm", levels=tuple(f"L{i}" for i in range(k)),
        means=np.asarray(means, dtype=float),
        ses=np.asarray(ses, dtype=float), df=float(df), grid_size=k,
        n_per_level=tuple([n] * k), contrast_rows=np.zeros((k, 1)))


class _ModelStub:
    n_obs = 1000
    n_fixed = 4


def test_tukey_zero_difference():
    emm = make_emm([1.0, 1.0, 2.0], [0.1, 0.1, 0.1])
    cmp_ = tukey_hsd(emm, _ModelStub())
    p01 = cmp_.pair("L0", "L1")
    assert p01.q_stat == 0.0
    assert p01.p_value == 1.0
    assert not p01.significant


def test_tukey_k2_normal_identity():
    # df effectively infinite: q_s = 2.772 sits at p = 0.05 for k = 2
    emm = make_emm([0.0, 1.0], [1 / 2.772, 1 / 2.772], df=1_000_000 - 2,
                   n=1_000_000)
    cmp_ = tukey_hsd(emm, _ModelStub())
    pair = cmp_.pair("L0", "L1")
    assert pair.q_stat == pytest.approx(2.772, rel=1e-12)
    assert pair.p_value == pytest.approx(0.050, abs=2e-3)


def test_tukey_symmetry_under_level_reversal():
    emm_a = make_emm([1.0, 1.4, 2.0], [0.2, 0.25, 0.3])
    emm_b = make_emm([2.0, 1.4, 1.0], [0.3, 0.25, 0.2])
    cmp_a = tukey_hsd(emm_a, _ModelStub())
    cmp_b = tukey_hsd(emm_b, _ModelStub())
    for pair in cmp_a.pairs:
        i = int(pair.level_i[1]); j = int(pair.level_j[1])
        other = cmp_b.pair(f"L{2 - i}", f"L{2 - j}")
        assert pair.p_value == pytest.approx(other.p_value, abs=1e-12)


def test_tukey_df_rule_and_override():
    emm = make_emm([1.0, 2.0], [0.1, 0.1], df=-1.0)
    with pytest.raises(InferenceError, match="not positive"):
        tukey_hsd(emm, _ModelStub())
    cmp_ = tukey_hsd(emm, _ModelStub(), df_mode="residual")
    assert cmp_.df == 996


def test_tukey_alpha_monotonicity():
    emm = make_emm([1.0, 1.25, 1.6, 2.4], [0.1, 0.12, 0.11, 0.1])
    sets = [tukey_hsd(emm, _ModelStub(), alpha=a).significant_pairs()
            for a in (0.10, 0.05, 0.01)]
    assert sets[2] <= sets[1] <= sets[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_tukey_p_in_unit_interval(k, seed):
    rng = np.random.default_rng(seed)
    emm = make_emm(rng.normal(0, 1, k).tolist(),
                   (0.05 + rng.random(k)).tolist())
    cmp_ = tukey_hsd(emm, _ModelStub())
    for pair in cmp_.pairs:
        assert 0.0 <= pair.p_value <= 1.0
        assert (pair.q_stat < pair.q_crit) == (pair.p_value > cmp_.alpha) \
            or math.isclose(pair.p_value, cmp_.alpha, abs_tol=1e-9)


# --- Friedman / Nemenyi ---------------------------------------------------------------

def blocks_data(values):
    """values[block][algo] -> Dataset with one row per (block, algo)."""
    loss, algos, blocks = [], [], []
    for b, row in enumerate(values):
        for a, v in enumerate(row):
            loss.append(float(v))
            algos.append(f"A{a}")
            blocks.append(f"B{b}")
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "benchmark": blocks})


def test_friedman_all_tied():
    data = blocks_data([[1.0, 1.0, 1.0]] * 6)
    res = friedman_nemenyi(data, "algorithm", "benchmark")
    assert res.statistic == pytest.approx(0.0)
    assert res.p_value == 1.0


def test_friedman_strict_winner():
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(30):
        base = rng.random()
        vals.append([base, base + 0.5 + rng.random(), base + 1.5 + rng.random()])
    res = friedman_nemenyi(blocks_data(vals), "algorithm", "benchmark")
    # A0 always rank 1; hand-computed statistic for fixed rank columns
    assert res.avg_ranks["A0"] == 1.0
    assert res.p_value < 0.01


def test_friedman_textbook_hand_computation():
    # k=3, N=4 with hand-assigned values giving known ranks
    vals = [[1, 2, 3], [1, 3, 2], [2, 1, 3], [1, 2, 3]]
    res = friedman_nemenyi(blocks_data(vals), "algorithm", "benchmark")
    ranks = {"A0": 1.25, "A1": 2.0, "A2": 2.75}
    assert res.avg_ranks == pytest.approx(ranks)
    n, k = 4, 3
    stat = 12 * n / (k * (k + 1)) * sum(
        (r - (k + 1) / 2) ** 2 for r in ranks.values())
    assert res.statistic == pytest.approx(stat)
    assert res.df == 2


def test_friedman_nemenyi_cd_formula():
    data = blocks_data([[1.0, 2.0, 3.0]] * 12)
    res = friedman_nemenyi(data, "algorithm", "benchmark")
    from mixedrank.distributions import studentized_range_quantile
    q = studentized_range_quantile(0.95, 3, math.inf)
    cd = q / math.sqrt(2) * math.sqrt(3 * 4 / (6 * 12))
    assert res.pairwise.pairs[0].cd == pytest.approx(cd, rel=1e-9)


def test_friedman_incomplete_design():
    data = dataset_from_columns(
        {"loss": [1.0, 2.0, 3.0], "algorithm": ["A", "B", "A"],
         "benchmark": ["x", "x", "y"]})
    with pytest.raises(InferenceError, match="incomplete"):
        friedman_nemenyi(data, "algorithm", "benchmark")


def test_friedman_aggregates_duplicates():
    # two observations per cell, means give strict ordering
    data = dataset_from_columns(
        {"loss": [1.0, 1.2, 2.0, 2.2, 1.1, 1.3, 2.1, 2.3],
         "algorithm": ["A", "A", "B", "B"] * 2,
         "benchmark": ["x"] * 4 + ["y"] * 4})
    res = friedman_nemenyi(data, "algorithm", "benchmark")
    assert res.avg_ranks == {"A": 1.0, "B": 2.0}
