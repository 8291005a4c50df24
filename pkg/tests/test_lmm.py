import math

import numpy as np
import pytest

from mixedrank.design import build_design, dataset_from_columns
from mixedrank.errors import FitError
from mixedrank.formula import parse_formula
from mixedrank.lmm import (REML, FittedLmm, ThetaStructure, fit_lmm,
                           profiled_deviance)


def ols_example():
    data = dataset_from_columns(
        {"loss": [1.0, 3.0, 2.0, 4.0], "algorithm": ["A", "A", "B", "B"]})
    return build_design(parse_formula("loss ~ algorithm"), data)


def one_way_data(g: int, m: int, tau2: float, sigma2: float, seed: int):
    rng = np.random.default_rng(seed)
    groups = np.repeat([f"g{i}" for i in range(g)], m)
    b = rng.normal(0.0, math.sqrt(tau2), g)
    y = 3.0 + np.repeat(b, m) + rng.normal(0.0, math.sqrt(sigma2), g * m)
    data = dataset_from_columns(
        {"loss": y.tolist(), "group": groups.tolist()}, numeric=("loss",))
    return build_design(parse_formula("loss ~ 1 + (1|group)"), data)


def grid_theta_oracle(dm, lo=0.0, hi=8.0):
    """Independent 1-D optimum of the profiled deviance: coarse grid plus
    ternary refinement down to 1e-6 in theta."""
    grid = np.linspace(lo, hi, 1601)
    devs = [profiled_deviance(np.array([t]), dm) for t in grid]
    i = int(np.argmin(devs))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    while b - a > 1e-6:
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        if profiled_deviance(np.array([m1]), dm) \
                < profiled_deviance(np.array([m2]), dm):
            b = m2
        else:
            a = m1
    t = 0.5 * (a + b)
    return t, profiled_deviance(np.array([t]), dm)


def test_ols_closed_form():
    fit = fit_lmm(ols_example())
    assert np.allclose(fit.beta, [2.0, 1.0])
    assert fit.sigma2 == pytest.approx(1.0, abs=1e-12)  # SSE/n = 4/4
    assert fit.n_params == 3
    assert fit.converged and not fit.singular


def test_deviance_at_zero_matches_ols():
    data = dataset_from_columns(
        {"loss": [1.0, 3.0, 2.0, 4.0], "algorithm": ["A", "A", "B", "B"],
         "benchmark": ["u", "u", "v", "v"]})
    dm = build_design(
        parse_formula("loss ~ algorithm + (1|benchmark)"), data)
    n, sse = 4, 4.0  # OLS residuals are +-1
    expected = n * (1.0 + math.log(2 * math.pi * sse / n))
    assert profiled_deviance(np.zeros(1), dm) == pytest.approx(expected,
                                                               rel=1e-12)
    fit = fit_lmm(dm)
    assert profiled_deviance(np.zeros(1), dm) >= fit.deviance - 1e-9


def test_deviance_identity_at_optimum():
    dm = one_way_data(6, 8, 0.7, 0.3, seed=1)
    fit = fit_lmm(dm)
    assert profiled_deviance(fit.theta, dm) == pytest.approx(-2 * fit.loglik,
                                                             abs=1e-9)


@pytest.mark.parametrize("g,m,tau2,sigma2,seed", [
    (5, 5, 0.5, 0.4, 11),
    (10, 20, 1.2, 0.6, 12),
    (8, 10, 0.05, 1.0, 13),
])
def test_one_way_matches_grid_oracle(g, m, tau2, sigma2, seed):
    dm = one_way_data(g, m, tau2, sigma2, seed)
    fit = fit_lmm(dm)
    t_star, d_star = grid_theta_oracle(dm)
    assert fit.deviance == pytest.approx(d_star, rel=1e-4)
    tau2_fit = fit.ranef_variances[0].covariance[0, 0]
    tau2_oracle = fit.sigma2 * t_star ** 2
    assert tau2_fit == pytest.approx(tau2_oracle, rel=1e-3, abs=1e-6)


def test_zero_group_variance_is_singular():
    # true group variance is zero; with this draw the between-group spread
    # sits below the boundary, so the fit must land on theta = 0
    rng = np.random.default_rng(6)
    y = rng.normal(0.0, 1.0, 60)
    groups = [f"g{i % 6}" for i in range(60)]
    data = dataset_from_columns(
        {"loss": y.tolist(), "group": groups}, numeric=("loss",))
    mixed = fit_lmm(build_design(parse_formula("loss ~ 1 + (1|group)"), data))
    ols = fit_lmm(build_design(parse_formula("loss ~ 1"), data))
    assert mixed.singular
    assert mixed.loglik == pytest.approx(ols.loglik, abs=1e-6)


def test_heteroscedastic_closed_form_oracle():
    """With one observation per (algorithm, seed) cell the per-algorithm
    random-effect model has an analytic ML: per-algorithm variances."""
    rng = np.random.default_rng(21)
    k, s = 3, 40
    sds = [0.5, 2.0, 1.0]
    loss, algos, seeds = [], [], []
    for a in range(k):
        for i in range(s):
            loss.append(float(rng.normal(1.0 + a, sds[a])))
            algos.append(f"A-{a}")
            seeds.append(str(i))
    data = dataset_from_columns(
        {"loss": loss, "algorithm": algos, "seed": seeds})
    dm = build_design(
        parse_formula("loss ~ algorithm + (0 + algorithm||seed)"), data)
    fit = fit_lmm(dm)
    arr = np.asarray(loss).reshape(k, s)
    l1 = sum(-s / 2 * (math.log(2 * math.pi * row.var()) + 1) for row in arr)
    assert fit.loglik == pytest.approx(l1, abs=1e-4)


def test_nested_loglik_monotonicity():
    rng = np.random.default_rng(99)
    for trial in range(6):
        n = 60
        algo = [f"A{rng.integers(3)}" for _ in range(n)]
        bench = [f"B{rng.integers(4)}" for _ in range(n)]
        y = rng.normal(0, 1, n) + [0.5 * int(a[1]) for a in algo]
        data = dataset_from_columns(
            {"loss": y.tolist(), "algorithm": algo, "benchmark": bench})
        simple = fit_lmm(build_design(parse_formula("loss ~ algorithm"), data))
        complex_ = fit_lmm(build_design(
            parse_formula("loss ~ algorithm + (1|benchmark)"), data))
        assert complex_.loglik >= simple.loglik - 1e-6


def test_scale_equivariance():
    rng = np.random.default_rng(3)
    groups = [f"g{i % 5}" for i in range(30)]
    y = rng.normal(2.0, 1.0, 30) + np.array([0.4 * (i % 5) for i in range(30)])
    ast = parse_formula("loss ~ 1 + (1|group)")
    fit1 = fit_lmm(build_design(ast, dataset_from_columns(
        {"loss": y.tolist(), "group": groups}, numeric=("loss",))))
    fit2 = fit_lmm(build_design(ast, dataset_from_columns(
        {"loss": (7.5 * y).tolist(), "group": groups}, numeric=("loss",))))
    assert fit2.beta == pytest.approx(fit1.beta * 7.5, rel=1e-8)
    assert fit2.sigma2 == pytest.approx(fit1.sigma2 * 7.5 ** 2, rel=1e-8)


def test_vcov_properties():
    fit = fit_lmm(one_way_data(6, 5, 0.5, 0.5, seed=8))
    v = fit.vcov_beta
    assert np.allclose(v, v.T)
    assert np.all(np.diag(v) > 0)


def test_reml_ols_variance():
    dm = ols_example()
    fit = fit_lmm(dm, method=REML)
    assert fit.sigma2 == pytest.approx(4.0 / (4 - 2))  # SSE/(n-p)
    assert fit.method == REML
    assert profiled_deviance(fit.theta, dm, method=REML) == pytest.approx(
        -2 * fit.loglik, abs=1e-9)


def test_reml_beats_nothing_on_nested_fixed():
    # REML logliks of the same fixed-effects structure are comparable
    dm = one_way_data(6, 6, 0.5, 0.5, seed=4)
    fit = fit_lmm(dm, method=REML)
    assert math.isfinite(fit.loglik)


def test_n_le_p_errors():
    data = dataset_from_columns(
        {"loss": [1.0, 2.0], "algorithm": ["A", "B"]})
    dm = build_design(parse_formula("loss ~ algorithm"), data)
    with pytest.raises(FitError, match="observations"):
        fit_lmm(dm)


def test_theta_validation():
    dm = one_way_data(4, 4, 0.5, 0.5, seed=2)
    with pytest.raises(FitError, match="length"):
        profiled_deviance(np.array([1.0, 2.0]), dm)
    with pytest.raises(FitError, match=">= 0"):
        profiled_deviance(np.array([-0.5]), dm)


def test_theta_structure_layout():
    data = dataset_from_columns(
        {"loss": np.arange(30.0).tolist(),
         "algorithm": [f"A{i % 3}" for i in range(30)],
         "seed": [str(i // 3) for i in range(30)],
         "benchmark": [f"B{i % 2}" for i in range(30)]})
    dm = build_design(parse_formula(
        "loss ~ algorithm + (0 + algorithm|seed) + (1|benchmark)"), data)
    ts = ThetaStructure.for_design(dm)
    # unstructured 3x3 lower triangle (6) + scalar intercept (1)
    assert ts.size == 7
    init = ts.initial()
    assert init[ts.diagonal_mask].tolist() == [1.0] * 4
    assert init[~ts.diagonal_mask].tolist() == [0.0] * 3


def test_ranef_covariance_shape():
    dm = one_way_data(5, 4, 0.3, 0.2, seed=6)
    fit = fit_lmm(dm)
    (summary,) = fit.ranef_variances
    assert summary.covariance.shape == (1, 1)
    assert summary.term == "(1|group)"
    (blups,) = fit.blups
    assert blups.shape == (5, 1)
    # BLUPs shrink toward zero: sum is near zero for balanced data
    assert abs(blups.sum()) < 1.0
