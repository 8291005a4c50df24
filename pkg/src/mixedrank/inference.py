"""Statistical machinery on fitted models: nested-model likelihood-ratio
tests, estimated marginal means, Tukey HSD pairwise comparisons and a
Friedman/Nemenyi rank-based baseline."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .design import Dataset, DesignMatrices
from .distributions import (P_UNDERFLOW, chi_square_sf, studentized_range_cdf,
                            studentized_range_quantile)
from .errors import InferenceError
from .formula import FormulaAst
from .lmm import ML, FittedLmm

DEFAULT_ALPHA = 0.05
EMM_GRID_CAP = 1_000_000


# --- generalized likelihood ratio test ---------------------------------------

@dataclass(frozen=True)
class GlrtResult:
    loglik_simple: float
    loglik_complex: float
    statistic: float
    df: int
    p_value: float
    underflow: bool
    preferred: str              # "simple" | "complex"
    boundary_warning: bool
    alpha: float
    formula_simple: str = ""
    formula_complex: str = ""


def _is_nested(simple: FormulaAst, complex_: FormulaAst) -> bool:
    """Structural nesting check.

    Every fixed term of the simple model must be covered by a complex fixed
    term (variable-set inclusion, which matches the full-rank marginality
    coding used to build X), and every random term must reappear unchanged.
    """
    if simple.has_intercept and not complex_.has_intercept:
        return False
    complex_sets = [frozenset(t.variables) for t in complex_.fixed_terms]
    for t in simple.fixed_terms:
        s = frozenset(t.variables)
        if not any(s <= c for c in complex_sets):
            return False
    complex_random = {r.key for r in complex_.random_terms}
    return all(r.key in complex_random for r in simple.random_terms)


def glrt(simple: FittedLmm, complex_: FittedLmm,
         alpha: float = DEFAULT_ALPHA) -> GlrtResult:
    """Generalized likelihood ratio test of two nested fits on the same data.

    The statistic 2*(loglik_complex - loglik_simple) is referred to a
    chi-square with df equal to the parameter-count difference.  The complex
    model is preferred when p < alpha and its likelihood is actually higher.
    """
    if simple.method != complex_.method:
        raise InferenceError("cannot compare fits with different estimation "
                             f"methods ({simple.method} vs {complex_.method})")
    if simple.method != ML:
        same_fixed = ({t.key for t in simple.ast.fixed_terms}
                      == {t.key for t in complex_.ast.fixed_terms}
                      and simple.ast.has_intercept == complex_.ast.has_intercept)
        if not same_fixed:
            raise InferenceError("REML likelihoods are not comparable across "
                                 "different fixed-effects structures; refit "
                                 "with ML")
    if (simple.n_obs != complex_.n_obs
            or simple.response_checksum != complex_.response_checksum):
        raise InferenceError("models were fit on different data")
    if complex_.n_params <= simple.n_params:
        raise InferenceError(
            f"complex model must have more parameters "
            f"({complex_.n_params} <= {simple.n_params})")
    if not _is_nested(simple.ast, complex_.ast):
        raise InferenceError(
            f"models are not nested: '{simple.formula}' vs "
            f"'{complex_.formula}'")

    stat = 2.0 * (complex_.loglik - simple.loglik)
    df = complex_.n_params - simple.n_params
    raw_p = chi_square_sf(max(stat, 0.0), df)
    underflow = raw_p < P_UNDERFLOW
    p = 0.0 if underflow else raw_p
    preferred = ("complex"
                 if p < alpha and complex_.loglik > simple.loglik
                 else "simple")
    boundary = (complex_.theta.size > simple.theta.size) and complex_.singular
    return GlrtResult(
        loglik_simple=simple.loglik, loglik_complex=complex_.loglik,
        statistic=stat, df=df, p_value=p, underflow=underflow,
        preferred=preferred, boundary_warning=boundary, alpha=alpha,
        formula_simple=simple.formula, formula_complex=complex_.formula)


# --- estimated marginal means --------------------------------------------------

@dataclass(frozen=True)
class EmmTable:
    focus: str
    levels: tuple[str, ...]
    means: np.ndarray
    ses: np.ndarray
    df: float                  # N_a - k rule; may be <= 0 on tiny data
    grid_size: int
    n_per_level: tuple[int, ...]
    contrast_rows: np.ndarray  # averaged design row per level, (k, p)

    @property
    def k(self) -> int:
        return len(self.levels)

    def by_level(self) -> dict[str, tuple[float, float]]:
        return {lv: (float(m), float(se))
                for lv, m, se in zip(self.levels, self.means, self.ses)}


def estimated_marginal_means(model: FittedLmm, dm: DesignMatrices,
                             focus: str,
                             grid_cap: int = EMM_GRID_CAP) -> EmmTable:
    """Model-predicted mean and standard error per level of ``focus``.

    The grid is the Cartesian product of the levels of every categorical
    fixed-effect variable; numeric covariates are held at their data mean and
    random effects at their population mean of zero.  Each focus level's mean
    averages the predicted values over its grid slice, and the SE comes from
    the same averaged contrast row through vcov(beta).
    """
    enc = dm.encoder
    if focus not in enc.categorical_vars:
        raise InferenceError(
            f"'{focus}' is not a categorical fixed effect of the model")
    cat_vars = list(enc.categorical_vars)
    sizes = [len(enc.var_levels[v]) for v in cat_vars]
    grid_size = int(np.prod(sizes)) if sizes else 1
    if grid_size > grid_cap:
        raise InferenceError(
            f"EMM grid has {grid_size} cells, above the cap of {grid_cap}")

    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    arrays = {v: g.reshape(-1).astype(np.int64)
              for v, g in zip(cat_vars, grids)}
    for v in enc.numeric_vars:
        arrays[v] = np.full(grid_size, enc.numeric_means[v])
    X_grid = enc.encode(arrays, grid_size)

    focus_codes = arrays[focus]
    levels = enc.var_levels[focus]
    k = len(levels)
    rows = np.empty((k, dm.p))
    means = np.empty(k)
    ses = np.empty(k)
    for c in range(k):
        row = X_grid[focus_codes == c].mean(axis=0)
        rows[c] = row
        means[c] = float(row @ model.beta)
        ses[c] = math.sqrt(max(float(row @ model.vcov_beta @ row), 0.0))

    counts = np.bincount(dm.cat_codes[focus], minlength=k)
    n_min = int(counts.min())
    return EmmTable(focus=focus, levels=levels, means=means, ses=ses,
                    df=float(n_min - k), grid_size=grid_size,
                    n_per_level=tuple(int(c) for c in counts),
                    contrast_rows=rows)


# --- Tukey HSD -------------------------------------------------------------------

@dataclass(frozen=True)
class PairResult:
    level_i: str
    level_j: str
    mean_diff: float            # mean_i - mean_j
    se_pair: float
    q_stat: float
    q_crit: float
    cd: float
    p_value: float
    significant: bool


@dataclass(frozen=True)
class PairwiseComparisons:
    levels: tuple[str, ...]
    means: tuple[float, ...]
    k: int
    df: float
    alpha: float
    pairs: tuple[PairResult, ...]

    def pair(self, a: str, b: str) -> PairResult:
        for p in self.pairs:
            if {p.level_i, p.level_j} == {a, b}:
                return p
        raise KeyError(f"no pair ({a}, {b})")

    def significant_pairs(self) -> set[frozenset[str]]:
        return {frozenset((p.level_i, p.level_j))
                for p in self.pairs if p.significant}

    @property
    def cd_min(self) -> float:
        return min(p.cd for p in self.pairs)

    @property
    def cd_max(self) -> float:
        return max(p.cd for p in self.pairs)


def tukey_hsd(emm: EmmTable, model: FittedLmm,
              alpha: float = DEFAULT_ALPHA,
              df_mode: str = "per-algorithm") -> PairwiseComparisons:
    """All-pairs studentized range test on an EMM table.

    ``df_mode='per-algorithm'`` uses df = N_a - k where N_a is the smallest
    per-level observation count; ``df_mode='residual'`` uses n - p instead
    (useful when the former is nonpositive on tiny data).
    """
    if emm.k < 2:
        raise InferenceError("pairwise comparison needs at least 2 levels")
    if df_mode == "per-algorithm":
        df = emm.df
        if df <= 0:
            raise InferenceError(
                f"df = N_a - k = {df:g} is not positive; too few observations "
                "per level (df_mode='residual' uses n - p instead)")
    elif df_mode == "residual":
        df = float(model.n_obs - model.n_fixed)
    else:
        raise InferenceError(f"unknown df_mode '{df_mode}'")

    k = emm.k
    q_crit = studentized_range_quantile(1.0 - alpha, k, df)
    pairs = []
    for i, j in itertools.combinations(range(k), 2):
        se_pair = math.sqrt((emm.ses[i] ** 2 + emm.ses[j] ** 2) / 2.0)
        diff = float(emm.means[i] - emm.means[j])
        q_s = abs(diff) / se_pair if se_pair > 0 else math.inf
        p = 1.0 - studentized_range_cdf(min(q_s, 1e6), k, df)
        pairs.append(PairResult(
            level_i=emm.levels[i], level_j=emm.levels[j], mean_diff=diff,
            se_pair=se_pair, q_stat=q_s, q_crit=q_crit, cd=q_crit * se_pair,
            p_value=p, significant=p < alpha))
    return PairwiseComparisons(
        levels=emm.levels, means=tuple(float(m) for m in emm.means), k=k,
        df=df, alpha=alpha, pairs=tuple(pairs))


# --- Friedman / Nemenyi baseline ---------------------------------------------------

@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    df: int
    p_value: float
    avg_ranks: dict[str, float]
    n_blocks: int
    pairwise: PairwiseComparisons


def _rank_row(values: np.ndarray) -> np.ndarray:
    """Ascending ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def friedman_nemenyi(data: Dataset, algorithm: str = "algorithm",
                     block: str = "benchmark",
                     alpha: float = DEFAULT_ALPHA) -> FriedmanResult:
    """Friedman omnibus test on within-block ranks plus Nemenyi pairwise
    critical differences.  Duplicate (block, algorithm) observations are
    aggregated by their mean; every algorithm must appear in every block."""
    algo = data.categorical(algorithm)
    blk = data.categorical(block)
    loss = data.numeric("loss")
    k = len(algo.levels)
    n_blocks = len(blk.levels)
    if k < 2:
        raise InferenceError("Friedman test needs at least 2 algorithms")

    sums = np.zeros((n_blocks, k))
    counts = np.zeros((n_blocks, k))
    np.add.at(sums, (blk.codes, algo.codes), loss)
    np.add.at(counts, (blk.codes, algo.codes), 1.0)
    if np.any(counts == 0):
        raise InferenceError(
            "incomplete block design: every algorithm must be observed in "
            "every block")
    table = sums / counts

    ranks = np.vstack([_rank_row(row) for row in table])
    avg = ranks.mean(axis=0)
    stat = (12.0 * n_blocks / (k * (k + 1))
            * float(np.sum((avg - (k + 1) / 2.0) ** 2)))
    p = chi_square_sf(stat, k - 1)

    se_pair = math.sqrt(k * (k + 1) / (12.0 * n_blocks))
    q_crit = studentized_range_quantile(1.0 - alpha, k, math.inf)
    pairs = []
    for i, j in itertools.combinations(range(k), 2):
        diff = float(avg[i] - avg[j])
        q_s = abs(diff) / se_pair
        pp = 1.0 - studentized_range_cdf(min(q_s, 1e6), k, math.inf)
        pairs.append(PairResult(
            level_i=algo.levels[i], level_j=algo.levels[j], mean_diff=diff,
            se_pair=se_pair, q_stat=q_s, q_crit=q_crit, cd=q_crit * se_pair,
            p_value=pp, significant=pp < alpha))
    pairwise = PairwiseComparisons(
        levels=algo.levels, means=tuple(float(r) for r in avg), k=k,
        df=math.inf, alpha=alpha, pairs=tuple(pairs))
    return FriedmanResult(
        statistic=stat, df=k - 1, p_value=p,
        avg_ranks={lv: float(r) for lv, r in zip(algo.levels, avg)},
        n_blocks=n_blocks, pairwise=pairwise)
