"""Preset analysis workflows: autorank-style comparison, the three sanity
checks (seed dependency, benchmark relevance, budget effect), metafeature
clustering of benchmarks, and compressed anytime analysis."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import Dataset, DesignMatrices, build_design
from .errors import RecipeError
from .formula import parse_formula
from .inference import (DEFAULT_ALPHA, FriedmanResult, GlrtResult,
                        estimated_marginal_means, friedman_nemenyi, glrt,
                        tukey_hsd)
from .lmm import FittedLmm, fit_lmm
from .report import (ComparisonReport, compute_cd_geometry, format_p,
                     glrt_payload, glrt_text, SCHEMA_VERSION)

# Variance factor above the median that implicates an algorithm in the seed
# dependency check; "large variance" made concrete and configurable.
SEED_VARIANCE_FACTOR = 10.0


@dataclass(frozen=True)
class CheckEntry:
    """One check inside a recipe verdict, with the evidence it rests on."""

    label: str
    models: tuple[str, ...]
    verdict: str
    glrt: GlrtResult | None = None
    ranking: tuple[tuple[str, float], ...] = ()
    implicated: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        return {
            "label": self.label,
            "models": list(self.models),
            "verdict": self.verdict,
            "glrt": glrt_payload(self.glrt) if self.glrt else None,
            "ranking": [[name, float(v)] for name, v in self.ranking],
            "implicated": list(self.implicated),
        }


@dataclass(frozen=True)
class RecipeVerdict:
    recipe: str
    entries: tuple[CheckEntry, ...]
    alpha: float
    notes: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "recipe",
            "recipe": self.recipe,
            "alpha": self.alpha,
            "entries": [e.to_payload() for e in self.entries],
            "notes": list(self.notes),
        }

    def to_text(self) -> str:
        lines = [f"== {self.recipe} (alpha={self.alpha:g}) =="]
        for e in self.entries:
            lines.append(f"-- {e.label} --")
            if e.glrt is not None:
                lines.extend(glrt_text(e.glrt))
            if e.ranking:
                ranked = ", ".join(f"{name}={v!r}" for name, v in e.ranking)
                lines.append(f"Variances: {ranked}")
            lines.append(e.verdict)
        for note in self.notes:
            lines.append(f"Note: {note}")
        return "\n".join(lines) + "\n"


def _threads() -> int:
    raw = os.environ.get("MIXEDRANK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _map_ordered(fn, items):
    """Apply fn over items, possibly in parallel; results stay in order."""
    n = _threads()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _fit(formula: str, data: Dataset) -> tuple[FittedLmm, DesignMatrices]:
    dm = build_design(parse_formula(formula), data)
    return fit_lmm(dm), dm


def _require(data: Dataset, column: str, recipe: str) -> None:
    if column not in data:
        raise RecipeError(f"{recipe} needs a '{column}' column")


# --- autorank replacement ------------------------------------------------------

def autorank_replacement(data: Dataset, formula: str | None = None,
                         alpha: float = DEFAULT_ALPHA,
                         baseline: bool = False) -> ComparisonReport:
    """Model-based all-pairs comparison of algorithms.

    Defaults to ``loss ~ algorithm``; when a benchmark column is present the
    random-intercept upgrade ``+ (1|benchmark)`` is adopted only if a GLRT
    prefers it.  Optionally attaches the Friedman/Nemenyi baseline run on the
    same data.
    """
    _require(data, "algorithm", "autorank_replacement")
    if len(data.categorical("algorithm").levels) < 2:
        raise RecipeError("autorank_replacement needs at least 2 algorithms")

    notes: list[str] = []
    selection: GlrtResult | None = None
    if formula is None:
        formula = "loss ~ algorithm"
        fit, dm = _fit(formula, data)
        if "benchmark" in data:
            upgraded = "loss ~ algorithm + (1|benchmark)"
            complex_, dm_c = _fit(upgraded, data)
            selection = glrt(fit, complex_, alpha=alpha)
            if selection.preferred == "complex":
                formula, fit, dm = upgraded, complex_, dm_c
            else:
                notes.append("benchmark random intercept not supported by "
                             "the GLRT; kept the simple model")
        else:
            notes.append("no benchmark column: using the simple model")
    else:
        fit, dm = _fit(formula, data)

    emm = estimated_marginal_means(fit, dm, "algorithm")
    df_mode = "per-algorithm" if emm.df > 0 else "residual"
    if df_mode == "residual":
        notes.append("per-algorithm df was nonpositive; residual df used")
    pairs = tukey_hsd(emm, fit, alpha=alpha, df_mode=df_mode)
    diagram = compute_cd_geometry(pairs)
    fr = friedman_baseline(data, alpha=alpha) if baseline else None
    return ComparisonReport(
        formula=formula, emm=emm, pairwise=pairs, diagram=diagram,
        model_summary=_summary(fit), selection=selection, baseline=fr,
        notes=tuple(notes))


def friedman_baseline(data: Dataset, alpha: float = DEFAULT_ALPHA,
                      block: str | None = None) -> FriedmanResult:
    """Friedman/Nemenyi on the same table, blocking on benchmark when
    available and on seed otherwise."""
    if block is None:
        if "benchmark" in data:
            block = "benchmark"
        elif "seed" in data:
            block = "seed"
        else:
            raise RecipeError("the rank baseline needs a benchmark or seed "
                              "column to block on")
    return friedman_nemenyi(data, "algorithm", block, alpha=alpha)


def _summary(fit: FittedLmm) -> dict:
    return {
        "formula": fit.formula,
        "method": fit.method,
        "loglik": fit.loglik,
        "n_params": fit.n_params,
        "n_obs": fit.n_obs,
        "sigma2": fit.sigma2,
        "converged": fit.converged,
        "singular": fit.singular,
    }


# --- sanity checks --------------------------------------------------------------

def check_seed_dependency(data: Dataset, alpha: float = DEFAULT_ALPHA,
                          variance_factor: float = SEED_VARIANCE_FACTOR,
                          ) -> RecipeVerdict:
    """GLRT of ``loss ~ algorithm`` against a per-algorithm random seed
    effect; when the seed model wins, algorithms whose effect variance
    exceeds ``variance_factor`` times the median are implicated."""
    _require(data, "seed", "check_seed_dependency")
    _require(data, "algorithm", "check_seed_dependency")
    if len(data.categorical("seed").levels) < 2:
        raise RecipeError("check_seed_dependency needs at least 2 seed levels")

    simple_f = "loss ~ algorithm"
    complex_f = "loss ~ algorithm + (0 + algorithm||seed)"
    simple, _ = _fit(simple_f, data)
    complex_, _ = _fit(complex_f, data)
    result = glrt(simple, complex_, alpha=alpha)

    implicated: tuple[str, ...] = ()
    ranking: tuple[tuple[str, float], ...] = ()
    if result.preferred == "complex":
        variances = complex_.ranef_variances[0].variances
        named = {_strip_label(k): v for k, v in variances.items()}
        ranking = tuple(sorted(named.items(), key=lambda kv: -kv[1]))
        med = float(np.median(list(named.values())))
        threshold = max(variance_factor * med, 1e-10)
        implicated = tuple(name for name, v in ranking if v > threshold)
        verdict = ("Seed is a significant effect, likely influenced "
                   f"algorithms: {list(implicated)} "
                   f"(variance > {variance_factor:g} x median, "
                   f"chi2={result.statistic:.6g}, df={result.df}, "
                   f"p={format_p(result.p_value, result.underflow)})")
    else:
        verdict = ("Seed is not a significant effect "
                   f"(chi2={result.statistic:.6g}, df={result.df}, "
                   f"p={format_p(result.p_value, result.underflow)})")
    entry = CheckEntry(label="seed dependency", models=(simple_f, complex_f),
                       verdict=verdict, glrt=result, ranking=ranking,
                       implicated=implicated)
    return RecipeVerdict(recipe="check_seed_dependency", entries=(entry,),
                         alpha=alpha)


def _strip_label(label: str) -> str:
    # "algorithm[A-1]" -> "A-1"; plain labels pass through
    if "[" in label and label.endswith("]"):
        return label[label.index("[") + 1:-1]
    return label


def check_benchmark_relevance(data: Dataset,
                              alpha: float = DEFAULT_ALPHA) -> RecipeVerdict:
    """Per-benchmark GLRT of ``loss ~ 1`` vs ``loss ~ algorithm`` plus a
    relevance ranking from the variances of benchmark-within-algorithm
    random effects fitted on the full table."""
    _require(data, "benchmark", "check_benchmark_relevance")
    _require(data, "algorithm", "check_benchmark_relevance")
    if len(data.categorical("algorithm").levels) < 2:
        raise RecipeError("check_benchmark_relevance needs >= 2 algorithms")

    bench = data.categorical("benchmark")

    def run_one(level: str) -> CheckEntry:
        subset = data.filter(bench.codes == bench.levels.index(level))
        if len(subset.categorical("algorithm").levels) < 2:
            raise RecipeError(
                f"benchmark '{level}' has a single algorithm observed")
        null, _ = _fit("loss ~ 1", subset)
        algo, _ = _fit("loss ~ algorithm", subset)
        result = glrt(null, algo, alpha=alpha)
        informative = result.preferred == "complex"
        word = "informative" if informative else "uninformative"
        verdict = (f"Benchmark {level} is {word} "
                   f"(chi2={result.statistic:.6g}, df={result.df}, "
                   f"p={format_p(result.p_value, result.underflow)})")
        return CheckEntry(
            label=f"benchmark relevance: {level}",
            models=("loss ~ 1", "loss ~ algorithm"), verdict=verdict,
            glrt=result,
            implicated=() if informative else (level,))

    entries = list(_map_ordered(run_one, list(bench.levels)))

    rank_f = "loss ~ (0 + benchmark||algorithm)"
    rank_fit, _ = _fit(rank_f, data)
    variances = {_strip_label(k): v
                 for k, v in rank_fit.ranef_variances[0].variances.items()}
    ranking = tuple(sorted(variances.items(), key=lambda kv: -kv[1]))
    order = " > ".join(name for name, _ in ranking)
    entries.append(CheckEntry(
        label="benchmark relevance ranking", models=(rank_f,),
        verdict=f"Relevance ranking by random-effect variance: {order}",
        ranking=ranking))

    uninformative = tuple(lvl for e in entries for lvl in e.implicated)
    notes = ()
    if uninformative:
        notes = (f"uninformative benchmarks: {list(uninformative)}",)
    return RecipeVerdict(recipe="check_benchmark_relevance",
                         entries=tuple(entries), alpha=alpha, notes=notes)


def check_budget_effect(data: Dataset,
                        alpha: float = DEFAULT_ALPHA) -> RecipeVerdict:
    """Compare no budget effect, a shared linear budget effect, and a
    per-algorithm interaction effect; ties break toward fewer parameters."""
    _require(data, "budget", "check_budget_effect")
    _require(data, "algorithm", "check_budget_effect")
    budget = data.numeric("budget")
    if np.all(budget == budget[0]):
        raise RecipeError("budget column is constant")

    bench = "benchmark" in data
    tail = " + (1|benchmark)" if bench else ""
    simple_f = f"loss ~ algorithm{tail}"
    effect_f = f"loss ~ algorithm + budget{tail}"
    inter_f = f"loss ~ algorithm + algorithm:budget{tail}"
    simple, _ = _fit(simple_f, data)
    effect, _ = _fit(effect_f, data)
    inter, _ = _fit(inter_f, data)

    g_effect = glrt(simple, effect, alpha=alpha)
    g_inter = glrt(simple, inter, alpha=alpha)
    g_nested = glrt(effect, inter, alpha=alpha)

    effect_wins = g_effect.preferred == "complex"
    inter_wins = g_inter.preferred == "complex"
    if effect_wins and inter_wins:
        if g_nested.preferred == "complex":
            winner, why = inter_f, ("both budget effects are significant and "
                                    "the interaction beats the simple effect")
        else:
            winner, why = effect_f, ("both budget effects are significant; "
                                     "the interaction adds no significant fit "
                                     "over the simple effect, so the simpler "
                                     "model wins")
    elif inter_wins:
        winner, why = inter_f, "only the interaction effect is significant"
    elif effect_wins:
        winner, why = effect_f, "only the simple budget effect is significant"
    else:
        winner, why = simple_f, "budget does not significantly improve the fit"

    entries = (
        CheckEntry(label="budget as simple effect",
                   models=(simple_f, effect_f),
                   verdict=_glrt_verdict(g_effect), glrt=g_effect),
        CheckEntry(label="budget as interaction effect",
                   models=(simple_f, inter_f),
                   verdict=_glrt_verdict(g_inter), glrt=g_inter),
        CheckEntry(label="interaction over simple effect",
                   models=(effect_f, inter_f),
                   verdict=_glrt_verdict(g_nested), glrt=g_nested),
        CheckEntry(label="preferred budget structure", models=(winner,),
                   verdict=f"Preferred model: {winner} ({why})"),
    )
    return RecipeVerdict(recipe="check_budget_effect", entries=entries,
                         alpha=alpha)


def _glrt_verdict(g: GlrtResult) -> str:
    word = "significant" if g.preferred == "complex" else "not significant"
    return (f"Added terms are {word} "
            f"(chi2={g.statistic:.6g}, df={g.df}, "
            f"p={format_p(g.p_value, g.underflow)})")


def run_sanity_workflow(data: Dataset,
                        alpha: float = DEFAULT_ALPHA) -> list[RecipeVerdict]:
    """The fixed seed -> benchmark -> budget sequence; checks whose columns
    are missing are reported as skipped rather than short-circuiting."""
    verdicts: list[RecipeVerdict] = []
    steps = (
        ("seed dependency", "seed", check_seed_dependency),
        ("benchmark relevance", "benchmark", check_benchmark_relevance),
        ("budget effect", "budget", check_budget_effect),
    )
    for label, column, fn in steps:
        if column not in data:
            verdicts.append(RecipeVerdict(
                recipe=f"check_{column}_skipped", entries=(), alpha=alpha,
                notes=(f"{label} check skipped: no '{column}' column",)))
            continue
        verdicts.append(fn(data, alpha=alpha))
    return verdicts


# --- metafeature clustering -------------------------------------------------------

def cluster_benchmarks(data: Dataset, metafeature: str,
                       algo_pair: tuple[str, str],
                       alpha: float = DEFAULT_ALPHA) -> RecipeVerdict:
    """Per benchmark, test whether the relative performance of two
    algorithms differs across metafeature levels (algorithm-by-metafeature
    interaction GLRT); benchmarks without a significant interaction are
    reported as anomalous."""
    _require(data, "benchmark", "cluster_benchmarks")
    _require(data, metafeature, "cluster_benchmarks")
    a, b = algo_pair
    algo = data.categorical("algorithm")
    for name in (a, b):
        if name not in algo.levels:
            raise RecipeError(f"algorithm '{name}' not present in the data")
    if a == b:
        raise RecipeError("algo_pair must name two distinct algorithms")

    bench = data.categorical("benchmark")
    pair_set = {algo.levels.index(a), algo.levels.index(b)}
    keep_algo = np.isin(algo.codes, list(sorted(pair_set)))
    seed_tail = " + (1|seed)" if "seed" in data else ""
    null_f = f"loss ~ algorithm + {metafeature}{seed_tail}"
    full_f = (f"loss ~ algorithm + {metafeature} + "
              f"algorithm:{metafeature}{seed_tail}")

    def run_one(level: str) -> CheckEntry:
        mask = keep_algo & (bench.codes == bench.levels.index(level))
        subset = data.filter(mask)
        meta = subset.categorical(metafeature) if metafeature in subset \
            else None
        if meta is None or len(meta.levels) < 2:
            return CheckEntry(
                label=f"benchmark {level}", models=(),
                verdict=(f"Benchmark {level} skipped: metafeature "
                         f"'{metafeature}' has fewer than 2 levels here"))
        for name in (a, b):
            sub_algo = subset.categorical("algorithm")
            if name not in sub_algo.levels:
                return CheckEntry(
                    label=f"benchmark {level}", models=(),
                    verdict=(f"Benchmark {level} skipped: algorithm "
                             f"'{name}' not observed here"))
        null, _ = _fit(null_f, subset)
        full, _ = _fit(full_f, subset)
        result = glrt(null, full, alpha=alpha)
        differentiating = result.preferred == "complex"
        word = "differentiating" if differentiating else "anomalous"
        verdict = (f"Benchmark {level} is {word} "
                   f"(chi2={result.statistic:.6g}, df={result.df}, "
                   f"p={format_p(result.p_value, result.underflow)})")
        return CheckEntry(
            label=f"benchmark {level}", models=(null_f, full_f),
            verdict=verdict, glrt=result,
            implicated=() if differentiating else (level,))

    entries = tuple(_map_ordered(run_one, list(bench.levels)))
    anomalous = tuple(lvl for e in entries for lvl in e.implicated)
    notes = (f"anomalous benchmarks: {list(anomalous)}",
             f"algorithms compared: {a} vs {b}")
    return RecipeVerdict(recipe="cluster_benchmarks", entries=entries,
                         alpha=alpha, notes=notes)


# --- anytime analysis ---------------------------------------------------------------

def anytime_analysis(data: Dataset, budget_window: tuple[float, float],
                     alpha: float = DEFAULT_ALPHA) -> ComparisonReport:
    """Single compressed comparison over a budget window: rows are filtered
    to the window and ``loss ~ algorithm + (1|budget) + (1|benchmark)`` is
    fitted with budget treated as a grouping factor."""
    _require(data, "budget", "anytime_analysis")
    _require(data, "algorithm", "anytime_analysis")
    lo, hi = budget_window
    if lo > hi:
        raise RecipeError(f"empty budget window: {lo:g} > {hi:g}")
    budget = data.numeric("budget")
    mask = (budget >= lo) & (budget <= hi)
    if not mask.any():
        raise RecipeError(
            f"budget window [{lo:g}, {hi:g}] selects no rows")
    subset = data.filter(mask)

    parts = ["loss ~ algorithm", "(1|budget)"]
    if "benchmark" in subset:
        parts.append("(1|benchmark)")
    formula = " + ".join(parts)
    fit, dm = _fit(formula, subset)
    emm = estimated_marginal_means(fit, dm, "algorithm")
    df_mode = "per-algorithm" if emm.df > 0 else "residual"
    pairs = tukey_hsd(emm, fit, alpha=alpha, df_mode=df_mode)
    diagram = compute_cd_geometry(pairs)
    notes = (f"budget window [{lo:g}, {hi:g}]: {subset.n_rows} rows",)
    return ComparisonReport(
        formula=formula, emm=emm, pairwise=pairs, diagram=diagram,
        model_summary=_summary(fit), notes=notes)
