"""Deterministic generators for the synthetic validation datasets.

Every loss value is drawn from a counter-based stream keyed by the
configuration seed and the cell coordinates (scenario, algorithm, seed,
benchmark, budget), so a cell's value never depends on generation order and
generation is safe to parallelize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import Dataset, dataset_from_columns
from .errors import DataError

SCENARIOS = ("seed_dependent", "seed_null", "benchmark_varying",
             "budget_simple", "budget_null", "budget_crossover",
             "planted_anomaly")
_SCENARIO_ID = {name: i for i, name in enumerate(SCENARIOS)}

# Effect magnitudes. The qualitative shapes (which benchmark is uninformative,
# which algorithm drifts with the seed, ...) are fixed; these sizes are chosen
# so the default dataset sizes detect them at alpha = 0.05 with headroom.
BENCHMARK_GAP_STEPS = (0.0, 0.3, 0.8)   # per-algorithm-index mean gap of B-0..B-2
BENCHMARK_GAP_EXTRA = 0.3               # gap step for benchmarks beyond B-2
BUDGET_SLOPE = -0.05                     # shared loss drop per budget unit
ALGO_OFFSET_STEP = 1.5                   # per-algorithm-index mean offset
BENCH_INTERCEPT_SD = 0.3                 # spread of per-benchmark intercepts
CROSSOVER_OFFSET = 0.4                   # swapping offset of the two crossing algos
ANOMALY_PRIOR_GAP = 1.0                  # extra good-prior advantage of A-1
SEED_SLOPE = 0.1                         # A-1 mean is SEED_SLOPE * seed


@dataclass(frozen=True)
class GeneratorConfig:
    rng_seed: int = 0
    n_algorithms: int = 3
    n_seeds: int = 50
    n_benchmarks: int = 3
    n_budget_levels: int = 10
    base_mean: float = 2.5
    base_variance: float = 0.55
    scenario: str = "seed_dependent"

    def __post_init__(self):
        for name in ("n_algorithms", "n_seeds", "n_benchmarks",
                     "n_budget_levels"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if self.base_variance <= 0:
            raise DataError("base_variance must be > 0")
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario '{self.scenario}'; "
                            f"choose from {', '.join(SCENARIOS)}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.base_variance)


def _draw(cfg: GeneratorConfig, *coords: int) -> float:
    """One standard-normal draw for a cell, independent of call order."""
    seq = np.random.SeedSequence(
        entropy=cfg.rng_seed,
        spawn_key=(_SCENARIO_ID[cfg.scenario], *coords))
    return float(np.random.Generator(np.random.Philox(seq)).standard_normal())


def _benchmark_gap(index: int) -> float:
    if index < len(BENCHMARK_GAP_STEPS):
        return BENCHMARK_GAP_STEPS[index]
    return BENCHMARK_GAP_EXTRA * index


def gen_seed_dependent(cfg: GeneratorConfig) -> Dataset:
    """One row per (algorithm, seed); algorithm A-1's mean follows
    0.1 * seed under the seed_dependent scenario, all others sit at the
    base mean."""
    if cfg.scenario not in ("seed_dependent", "seed_null"):
        raise DataError(f"scenario '{cfg.scenario}' is not a seed scenario")
    loss, algos, seeds = [], [], []
    for a in range(cfg.n_algorithms):
        for s in range(cfg.n_seeds):
            if cfg.scenario == "seed_dependent" and a == 1:
                mean = SEED_SLOPE * s
            else:
                mean = cfg.base_mean
            loss.append(mean + cfg.sd * _draw(cfg, 0, a, s))
            algos.append(f"A-{a}")
            seeds.append(str(s))
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "seed": seeds})


def gen_benchmark_dataset(cfg: GeneratorConfig) -> Dataset:
    """Benchmarks with increasing per-algorithm performance gaps: on B-0 all
    algorithms share the base mean, B-1 spreads them by 0.3 per index, B-2
    by 0.8 (0.3 * index beyond that)."""
    if cfg.n_benchmarks < 3:
        raise DataError("benchmark scenario needs n_benchmarks >= 3")
    loss, algos, benches, seeds = [], [], [], []
    for b in range(cfg.n_benchmarks):
        gap = _benchmark_gap(b)
        for a in range(cfg.n_algorithms):
            mean = cfg.base_mean + gap * a
            for s in range(cfg.n_seeds):
                loss.append(mean + cfg.sd * _draw(cfg, 0, b, a, s))
                algos.append(f"A-{a}")
                benches.append(f"B-{b}")
                seeds.append(str(s))
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "benchmark": benches,
         "seed": seeds})


def gen_budget_dataset(cfg: GeneratorConfig) -> Dataset:
    """Budget levels 1..n with a shared linear budget effect (budget_simple),
    none (budget_null), or two algorithms whose offsets swap sign at the
    midpoint (budget_crossover).  Per-benchmark intercepts are drawn once per
    benchmark to exercise the (1|benchmark) term."""
    if cfg.scenario not in ("budget_simple", "budget_null",
                            "budget_crossover"):
        raise DataError(f"scenario '{cfg.scenario}' is not a budget scenario")
    if cfg.n_budget_levels < 2:
        raise DataError("budget scenario needs n_budget_levels >= 2")
    mid = (1 + cfg.n_budget_levels) / 2.0
    loss, algos, benches, seeds, budgets = [], [], [], [], []
    for b in range(cfg.n_benchmarks):
        intercept = BENCH_INTERCEPT_SD * _draw(cfg, 1, b)
        for a in range(cfg.n_algorithms):
            for s in range(cfg.n_seeds):
                for lvl in range(1, cfg.n_budget_levels + 1):
                    mean = cfg.base_mean + intercept
                    if cfg.scenario == "budget_crossover" and a < 2:
                        sign = 1.0 if (lvl <= mid) == (a == 0) else -1.0
                        mean += sign * CROSSOVER_OFFSET
                    else:
                        mean += ALGO_OFFSET_STEP * a
                    if cfg.scenario == "budget_simple":
                        mean += BUDGET_SLOPE * lvl
                    loss.append(mean + cfg.sd * _draw(cfg, 0, b, a, s, lvl))
                    algos.append(f"A-{a}")
                    benches.append(f"B-{b}")
                    seeds.append(str(s))
                    budgets.append(float(lvl))
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "benchmark": benches,
         "seed": seeds, "budget": budgets})


def gen_planted_anomaly(cfg: GeneratorConfig) -> Dataset:
    """Two-algorithm suite with good/bad prior instances per benchmark.

    On every benchmark except B-0, algorithm A-1 gains a large extra
    advantage under the good prior (an algorithm-by-prior interaction); B-0's
    two prior instances are generated identically, making it the planted
    anomaly that interaction tests should single out."""
    if cfg.n_algorithms < 2:
        raise DataError("planted anomaly scenario needs >= 2 algorithms")
    loss, algos, benches, seeds, priors = [], [], [], [], []
    for b in range(cfg.n_benchmarks):
        intercept = BENCH_INTERCEPT_SD * _draw(cfg, 1, b)
        for a in range(min(cfg.n_algorithms, 2)):
            for p, prior in enumerate(("good", "bad")):
                mean = cfg.base_mean + intercept + ALGO_OFFSET_STEP * a
                interacting = b != 0
                if a == 1 and (prior == "good" or not interacting):
                    mean -= ANOMALY_PRIOR_GAP
                for s in range(cfg.n_seeds):
                    loss.append(mean + cfg.sd * _draw(cfg, 0, b, a, p, s))
                    algos.append(f"A-{a}")
                    benches.append(f"B-{b}")
                    seeds.append(str(s))
                    priors.append(prior)
    return dataset_from_columns(
        {"loss": loss, "algorithm": algos, "benchmark": benches,
         "seed": seeds, "prior": priors})


_GENERATORS = {
    "seed_dependent": gen_seed_dependent,
    "seed_null": gen_seed_dependent,
    "benchmark_varying": gen_benchmark_dataset,
    "budget_simple": gen_budget_dataset,
    "budget_null": gen_budget_dataset,
    "budget_crossover": gen_budget_dataset,
    "planted_anomaly": gen_planted_anomaly,
}


def generate(cfg: GeneratorConfig) -> Dataset:
    """Dispatch to the generator matching ``cfg.scenario``."""
    return _GENERATORS[cfg.scenario](cfg)
