"""Mixed-effects significance analysis for benchmark experiment data."""

from .design import (Dataset, DesignMatrices, build_design, dataset_to_csv,
                     dataset_from_columns, load_table)
from .distributions import (chi_square_sf, studentized_range_cdf,
                            studentized_range_quantile)
from .errors import (DataError, DesignError, FitError, FormulaError,
                     InferenceError, MixedrankError, RecipeError)
from .formula import (FixedTerm, FormulaAst, RandomTerm, format_formula,
                      parse_formula)
from .inference import (EmmTable, FriedmanResult, GlrtResult,
                        PairwiseComparisons, estimated_marginal_means,
                        friedman_nemenyi, glrt, tukey_hsd)
from .lmm import FittedLmm, fit_lmm, profiled_deviance
from .recipes import (CheckEntry, RecipeVerdict, anytime_analysis,
                      autorank_replacement, check_benchmark_relevance,
                      check_budget_effect, check_seed_dependency,
                      cluster_benchmarks, run_sanity_workflow)
from .report import (CdDiagramSpec, ComparisonReport, compute_cd_geometry,
                     emit_report, render_cd_diagram)
from .synth import (GeneratorConfig, gen_benchmark_dataset,
                    gen_budget_dataset, gen_planted_anomaly,
                    gen_seed_dependent, generate)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DesignMatrices", "build_design", "dataset_to_csv",
    "dataset_from_columns", "load_table",
    "chi_square_sf", "studentized_range_cdf", "studentized_range_quantile",
    "DataError", "DesignError", "FitError", "FormulaError", "InferenceError",
    "MixedrankError", "RecipeError",
    "FixedTerm", "FormulaAst", "RandomTerm", "format_formula",
    "parse_formula",
    "EmmTable", "FriedmanResult", "GlrtResult", "PairwiseComparisons",
    "estimated_marginal_means", "friedman_nemenyi", "glrt", "tukey_hsd",
    "FittedLmm", "fit_lmm", "profiled_deviance",
    "CheckEntry", "RecipeVerdict", "anytime_analysis",
    "autorank_replacement", "check_benchmark_relevance",
    "check_budget_effect", "check_seed_dependency", "cluster_benchmarks",
    "run_sanity_workflow",
    "CdDiagramSpec", "ComparisonReport", "compute_cd_geometry",
    "emit_report", "render_cd_diagram",
    "GeneratorConfig", "gen_benchmark_dataset", "gen_budget_dataset",
    "gen_planted_anomaly", "gen_seed_dependent", "generate",
]
