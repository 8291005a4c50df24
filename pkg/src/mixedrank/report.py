"""Rendering of comparison results: extended critical-difference diagrams
(SVG), plain-text summaries in the style of the printed check output, and a
stable machine-readable JSON schema ("v1").

All output is a pure function of its input: fixed fonts and colors, no
timestamps, canonical float formatting, sorted JSON keys.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .distributions import P_UNDERFLOW
from .errors import MixedrankError
from .inference import (EmmTable, FriedmanResult, GlrtResult,
                        PairwiseComparisons)

SCHEMA_VERSION = "v1"

_SVG_WIDTH = 640.0
_MARGIN = 45.0


def format_p(p: float, underflow: bool | None = None) -> str:
    """p-values below 1e-15 print as '<1e-15'; otherwise full precision."""
    if underflow or p < P_UNDERFLOW:
        return "<1e-15"
    return repr(float(p))


def _num(x: float) -> float | str:
    """JSON-safe number: infinities become the string 'inf'."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


# --- payload builders ---------------------------------------------------------

def glrt_payload(g: GlrtResult) -> dict:
    return {
        "loglik_simple": g.loglik_simple,
        "loglik_complex": g.loglik_complex,
        "statistic": g.statistic,
        "df": g.df,
        "p_value": 0.0 if g.underflow else g.p_value,
        "underflow": g.underflow,
        "preferred": g.preferred,
        "boundary_warning": g.boundary_warning,
        "alpha": g.alpha,
        "formula_simple": g.formula_simple,
        "formula_complex": g.formula_complex,
    }


def emm_payload(e: EmmTable) -> dict:
    return {
        "focus": e.focus,
        "levels": list(e.levels),
        "means": [float(m) for m in e.means],
        "standard_errors": [float(s) for s in e.ses],
        "df": _num(e.df),
        "grid_size": e.grid_size,
        "n_per_level": list(e.n_per_level),
    }


def pairwise_payload(c: PairwiseComparisons) -> dict:
    return {
        "levels": list(c.levels),
        "means": [float(m) for m in c.means],
        "k": c.k,
        "df": _num(c.df),
        "alpha": c.alpha,
        "pairs": [{
            "level_i": p.level_i,
            "level_j": p.level_j,
            "mean_diff": p.mean_diff,
            "se_pair": p.se_pair,
            "q_stat": p.q_stat,
            "q_crit": p.q_crit,
            "cd": p.cd,
            "p_value": 0.0 if p.p_value < P_UNDERFLOW else p.p_value,
            "underflow": p.p_value < P_UNDERFLOW,
            "significant": p.significant,
        } for p in c.pairs],
    }


def friedman_payload(f: FriedmanResult) -> dict:
    return {
        "statistic": f.statistic,
        "df": f.df,
        "p_value": 0.0 if f.p_value < P_UNDERFLOW else f.p_value,
        "underflow": f.p_value < P_UNDERFLOW,
        "avg_ranks": {k: float(v) for k, v in f.avg_ranks.items()},
        "n_blocks": f.n_blocks,
        "pairwise": pairwise_payload(f.pairwise),
    }


def glrt_text(g: GlrtResult, simple_name: str = "Simple model",
              complex_name: str = "Complex model") -> list[str]:
    sep = "<<" if g.loglik_simple < g.loglik_complex else ">="
    return [
        f"{simple_name} ({g.loglik_simple:g}) {sep} "
        f"{complex_name} ({g.loglik_complex:g})",
        f"Chi-Square: {g.statistic!r}, P-Value: "
        f"{format_p(g.p_value, g.underflow)}",
    ]


def pairwise_text(c: PairwiseComparisons) -> list[str]:
    df = "inf" if math.isinf(c.df) else f"{c.df:g}"
    lines = [f"Tukey HSD pairs (alpha={c.alpha:g}, k={c.k}, df={df}):"]
    for p in c.pairs:
        mark = "*" if p.significant else " "
        lines.append(
            f"  {mark} {p.level_i} vs {p.level_j}: diff={p.mean_diff:+.6g} "
            f"q={p.q_stat:.6g} q*={p.q_crit:.6g} CD={p.cd:.6g} "
            f"p={format_p(p.p_value)}")
    lines.append(f"Critical difference range: [{c.cd_min:.6g}, {c.cd_max:.6g}]")
    return lines


# --- CD-diagram geometry --------------------------------------------------------

@dataclass(frozen=True)
class CdDiagramSpec:
    levels: tuple[str, ...]          # ordered by mean, ascending
    means: tuple[float, ...]
    axis_lo: float
    axis_hi: float
    positions: tuple[float, ...]     # SVG x per level, same order as levels
    cliques: tuple[tuple[str, ...], ...]
    cd_min: float
    cd_max: float
    width: float
    height: float
    axis_label: str


def _maximal_cliques(adjacency: dict[int, set[int]], n: int) -> list[set[int]]:
    """Bron-Kerbosch with pivoting; n is small (number of levels)."""
    cliques: list[set[int]] = []

    def expand(r: set[int], p: set[int], x: set[int]):
        if not p and not x:
            if len(r) >= 2:
                cliques.append(set(r))
            return
        pivot = max(p | x, key=lambda v: len(adjacency[v] & p))
        for v in sorted(p - adjacency[pivot]):
            expand(r | {v}, p & adjacency[v], x & adjacency[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(range(n)), set())
    return cliques


def compute_cd_geometry(cmp: PairwiseComparisons,
                        axis_label: str = "estimated marginal mean",
                        ) -> CdDiagramSpec:
    """Diagram geometry: level positions on a mean axis, maximal cliques of
    mutually non-significant levels, and the critical-difference range."""
    if cmp.k < 2:
        raise MixedrankError("a CD diagram needs at least 2 levels")
    order = sorted(range(cmp.k), key=lambda i: (cmp.means[i], cmp.levels[i]))
    levels = tuple(cmp.levels[i] for i in order)
    means = tuple(float(cmp.means[i]) for i in order)

    cd_min, cd_max = cmp.cd_min, cmp.cd_max
    lo = means[0]
    hi = max(means[-1], lo + cd_max)
    span = hi - lo
    if span <= 0:
        span = max(cd_max, 1.0)
        hi = lo + span
    pad = 0.05 * span
    lo_p, hi_p = lo - pad, hi + pad

    inner = _SVG_WIDTH - 2 * _MARGIN

    def x_of(v: float) -> float:
        return _MARGIN + (v - lo_p) / (hi_p - lo_p) * inner

    positions = tuple(round(x_of(m), 2) for m in means)

    index_of = {lv: i for i, lv in enumerate(levels)}
    adjacency: dict[int, set[int]] = {i: set() for i in range(cmp.k)}
    for p in cmp.pairs:
        if not p.significant:
            a, b = index_of[p.level_i], index_of[p.level_j]
            adjacency[a].add(b)
            adjacency[b].add(a)
    cliques_idx = _maximal_cliques(adjacency, cmp.k)
    cliques = tuple(sorted(
        (tuple(levels[i] for i in sorted(c)) for c in cliques_idx)))

    height = 100.0 + 8.0 * len(cliques) + 16.0 * cmp.k
    return CdDiagramSpec(
        levels=levels, means=means, axis_lo=lo_p, axis_hi=hi_p,
        positions=positions, cliques=cliques, cd_min=cd_min, cd_max=cd_max,
        width=_SVG_WIDTH, height=round(height, 2), axis_label=axis_label)


def cd_geometry_payload(spec: CdDiagramSpec) -> dict:
    return {
        "levels": list(spec.levels),
        "means": list(spec.means),
        "axis_lo": spec.axis_lo,
        "axis_hi": spec.axis_hi,
        "positions": list(spec.positions),
        "cliques": [list(c) for c in spec.cliques],
        "cd_min": spec.cd_min,
        "cd_max": spec.cd_max,
        "width": spec.width,
        "height": spec.height,
        "axis_label": spec.axis_label,
    }


def render_cd_diagram(cmp: PairwiseComparisons, emm: EmmTable | None = None,
                      axis_label: str | None = None) -> bytes:
    """Extended critical-difference diagram as a standalone SVG 1.1 document.

    Levels sit on a horizontal mean axis, bars beneath join maximal cliques
    of mutually non-significant levels, and a bracket above the axis spans
    the smallest-to-largest per-pair critical difference.
    """
    if axis_label is None:
        axis_label = ("estimated marginal mean" if emm is not None
                      else "average rank")
    spec = compute_cd_geometry(cmp, axis_label=axis_label)

    def f(v: float) -> str:
        return f"{v:.2f}"

    inner = spec.width - 2 * _MARGIN
    scale = inner / (spec.axis_hi - spec.axis_lo)
    y_axis = 56.0
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{f(spec.width)}" height="{f(spec.height)}" '
        f'viewBox="0 0 {f(spec.width)} {f(spec.height)}">',
        '<g fill="none" stroke="black" stroke-width="1" '
        'font-family="sans-serif" font-size="11">',
    ]
    # CD range bracket
    bx0 = _MARGIN
    bx_min = bx0 + spec.cd_min * scale
    bx_max = bx0 + spec.cd_max * scale
    y_br = 24.0
    out.append(f'<path d="M {f(bx0)} {f(y_br + 5)} V {f(y_br)} '
               f'H {f(bx_max)} V {f(y_br + 5)}"/>')
    if spec.cd_max > spec.cd_min:
        out.append(f'<line x1="{f(bx_min)}" y1="{f(y_br)}" '
                   f'x2="{f(bx_min)}" y2="{f(y_br + 5)}"/>')
    out.append(f'<text x="{f(bx_max + 6)}" y="{f(y_br + 4)}" fill="black" '
               f'stroke="none">CD [{spec.cd_min:.4g}, {spec.cd_max:.4g}]</text>')
    # axis
    x_lo, x_hi = _MARGIN, spec.width - _MARGIN
    out.append(f'<line x1="{f(x_lo)}" y1="{f(y_axis)}" '
               f'x2="{f(x_hi)}" y2="{f(y_axis)}"/>')
    out.append(f'<text x="{f(x_lo)}" y="{f(y_axis - 8)}" fill="black" '
               f'stroke="none">{_esc(spec.axis_label)}: '
               f'{spec.axis_lo:.4g} to {spec.axis_hi:.4g}</text>')
    # clique bars
    for ci, clique in enumerate(spec.cliques):
        xs = [spec.positions[spec.levels.index(lv)] for lv in clique]
        y = y_axis + 8.0 + 8.0 * ci
        out.append(f'<line x1="{f(min(xs))}" y1="{f(y)}" x2="{f(max(xs))}" '
                   f'y2="{f(y)}" stroke-width="3.5" stroke-linecap="round"/>')
    # level markers and staggered labels
    y_lab0 = y_axis + 8.0 * len(spec.cliques) + 26.0
    for i, (lv, m, x) in enumerate(
            zip(spec.levels, spec.means, spec.positions)):
        y_lab = y_lab0 + 16.0 * i
        out.append(f'<line x1="{f(x)}" y1="{f(y_axis - 4)}" x2="{f(x)}" '
                   f'y2="{f(y_axis + 4)}" stroke-width="1.5"/>')
        out.append(f'<line x1="{f(x)}" y1="{f(y_axis + 4)}" x2="{f(x)}" '
                   f'y2="{f(y_lab - 4)}" stroke-dasharray="2,2"/>')
        out.append(f'<text x="{f(x + 4)}" y="{f(y_lab)}" fill="black" '
                   f'stroke="none">{_esc(lv)} ({m:.4g})</text>')
    out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def _esc(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


# --- comparison report -----------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    """EMMs, Tukey pairs and diagram geometry for one fitted comparison."""

    formula: str
    emm: EmmTable
    pairwise: PairwiseComparisons
    diagram: CdDiagramSpec
    model_summary: dict
    selection: GlrtResult | None = None
    baseline: FriedmanResult | None = None
    notes: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        payload = {
            "schema": SCHEMA_VERSION,
            "kind": "comparison",
            "formula": self.formula,
            "model": self.model_summary,
            "emm": emm_payload(self.emm),
            "tukey": pairwise_payload(self.pairwise),
            "cd_diagram": cd_geometry_payload(self.diagram),
            "notes": list(self.notes),
        }
        payload["selection_glrt"] = (glrt_payload(self.selection)
                                     if self.selection else None)
        payload["friedman_baseline"] = (friedman_payload(self.baseline)
                                        if self.baseline else None)
        return payload

    def to_text(self) -> str:
        lines = [f"Model: {self.formula}"]
        ms = self.model_summary
        lines.append(
            f"Log-likelihood: {ms['loglik']!r} ({ms['method']}), "
            f"parameters: {ms['n_params']}, n: {ms['n_obs']}, "
            f"converged: {str(ms['converged']).lower()}, "
            f"singular: {str(ms['singular']).lower()}")
        if self.selection is not None:
            lines.extend(glrt_text(self.selection))
        lines.append(f"Estimated marginal means (focus: {self.emm.focus}):")
        for lv, m, se in zip(self.emm.levels, self.emm.means, self.emm.ses):
            lines.append(f"  {lv}: mean={m!r} SE={se!r}")
        lines.extend(pairwise_text(self.pairwise))
        if self.baseline is not None:
            b = self.baseline
            lines.append(
                f"Friedman baseline: chi2={b.statistic!r} df={b.df} "
                f"p={format_p(b.p_value)} over {b.n_blocks} blocks")
            for lv, r in b.avg_ranks.items():
                lines.append(f"  {lv}: avg rank {r!r}")
            lines.extend(pairwise_text(b.pairwise))
        for note in self.notes:
            lines.append(f"Note: {note}")
        return "\n".join(lines) + "\n"


def emit_report(payload, format: str = "text") -> bytes:
    """Serialize a ComparisonReport or RecipeVerdict.

    JSON output is canonical (sorted keys, two-space indent, trailing
    newline): parsing and re-emitting it is byte-identical.
    """
    if format == "json":
        return emit_json(payload.to_payload()
                         if hasattr(payload, "to_payload") else payload)
    if format == "text":
        return payload.to_text().encode("utf-8")
    raise MixedrankError(f"unknown report format '{format}'")


def emit_json(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2,
                       ensure_ascii=False, allow_nan=False) + "\n"
            ).encode("utf-8")
