import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from mixedrank.errors import FormulaError
from mixedrank.formula import (DIAGONAL, UNSTRUCTURED, FixedTerm, FormulaAst,
                               RandomTerm, format_formula, parse_formula)


def test_main_effect_only():
    ast = parse_formula("loss ~ algorithm")
    assert ast.response == "loss"
    assert ast.fixed_terms == (FixedTerm(("algorithm",)),)
    assert ast.random_terms == ()
    assert ast.has_intercept


def test_intercept_only():
    ast = parse_formula("loss ~ 1")
    assert ast.fixed_terms == ()
    assert ast.random_terms == ()
    assert ast.has_intercept


def test_random_slope_without_intercept():
    ast = parse_formula("loss ~ algorithm + (0 + algorithm|seed)")
    (term,) = ast.random_terms
    assert not term.inner_intercept
    assert term.inner_variables == ("algorithm",)
    assert term.group == "seed"
    assert term.covariance == UNSTRUCTURED


def test_two_random_intercepts():
    ast = parse_formula("loss ~ algorithm + (1|budget) + (1|benchmark)")
    assert [r.group for r in ast.random_terms] == ["budget", "benchmark"]
    assert all(r.inner_intercept and not r.inner_variables
               for r in ast.random_terms)


def test_double_bar_selects_diagonal():
    ast = parse_formula("loss ~ (0 + algorithm||seed)")
    assert ast.random_terms[0].covariance == DIAGONAL


def test_interaction_term():
    ast = parse_formula("loss ~ algorithm + algorithm:budget")
    assert ast.fixed_terms[1].variables == ("algorithm", "budget")


def test_dropped_intercept():
    ast = parse_formula("loss ~ 0 + algorithm")
    assert not ast.has_intercept


@pytest.mark.parametrize("text, expected", [
    ("loss ~ algorithm", "loss ~ algorithm"),
    ("loss~algorithm+(1|benchmark)", "loss ~ algorithm + (1|benchmark)"),
    ("loss ~ 1", "loss ~ 1"),
])
def test_format_canonicalizes(text, expected):
    assert format_formula(parse_formula(text)) == expected


def test_parse_is_deterministic():
    a = parse_formula("loss ~ algorithm + (1|benchmark)")
    b = parse_formula("loss ~ algorithm + (1|benchmark)")
    assert a == b


@pytest.mark.parametrize("bad", [
    "",
    "loss ~",
    "~ algorithm",
    "loss ~ algorithm + (1|benchmark",
    "loss ~ algorithm + 1|benchmark)",
    "loss ~ (algorithm benchmark)",
    "loss ~ (1 benchmark)",
    "loss ~ algorithm * benchmark",
    "loss ~ benchmark/instance",
    "loss ~ algorithm - 1",
    "loss ~ algorithm + (0|seed)",
    "loss ~ algorithm + algorithm",
    "loss ~ a:b + b:a",
    "loss ~ 0 + 1",
    "loss ~ 2",
    "loss ~ algorithm + (1|seed) + (1|seed)",
])
def test_rejects(bad):
    with pytest.raises(FormulaError):
        parse_formula(bad)


def test_error_carries_offset_and_expected():
    with pytest.raises(FormulaError) as err:
        parse_formula("loss ~ algorithm + (1 benchmark)")
    assert err.value.offset is not None
    assert err.value.expected


def test_offset_is_byte_position():
    with pytest.raises(FormulaError) as err:
        parse_formula("loss ~ *")
    assert err.value.offset == 7


def test_group_inside_inner_rejected():
    with pytest.raises(FormulaError):
        parse_formula("loss ~ (0 + seed|seed)")


names = st.sampled_from(
    ["loss", "algorithm", "benchmark", "seed", "budget", "prior", "acc",
     "x1", "meta_feature", "f.rate"])


@st.composite
def fixed_terms(draw):
    k = draw(st.integers(1, 3))
    vars_ = draw(st.lists(names, min_size=k, max_size=k, unique=True))
    return FixedTerm(tuple(vars_))


@st.composite
def random_terms(draw):
    group = draw(names)
    inner_icpt = draw(st.booleans())
    n_inner = draw(st.integers(0 if inner_icpt else 1, 2))
    inner = draw(st.lists(names.filter(lambda n: n != group),
                          min_size=n_inner, max_size=n_inner, unique=True))
    cov = draw(st.sampled_from([UNSTRUCTURED, DIAGONAL]))
    return RandomTerm(inner_intercept=inner_icpt,
                      inner_variables=tuple(inner), group=group,
                      covariance=cov)


@st.composite
def formulas(draw):
    response = draw(names)
    fixed = []
    seen = set()
    for term in draw(st.lists(fixed_terms(), max_size=3)):
        if term.key not in seen:
            seen.add(term.key)
            fixed.append(term)
    rand = []
    seen_r = set()
    for term in draw(st.lists(random_terms(), max_size=2)):
        if term.key not in seen_r:
            seen_r.add(term.key)
            rand.append(term)
    has_icpt = draw(st.booleans())
    if not has_icpt and not fixed and not rand:
        has_icpt = True
    return FormulaAst(response=response, fixed_terms=tuple(fixed),
                      random_terms=tuple(rand), has_intercept=has_icpt)


@settings(max_examples=300, deadline=None)
@given(formulas())
def test_roundtrip_property(ast):
    text = format_formula(ast)
    assert parse_formula(text) == ast
    # and formatting is a fixed point
    assert format_formula(parse_formula(text)) == text
