"""Model-formula mini-language: parsing, validation and canonical printing.

The grammar covers exactly the constructs used throughout the analyses::

    formula := ident "~" rhs
    rhs     := term ("+" term)*
    term    := "1" | "0" | ident (":" ident)* | "(" inner ("|" | "||") ident ")"
    inner   := ("1" | "0") ("+" ident)* | ident

A leading "0" inside a random term drops its intercept; "||" requests a
diagonal covariance for the term's effects instead of the default
unstructured one.  Anything richer ("*" expansion, "/" nesting, function
calls) is rejected with a positioned syntax error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import FormulaError

UNSTRUCTURED = "unstructured"
DIAGONAL = "diagonal"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


@dataclass(frozen=True)
class FixedTerm:
    """A fixed effect: one variable (main effect) or several (interaction)."""

    variables: tuple[str, ...]

    def __post_init__(self):
        if not self.variables:
            raise FormulaError("fixed term needs at least one variable")
        if len(set(self.variables)) != len(self.variables):
            raise FormulaError(
                "interaction variables must be distinct: "
                + ":".join(self.variables))

    @property
    def key(self) -> frozenset[str]:
        """Term identity: the set of constituent variables (a:b == b:a)."""
        return frozenset(self.variables)

    def __str__(self) -> str:
        return ":".join(self.variables)


@dataclass(frozen=True)
class RandomTerm:
    """A random-effects term ``(inner | group)``."""

    inner_intercept: bool
    inner_variables: tuple[str, ...]
    group: str
    covariance: str = UNSTRUCTURED

    def __post_init__(self):
        if not self.inner_intercept and not self.inner_variables:
            raise FormulaError(
                f"random term for group '{self.group}' has an empty inner part")
        if self.group in self.inner_variables:
            raise FormulaError(
                f"grouping factor '{self.group}' cannot appear on the inner "
                "side of its own random term")
        if self.covariance not in (UNSTRUCTURED, DIAGONAL):
            raise FormulaError(f"unknown covariance structure '{self.covariance}'")

    @property
    def key(self) -> tuple:
        return (self.inner_intercept, frozenset(self.inner_variables),
                self.group, self.covariance)

    def __str__(self) -> str:
        if self.inner_variables:
            inner = ("1 + " if self.inner_intercept else "0 + ") \
                + " + ".join(self.inner_variables)
        else:
            inner = "1"
        bar = "||" if self.covariance == DIAGONAL else "|"
        return f"({inner}{bar}{self.group})"


@dataclass(frozen=True)
class FormulaAst:
    response: str
    fixed_terms: tuple[FixedTerm, ...] = ()
    random_terms: tuple[RandomTerm, ...] = ()
    has_intercept: bool = True

    def variables(self) -> set[str]:
        """All column names the formula mentions (response included)."""
        out = {self.response}
        for t in self.fixed_terms:
            out.update(t.variables)
        for r in self.random_terms:
            out.update(r.inner_variables)
            out.add(r.group)
        return out

    def __str__(self) -> str:
        return format_formula(self)


# --- tokenizer -------------------------------------------------------------

_TOKEN_SPEC = (
    ("TILDE", "~"), ("PLUS", "+"), ("COLON", ":"),
    ("LPAREN", "("), ("RPAREN", ")"),
)
_REJECTED = {"*": "'*' expansion is not supported; spell out the terms",
             "/": "'/' nesting is not supported",
             "-": "'-' removal is not supported; use '0' to drop the intercept"}


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    raw = text.encode("utf-8")  # offsets are byte offsets
    n = len(raw)
    while i < n:
        ch = chr(raw[i])
        if ch in " \t\r\n":
            i += 1
            continue
        if ch == "|":
            if i + 1 < n and chr(raw[i + 1]) == "|":
                tokens.append(_Token("DPIPE", "||", i))
                i += 2
            else:
                tokens.append(_Token("PIPE", "|", i))
                i += 1
            continue
        matched = False
        for kind, lit in _TOKEN_SPEC:
            if ch == lit:
                tokens.append(_Token(kind, lit, i))
                i += 1
                matched = True
                break
        if matched:
            continue
        if ch in _REJECTED:
            raise FormulaError(_REJECTED[ch], offset=i)
        if ch.isdigit():
            if ch in "01" and not (i + 1 < n and _is_ident_byte(raw[i + 1])):
                tokens.append(_Token("NUM", ch, i))
                i += 1
                continue
            raise FormulaError(f"unexpected number at '{ch}'", offset=i,
                               expected=("identifier", "'0'", "'1'"))
        m = _IDENT_RE.match(raw[i:].decode("utf-8", errors="replace"))
        if m:
            tokens.append(_Token("IDENT", m.group(0), i))
            i += len(m.group(0).encode("utf-8"))
            continue
        raise FormulaError(f"unexpected character '{ch}'", offset=i,
                           expected=("identifier",))
    tokens.append(_Token("END", "", n))
    return tokens


def _is_ident_byte(b: int) -> bool:
    c = chr(b)
    return c.isalnum() or c in "_."


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self, kind: str, expected: tuple[str, ...]) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            if tok.kind == "END":
                msg = "unexpected end of input"
            else:
                msg = f"unexpected '{tok.text}'"
            raise FormulaError(msg, offset=tok.offset, expected=expected)
        self.pos += 1
        return tok

    def parse(self) -> FormulaAst:
        response = self.take("IDENT", ("response identifier",)).text
        self.take("TILDE", ("'~'",))
        fixed: list[FixedTerm] = []
        random: list[RandomTerm] = []
        intercept_box: list[bool | None] = [None]
        while True:
            self._parse_term(fixed, random, intercept_box)
            if self.peek().kind == "PLUS":
                self.pos += 1
                continue
            self.take("END", ("'+'", "end of formula"))
            break
        intercept = intercept_box[0]
        has_intercept = True if intercept is None else intercept
        if not has_intercept and not fixed and not random:
            raise FormulaError("formula '~ 0' has no terms at all")
        ast = FormulaAst(response=response, fixed_terms=tuple(fixed),
                         random_terms=tuple(random), has_intercept=has_intercept)
        _check_duplicates(ast)
        return ast

    def _parse_term(self, fixed, random, intercept_box):
        tok = self.peek()
        if tok.kind == "NUM":
            self.pos += 1
            want = tok.text == "1"
            prev = intercept_box[0]
            if prev is not None and prev != want:
                raise FormulaError("conflicting '0' and '1' intercept terms",
                                   offset=tok.offset)
            intercept_box[0] = want
            return
        if tok.kind == "LPAREN":
            random.append(self._parse_random())
            return
        first = self.take("IDENT", ("identifier", "'0'", "'1'", "'('")).text
        names = [first]
        while self.peek().kind == "COLON":
            self.pos += 1
            names.append(self.take("IDENT", ("identifier",)).text)
        fixed.append(FixedTerm(tuple(names)))

    def _parse_random(self) -> RandomTerm:
        self.take("LPAREN", ("'('",))
        tok = self.peek()
        inner_intercept = True
        inner_vars: list[str] = []
        if tok.kind == "NUM":
            self.pos += 1
            inner_intercept = tok.text == "1"
            while self.peek().kind == "PLUS":
                self.pos += 1
                inner_vars.append(self.take("IDENT", ("identifier",)).text)
        elif tok.kind == "IDENT":
            self.pos += 1
            inner_vars.append(tok.text)
            while self.peek().kind == "PLUS":
                self.pos += 1
                inner_vars.append(self.take("IDENT", ("identifier",)).text)
        else:
            raise FormulaError(
                "random term needs an inner part before '|'",
                offset=tok.offset, expected=("'0'", "'1'", "identifier"))
        bar = self.peek()
        if bar.kind not in ("PIPE", "DPIPE"):
            raise FormulaError("random term is missing its '|' separator",
                               offset=bar.offset, expected=("'|'", "'||'"))
        self.pos += 1
        group = self.take("IDENT", ("grouping identifier",)).text
        self.take("RPAREN", ("')'",))
        if not inner_intercept and not inner_vars:
            raise FormulaError(
                f"random term '(0|{group})' has an empty inner part",
                offset=bar.offset)
        cov = DIAGONAL if bar.kind == "DPIPE" else UNSTRUCTURED
        return RandomTerm(inner_intercept=inner_intercept,
                          inner_variables=tuple(inner_vars),
                          group=group, covariance=cov)


def _check_duplicates(ast: FormulaAst) -> None:
    seen: set[frozenset[str]] = set()
    for t in ast.fixed_terms:
        if t.key in seen:
            raise FormulaError(f"duplicate fixed term '{t}'")
        seen.add(t.key)
    seen_r: set[tuple] = set()
    for r in ast.random_terms:
        if r.key in seen_r:
            raise FormulaError(f"duplicate random term '{r}'")
        seen_r.add(r.key)


def parse_formula(text: str) -> FormulaAst:
    """Parse a model formula string into a :class:`FormulaAst`.

    Raises
    ------
    FormulaError
        On any syntax problem, with the byte offset and the set of tokens
        that would have been accepted there.
    """
    if not text or not text.strip():
        raise FormulaError("empty formula", offset=0,
                           expected=("response identifier",))
    return _Parser(text).parse()


def format_formula(ast: FormulaAst) -> str:
    """Render an AST back to canonical text; ``parse(format(ast)) == ast``."""
    parts: list[str] = []
    if not ast.has_intercept:
        parts.append("0")
    parts.extend(str(t) for t in ast.fixed_terms)
    parts.extend(str(r) for r in ast.random_terms)
    if not parts:
        parts = ["1"]
    return f"{ast.response} ~ " + " + ".join(parts)
