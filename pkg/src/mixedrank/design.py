"""Experiment tables and design-matrix construction.

A :class:`Dataset` is a typed column table of benchmark runs.  From a parsed
formula and a dataset, :func:`build_design` produces the response vector, the
dense fixed-effects matrix ``X`` (treatment contrasts, marginality-aware
interaction coding) and the sparse random-effects indicator matrix ``Z``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .errors import DataError, DesignError
from .formula import FormulaAst, RandomTerm, DIAGONAL

# Column roles accepted by load_table.  Numeric roles are parsed as floats,
# everything else is categorical with first-appearance level order.
NUMERIC_ROLES = ("loss", "budget")
CATEGORICAL_ROLES = ("algorithm", "benchmark", "seed", "prior")
MANDATORY_ROLES = ("loss", "algorithm")


@dataclass(frozen=True)
class NumericColumn:
    values: np.ndarray  # float64, no NaN/inf after ingestion

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class CategoricalColumn:
    codes: np.ndarray  # int64 indices into levels
    levels: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.codes)

    def label(self, i: int) -> str:
        return self.levels[self.codes[i]]


Column = NumericColumn | CategoricalColumn


@dataclass(frozen=True)
class Dataset:
    """Immutable column table; all columns share the same row count."""

    columns: dict[str, Column]
    n_rows: int
    n_dropped: int = 0

    def __post_init__(self):
        for name, col in self.columns.items():
            if col.n != self.n_rows:
                raise DataError(
                    f"column '{name}' has {col.n} rows, expected {self.n_rows}")

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def numeric(self, name: str) -> np.ndarray:
        col = self._get(name)
        if not isinstance(col, NumericColumn):
            raise DataError(f"column '{name}' is not numeric")
        return col.values

    def categorical(self, name: str) -> CategoricalColumn:
        col = self._get(name)
        if not isinstance(col, CategoricalColumn):
            raise DataError(f"column '{name}' is not categorical")
        return col

    def _get(self, name: str) -> Column:
        if name not in self.columns:
            raise DataError(f"unknown column '{name}'")
        return self.columns[name]

    def filter(self, mask: np.ndarray) -> "Dataset":
        """Row subset; categorical levels are re-derived (unused levels drop,
        first-appearance order of the surviving rows is preserved)."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_rows,):
            raise DataError("filter mask has the wrong length")
        cols: dict[str, Column] = {}
        for name, col in self.columns.items():
            if isinstance(col, NumericColumn):
                cols[name] = NumericColumn(col.values[mask])
            else:
                labels = [col.levels[c] for c in col.codes[mask]]
                cols[name] = _categorical_from_labels(labels)
        return Dataset(columns=cols, n_rows=int(mask.sum()))


def _categorical_from_labels(labels: list[str],
                             level_order: tuple[str, ...] | None = None,
                             ) -> CategoricalColumn:
    """First-appearance level order unless an explicit order is supplied."""
    if level_order is not None:
        index = {lab: i for i, lab in enumerate(level_order)}
        missing = {lab for lab in labels if lab not in index}
        if missing:
            raise DataError(
                f"labels not covered by the supplied level order: "
                f"{sorted(missing)}")
        codes = np.fromiter((index[lab] for lab in labels), dtype=np.int64,
                            count=len(labels))
        return CategoricalColumn(codes=codes, levels=tuple(level_order))
    levels: list[str] = []
    index = {}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in index:
            index[lab] = len(levels)
            levels.append(lab)
        codes[i] = index[lab]
    return CategoricalColumn(codes=codes, levels=tuple(levels))


def dataset_from_columns(raw: dict[str, list], *,
                         numeric: tuple[str, ...] = ("loss", "budget"),
                         level_orders: dict[str, tuple[str, ...]] | None = None,
                         ) -> Dataset:
    """Build a Dataset from plain Python columns (synthetic data, tests)."""
    n = None
    cols: dict[str, Column] = {}
    orders = level_orders or {}
    for name, values in raw.items():
        if n is None:
            n = len(values)
        elif len(values) != n:
            raise DataError(f"column '{name}' length mismatch")
        if name in numeric:
            arr = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in numeric column '{name}'")
            cols[name] = NumericColumn(arr)
        else:
            cols[name] = _categorical_from_labels([str(v) for v in values],
                                                  orders.get(name))
    return Dataset(columns=cols, n_rows=n or 0)


# --- CSV ingestion -----------------------------------------------------------

def _role_target(role: str) -> tuple[str, bool]:
    """Map a schema role to (dataset column name, is_numeric)."""
    if role in NUMERIC_ROLES:
        return role, True
    if role in CATEGORICAL_ROLES:
        return role, False
    if role.startswith("metafeature:"):
        name = role.split(":", 1)[1]
        if not name:
            raise DataError("metafeature role needs a name, e.g. metafeature:prior")
        return name, False
    if role == "ignore":
        return "", False
    raise DataError(f"unknown column role '{role}'")


def load_table(source, schema: dict[str, str],
               level_orders: dict[str, tuple[str, ...]] | None = None,
               ) -> Dataset:
    """Ingest a CSV file (RFC 4180, UTF-8, header row) into a Dataset.

    Parameters
    ----------
    source:
        Path, bytes, or a binary/text file object.
    schema:
        Maps file column names to roles: loss, algorithm, benchmark, seed,
        budget, prior, metafeature:<name>, or ignore.  The loss and algorithm
        roles are mandatory.  Rows with missing or unparseable values in any
        mapped column are dropped and counted in ``Dataset.n_dropped``.
    level_orders:
        Optional explicit level order per categorical dataset column;
        first-appearance order is used otherwise.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: no header row") from None

    targets: list[tuple[int, str, bool]] = []  # (file col idx, name, numeric)
    mapped_roles: set[str] = set()
    for file_col, role in schema.items():
        if file_col not in header:
            raise DataError(f"schema column '{file_col}' not in CSV header")
        name, is_num = _role_target(role)
        if role != "ignore":
            targets.append((header.index(file_col), name, is_num))
            mapped_roles.add(role)
    for role in MANDATORY_ROLES:
        if role not in mapped_roles:
            raise DataError(f"mandatory role '{role}' unmapped")
    targets.sort(key=lambda t: t[1] != "loss")  # parse loss first
    names = [t[1] for t in targets]
    if len(set(names)) != len(names):
        raise DataError("two schema entries map to the same dataset column")

    kept: dict[str, list] = {name: [] for _, name, _ in targets}
    n_dropped = 0
    loss_name = next(name for _, name, _ in targets
                     if name == "loss")
    loss_parse_failures = 0
    n_raw = 0
    for row in reader:
        if not row or all(f == "" for f in row):
            continue
        n_raw += 1
        parsed: dict[str, object] = {}
        ok = True
        for idx, name, is_num in targets:
            raw = row[idx].strip() if idx < len(row) else ""
            if raw == "":
                ok = False
                break
            if is_num:
                try:
                    val = float(raw)
                except ValueError:
                    val = float("nan")
                if not np.isfinite(val):
                    if name == loss_name:
                        loss_parse_failures += 1
                    ok = False
                    break
                parsed[name] = val
            else:
                parsed[name] = raw
        if not ok:
            n_dropped += 1
            continue
        for name, val in parsed.items():
            kept[name].append(val)

    if n_raw == 0:
        raise DataError("empty file: no data rows")
    n_kept = len(kept[loss_name])
    if n_kept == 0:
        if loss_parse_failures == n_raw:
            raise DataError("loss column is non-numeric throughout")
        raise DataError("no usable rows after dropping incomplete ones")

    cols: dict[str, Column] = {}
    orders = level_orders or {}
    for _, name, is_num in targets:
        if is_num:
            cols[name] = NumericColumn(np.asarray(kept[name], dtype=np.float64))
        else:
            cols[name] = _categorical_from_labels([str(v) for v in kept[name]],
                                                  orders.get(name))
    return Dataset(columns=cols, n_rows=n_kept, n_dropped=n_dropped)


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes().decode("utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def dataset_to_csv(data: Dataset) -> bytes:
    """Export a Dataset as UTF-8 CSV; re-ingesting yields an equal Dataset."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(data.columns)
    writer.writerow(names)
    cols = []
    for name in names:
        col = data.columns[name]
        if isinstance(col, NumericColumn):
            cols.append([repr(float(v)) for v in col.values])
        else:
            cols.append([col.levels[c] for c in col.codes])
    for i in range(data.n_rows):
        writer.writerow([c[i] for c in cols])
    return buf.getvalue().encode("utf-8")


# --- fixed-effects encoding ---------------------------------------------------

@dataclass(frozen=True)
class _VarCoding:
    name: str
    kind: str               # "categorical" | "numeric"
    levels: tuple[str, ...] = ()
    full: bool = False      # full indicator set vs k-1 treatment contrasts

    @property
    def width(self) -> int:
        if self.kind == "numeric":
            return 1
        return len(self.levels) if self.full else len(self.levels) - 1

    def labels(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        lv = self.levels if self.full else self.levels[1:]
        return [f"{self.name}[{l}]" for l in lv]

    def encode(self, values: np.ndarray) -> np.ndarray:
        if self.kind == "numeric":
            return np.asarray(values, dtype=np.float64).reshape(-1, 1)
        codes = np.asarray(values, dtype=np.int64)
        k = len(self.levels)
        out = np.zeros((len(codes), k), dtype=np.float64)
        out[np.arange(len(codes)), codes] = 1.0
        return out if self.full else out[:, 1:]


@dataclass(frozen=True)
class _TermEncoder:
    label: str
    codings: tuple[_VarCoding, ...]

    def labels(self) -> list[str]:
        per_var = [c.labels() for c in self.codings]
        return [":".join(combo) for combo in itertools.product(*per_var)]

    def encode(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        mats = [c.encode(arrays[c.name]) for c in self.codings]
        out = mats[0]
        for m in mats[1:]:
            # itertools.product order: later variables vary fastest
            out = (out[:, :, None] * m[:, None, :]).reshape(len(m), -1)
        return out


@dataclass(frozen=True)
class FixedEncoder:
    """Encodes data rows (or EMM grid rows) into fixed-effects design rows."""

    has_intercept: bool
    terms: tuple[_TermEncoder, ...]
    categorical_vars: tuple[str, ...]   # in first-mention order
    numeric_vars: tuple[str, ...]
    var_levels: dict[str, tuple[str, ...]]
    numeric_means: dict[str, float]
    contrasts: dict[str, str]           # categorical var -> reference level

    @property
    def n_cols(self) -> int:
        n = 1 if self.has_intercept else 0
        return n + sum(
            int(np.prod([c.width for c in t.codings])) for t in self.terms)

    def labels(self) -> list[str]:
        out = ["(Intercept)"] if self.has_intercept else []
        for t in self.terms:
            out.extend(t.labels())
        return out

    def encode(self, arrays: dict[str, np.ndarray], n: int) -> np.ndarray:
        parts = []
        if self.has_intercept:
            parts.append(np.ones((n, 1)))
        for t in self.terms:
            parts.append(t.encode(arrays))
        if not parts:
            return np.empty((n, 0))
        return np.hstack(parts)

    def term_map(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        ofs = 0
        if self.has_intercept:
            out["(Intercept)"] = [0]
            ofs = 1
        for t in self.terms:
            w = int(np.prod([c.width for c in t.codings]))
            out[t.label] = list(range(ofs, ofs + w))
            ofs += w
        return out


def _build_fixed_encoder(ast: FormulaAst, data: Dataset) -> FixedEncoder:
    cat_vars: list[str] = []
    num_vars: list[str] = []
    var_levels: dict[str, tuple[str, ...]] = {}
    numeric_means: dict[str, float] = {}
    contrasts: dict[str, str] = {}

    def classify(v: str):
        col = data.columns.get(v)
        if col is None:
            raise DesignError(f"unknown variable '{v}'")
        if isinstance(col, CategoricalColumn):
            if v not in cat_vars:
                if len(col.levels) < 2:
                    raise DesignError(
                        f"categorical '{v}' has a single level and cannot be "
                        "a fixed effect")
                cat_vars.append(v)
                var_levels[v] = col.levels
                contrasts[v] = col.levels[0]
            return "categorical"
        if v not in num_vars:
            num_vars.append(v)
            numeric_means[v] = float(col.values.mean())
        return "numeric"

    # Marginality-aware coding: a categorical variable inside a term gets the
    # full indicator set when the margin obtained by removing it is not
    # already spanned, and spans that margin as a side effect.
    spanned: set[frozenset[str]] = set()
    if ast.has_intercept:
        spanned.add(frozenset())
    encoders: list[_TermEncoder] = []
    for term in ast.fixed_terms:
        codings: list[_VarCoding] = []
        tset = frozenset(term.variables)
        for v in term.variables:
            kind = classify(v)
            if kind == "numeric":
                codings.append(_VarCoding(v, "numeric"))
                continue
            margin = tset - {v}
            if margin in spanned:
                codings.append(_VarCoding(v, "categorical", var_levels[v],
                                          full=False))
            else:
                codings.append(_VarCoding(v, "categorical", var_levels[v],
                                          full=True))
                spanned.add(margin)
        spanned.add(tset)
        encoders.append(_TermEncoder(str(term), tuple(codings)))

    return FixedEncoder(
        has_intercept=ast.has_intercept, terms=tuple(encoders),
        categorical_vars=tuple(cat_vars), numeric_vars=tuple(num_vars),
        var_levels=var_levels, numeric_means=numeric_means, contrasts=contrasts)


# --- random-effects structure --------------------------------------------------

@dataclass(frozen=True)
class RandomBlock:
    """Bookkeeping for one random term's contiguous block of Z columns."""

    term: RandomTerm
    label: str
    group_levels: tuple[str, ...]
    inner_labels: tuple[str, ...]
    col_offset: int
    diagonal: bool

    @property
    def t(self) -> int:
        return len(self.inner_labels)

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    @property
    def n_cols(self) -> int:
        return self.t * self.n_groups

    @property
    def n_theta(self) -> int:
        t = self.t
        return t if self.diagonal else t * (t + 1) // 2


def _group_codes(data: Dataset, name: str) -> CategoricalColumn:
    col = data.columns.get(name)
    if col is None:
        raise DesignError(f"unknown grouping variable '{name}'")
    if isinstance(col, CategoricalColumn):
        return col
    # Numeric grouping factors (e.g. budget) are coerced to categorical with
    # sorted-unique levels.
    values = col.values
    uniq = np.unique(values)
    levels = tuple(_format_number(v) for v in uniq)
    codes = np.searchsorted(uniq, values)
    return CategoricalColumn(codes=codes.astype(np.int64), levels=levels)


def _format_number(v: float) -> str:
    return f"{v:g}"


def _inner_design(term: RandomTerm, data: Dataset,
                  n: int) -> tuple[np.ndarray, tuple[str, ...]]:
    """Per-row inner design matrix (n, t) and its column labels."""
    parts: list[np.ndarray] = []
    labels: list[str] = []
    spanned_empty = term.inner_intercept
    if term.inner_intercept:
        parts.append(np.ones((n, 1)))
        labels.append("(Intercept)")
    for v in term.inner_variables:
        col = data.columns.get(v)
        if col is None:
            raise DesignError(f"unknown variable '{v}'")
        if isinstance(col, NumericColumn):
            parts.append(col.values.reshape(-1, 1))
            labels.append(v)
            continue
        full = not spanned_empty
        coding = _VarCoding(v, "categorical", col.levels, full=full)
        parts.append(coding.encode(col.codes))
        labels.extend(coding.labels())
        spanned_empty = True
    return np.hstack(parts), tuple(labels)


@dataclass(frozen=True)
class DesignMatrices:
    """Numeric design for one model: response y, fixed X, random Z."""

    y: np.ndarray
    X: np.ndarray
    Z: sps.csr_matrix
    x_labels: tuple[str, ...]
    z_labels: tuple[tuple[str, str, str], ...]  # (term, group level, inner)
    fixed_term_map: dict[str, list[int]]
    random_term_map: dict[str, list[int]]
    contrasts: dict[str, str]
    random_blocks: tuple[RandomBlock, ...]
    encoder: FixedEncoder
    ast: FormulaAst
    response_checksum: str
    cat_codes: dict[str, np.ndarray]  # categorical fixed var -> row codes

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]


def build_design(ast: FormulaAst, data: Dataset) -> DesignMatrices:
    """Build y, X and Z for a formula over a dataset.

    X uses treatment contrasts (first-appearing level as reference) with
    full-rank marginality coding for interactions; Z holds one indicator (or
    indicator-times-covariate) column per (group level, inner column) of each
    random term, as one contiguous block per term.
    """
    n = data.n_rows
    resp = data.columns.get(ast.response)
    if resp is None:
        raise DesignError(f"unknown response variable '{ast.response}'")
    if not isinstance(resp, NumericColumn):
        raise DesignError(f"response '{ast.response}' must be numeric")
    y = resp.values.astype(np.float64, copy=True)

    encoder = _build_fixed_encoder(ast, data)
    arrays: dict[str, np.ndarray] = {}
    for v in encoder.categorical_vars:
        arrays[v] = data.categorical(v).codes
    for v in encoder.numeric_vars:
        arrays[v] = data.numeric(v)
    X = encoder.encode(arrays, n)
    x_labels = tuple(encoder.labels())
    p = X.shape[1]
    if p == 0:
        raise DesignError("model has no fixed-effects columns (not even an "
                          "intercept)")
    if n > 0 and np.linalg.matrix_rank(X) < p:
        raise DesignError("rank-deficient X: fixed-effects columns are "
                          "linearly dependent")

    blocks: list[RandomBlock] = []
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    z_labels: list[tuple[str, str, str]] = []
    random_term_map: dict[str, list[int]] = {}
    offset = 0
    for term in ast.random_terms:
        grp = _group_codes(data, term.group)
        inner, inner_labels = _inner_design(term, data, n)
        t = inner.shape[1]
        block = RandomBlock(term=term, label=str(term),
                            group_levels=grp.levels,
                            inner_labels=inner_labels, col_offset=offset,
                            diagonal=term.covariance == DIAGONAL)
        blocks.append(block)
        base = offset + grp.codes * t
        for m in range(t):
            nz = np.nonzero(inner[:, m])[0]
            rows.append(nz)
            cols.append(base[nz] + m)
            vals.append(inner[nz, m])
        for g in grp.levels:
            for lab in inner_labels:
                z_labels.append((block.label, g, lab))
        random_term_map[block.label] = list(range(offset, offset + block.n_cols))
        offset += block.n_cols

    if rows:
        Z = sps.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, offset))
    else:
        Z = sps.csr_matrix((n, 0))

    checksum = hashlib.sha256(y.tobytes()).hexdigest()
    return DesignMatrices(
        y=y, X=X, Z=Z, x_labels=x_labels, z_labels=tuple(z_labels),
        fixed_term_map=encoder.term_map(), random_term_map=random_term_map,
        contrasts=dict(encoder.contrasts), random_blocks=tuple(blocks),
        encoder=encoder, ast=ast, response_checksum=checksum,
        cat_codes={v: arrays[v] for v in encoder.categorical_vars})
