"""Schema declaration, dataset ingestion, and design-vector construction.

Columns are declared through :class:`VariableSpec` (role: random/fixed; kind:
ordinal/nominal/continuous). Continuous columns are stored standardized and
the original scale is kept so completed datasets can be written back out.
Ordinal and nominal values are integer levels ``1..k``; levels are validated
on load.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    MissingFixedValue,
    NonNumericContinuous,
    OutOfRangeLevel,
    UnknownColumn,
    UnresolvedMissing,
)

ORDINAL = "ordinal"
NOMINAL = "nominal"
CONTINUOUS = "continuous"
RANDOM = "random"
FIXED = "fixed"

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class VariableSpec:
    """Declares one column: its name, role, kind, and level count.

    ``levels`` is the number of ordinal levels or nominal categories and must
    be >= 2; it is ignored for continuous variables.
    """

    name: str
    role: str
    kind: str
    levels: int | None = None

    def __post_init__(self):
        if self.role not in (RANDOM, FIXED):
            raise ConfigError(f"{self.name}: role must be 'random' or 'fixed'")
        if self.kind not in (ORDINAL, NOMINAL, CONTINUOUS):
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind in (ORDINAL, NOMINAL):
            if self.levels is None or self.levels < 2:
                raise ConfigError(f"{self.name}: {self.kind} needs levels >= 2")

    @property
    def is_discrete(self) -> bool:
        return self.kind in (ORDINAL, NOMINAL)


def load_schema(path) -> list[VariableSpec]:
    """Read a schema sidecar file (TOML or JSON) into a VariableSpec list."""
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        doc = json.loads(text.decode("utf-8"))
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text.decode("utf-8"))
    cols = doc.get("columns")
    if not isinstance(cols, list) or not cols:
        raise ConfigError("schema file needs a non-empty 'columns' list")
    out = []
    for c in cols:
        out.append(
            VariableSpec(
                name=c["name"],
                role=c["role"],
                kind=c["kind"],
                levels=c.get("levels"),
            )
        )
    return out


class MixedDataset:
    """Column-typed data with a missingness mask on random variables.

    Continuous columns (either role) are stored standardized: the sample mean
    is removed and the sample standard deviation (divisor n-1), computed over
    observed entries, is divided out. ``standardization`` maps column name to
    the recorded ``(mean, sd)``.

    Values are float arrays; missing cells hold NaN and are flagged in
    ``mask`` (True = missing). Fixed columns are complete by construction.
    """

    def __init__(self, schema: list[VariableSpec], columns: dict[str, np.ndarray],
                 mask: dict[str, np.ndarray], standardization: dict[str, tuple[float, float]]):
        self.schema = list(schema)
        self.columns = columns
        self.mask = mask
        self.standardization = standardization
        self.n = len(next(iter(columns.values()))) if columns else 0
        self._by_name = {v.name: v for v in self.schema}

    # -- construction ----------------------------------------------------

    @classmethod
    def from_arrays(cls, schema: list[VariableSpec], raw: dict[str, np.ndarray],
                    standardize: bool = True) -> "MixedDataset":
        """Build a dataset from raw (original-scale) column arrays.

        NaN marks missing cells. Discrete levels are validated against the
        schema; continuous columns are standardized unless ``standardize`` is
        False (used when re-wrapping already standardized data).
        """
        names = {v.name for v in schema}
        for name in raw:
            if name not in names:
                raise UnknownColumn(name)
        columns: dict[str, np.ndarray] = {}
        mask: dict[str, np.ndarray] = {}
        standardization: dict[str, tuple[float, float]] = {}
        n = None
        for spec in schema:
            if spec.name not in raw:
                raise UnknownColumn(f"missing column: {spec.name}")
            col = np.asarray(raw[spec.name], dtype=float).copy()
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise ConfigError(f"{spec.name}: ragged column length")
            miss = np.isnan(col)
            if spec.role == FIXED and miss.any():
                raise MissingFixedValue(spec.name)
            if spec.is_discrete:
                obs = col[~miss]
                if obs.size and (np.any(obs != np.round(obs)) or np.any(obs < 1)
                                 or np.any(obs > spec.levels)):
                    raise OutOfRangeLevel(
                        f"{spec.name}: values must be integers in 1..{spec.levels}")
            else:
                if standardize:
                    obs = col[~miss]
                    mean = float(obs.mean()) if obs.size else 0.0
                    sd = float(obs.std(ddof=1)) if obs.size > 1 else 1.0
                    if sd == 0.0:
                        raise NonNumericContinuous(
                            f"{spec.name}: zero variance, cannot standardize")
                    col = (col - mean) / sd
                    standardization[spec.name] = (mean, sd)
                else:
                    standardization.setdefault(spec.name, (0.0, 1.0))
            columns[spec.name] = col
            mask[spec.name] = miss
        return cls(schema, columns, mask, standardization)

    # -- lookups ---------------------------------------------------------

    def spec(self, name: str) -> VariableSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownColumn(name) from None

    def names(self, role=None, kind=None) -> list[str]:
        return [v.name for v in self.schema
                if (role is None or v.role == role) and (kind is None or v.kind == kind)]

    def matrix(self, names: list[str]) -> np.ndarray:
        """Column-stacked values for the given names, shape (n, len(names))."""
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.columns[name] for name in names])

    def mask_matrix(self, names: list[str]) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0), dtype=bool)
        return np.column_stack([self.mask[name] for name in names])

    def destandardize(self, name: str, values: np.ndarray) -> np.ndarray:
        mean, sd = self.standardization.get(name, (0.0, 1.0))
        return np.asarray(values) * sd + mean

    def content_hash(self) -> str:
        """Stable hash of schema and cell values, for caching keyed files."""
        h = hashlib.blake2b(digest_size=16)
        for spec in self.schema:
            h.update(f"{spec.name}|{spec.role}|{spec.kind}|{spec.levels}".encode())
            h.update(np.ascontiguousarray(self.columns[spec.name]).tobytes())
        return h.hexdigest()

    # -- i/o ---------------------------------------------------------------

    def write_csv(self, path, completed: dict[str, np.ndarray] | None = None) -> None:
        """Write the dataset on the original scale; ``completed`` overrides columns.

        Override arrays are taken to be on the standardized (internal) scale
        for continuous columns and are destandardized on the way out.
        """
        names = [v.name for v in self.schema]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            cols = []
            for spec in self.schema:
                col = (completed or {}).get(spec.name, self.columns[spec.name])
                col = np.asarray(col, dtype=float)
                if spec.kind == CONTINUOUS:
                    col = self.destandardize(spec.name, col)
                cols.append(col)
            for i in range(self.n):
                row = []
                for spec, col in zip(self.schema, cols):
                    v = col[i]
                    if np.isnan(v):
                        row.append("NA")
                    elif spec.is_discrete:
                        row.append(str(int(round(v))))
                    else:
                        row.append(repr(float(v)))
                w.writerow(row)


def load_csv(path, schema: list[VariableSpec]) -> MixedDataset:
    """Load an RFC-4180 CSV whose header matches the schema names.

    Missing cells are '' or 'NA' (anything else in a numeric field is an
    error). Discrete values are validated against declared ranges; continuous
    columns come back standardized with the (mean, sd) recorded.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = list(reader)

    by_name = {v.name: v for v in schema}
    for name in header:
        if name not in by_name:
            raise UnknownColumn(name)
    for spec in schema:
        if spec.name not in header:
            raise UnknownColumn(f"missing column: {spec.name}")

    idx = {name: header.index(name) for name in by_name}
    raw = {}
    for spec in schema:
        j = idx[spec.name]
        col = np.empty(len(rows))
        for i, row in enumerate(rows):
            cell = row[j].strip()
            if cell in MISSING_TOKENS:
                if spec.role == FIXED:
                    raise MissingFixedValue(f"{spec.name}, row {i + 1}")
                col[i] = np.nan
                continue
            if spec.is_discrete:
                try:
                    val = int(cell)
                except ValueError:
                    raise OutOfRangeLevel(
                        f"{spec.name}, row {i + 1}: {cell!r} is not an integer level"
                    ) from None
                if not 1 <= val <= spec.levels:
                    raise OutOfRangeLevel(
                        f"{spec.name}, row {i + 1}: {val} not in 1..{spec.levels}")
                col[i] = val
            else:
                try:
                    col[i] = float(cell)
                except ValueError:
                    raise NonNumericContinuous(f"{spec.name}, row {i + 1}: {cell!r}") from None
        raw[spec.name] = col
    return MixedDataset.from_arrays(schema, raw)


# -- design vectors -------------------------------------------------------

@dataclass(frozen=True)
class Intercept:
    def __str__(self):
        return "1"


@dataclass(frozen=True)
class DummyOf:
    var: str
    level: int

    def __str__(self):
        return f"{self.var}=={self.level}"


@dataclass(frozen=True)
class LinearOf:
    var: str

    def __str__(self):
        return self.var


@dataclass(frozen=True)
class InteractionOf:
    left: object
    right: object

    def __str__(self):
        return f"({self.left})*({self.right})"


@dataclass
class DesignConfig:
    """Ordered list of design terms; the first term is always the intercept."""

    terms: list = field(default_factory=lambda: [Intercept()])

    def __post_init__(self):
        if not self.terms or not isinstance(self.terms[0], Intercept):
            raise ConfigError("first design term must be the intercept")

    @property
    def k(self) -> int:
        return len(self.terms)

    def validate(self, schema: list[VariableSpec]) -> None:
        by_name = {v.name: v for v in schema}

        def check(term):
            if isinstance(term, Intercept):
                return
            if isinstance(term, InteractionOf):
                check(term.left)
                check(term.right)
                return
            if term.var not in by_name:
                raise UnknownColumn(term.var)
            spec = by_name[term.var]
            if spec.role == RANDOM and spec.kind != NOMINAL:
                raise ConfigError(
                    f"{term.var}: ordinal/continuous random variables are kernel "
                    "responses and cannot appear in the design")
            if isinstance(term, DummyOf):
                if not spec.is_discrete:
                    raise ConfigError(f"{term.var}: dummy coding needs a discrete variable")
                if not 1 <= term.level <= spec.levels:
                    raise OutOfRangeLevel(f"{term.var}: level {term.level}")
            elif isinstance(term, LinearOf):
                if spec.kind == NOMINAL:
                    raise ConfigError(f"{term.var}: nominal variables cannot be linear terms")

        for t in self.terms:
            check(t)

    def labels(self) -> list[str]:
        return [str(t) for t in self.terms]


def default_design(schema: list[VariableSpec], ordinal_fixed_linear: bool = False) -> DesignConfig:
    """Intercept + dummies (reference level 1 dropped) for every nominal random
    variable and every discrete fixed variable, + linear terms for continuous
    fixed variables.

    ``ordinal_fixed_linear`` switches ordinal fixed variables from dummy to
    linear coding.
    """
    terms: list = [Intercept()]
    for spec in schema:
        if spec.role == RANDOM and spec.kind == NOMINAL:
            terms.extend(DummyOf(spec.name, l) for l in range(2, spec.levels + 1))
    for spec in schema:
        if spec.role != FIXED:
            continue
        if spec.kind == ORDINAL:
            if ordinal_fixed_linear:
                terms.append(LinearOf(spec.name))
            else:
                terms.extend(DummyOf(spec.name, l) for l in range(2, spec.levels + 1))
        elif spec.kind == NOMINAL:
            terms.extend(DummyOf(spec.name, l) for l in range(2, spec.levels + 1))
        else:
            terms.append(LinearOf(spec.name))
    return DesignConfig(terms)


def _eval_term(term, get):
    if isinstance(term, Intercept):
        return 1.0
    if isinstance(term, DummyOf):
        return 1.0 if get(term.var) == term.level else 0.0
    if isinstance(term, LinearOf):
        return get(term.var)
    if isinstance(term, InteractionOf):
        return _eval_term(term.left, get) * _eval_term(term.right, get)
    raise ConfigError(f"unknown design term {term!r}")


def build_design_vector(row: dict, config: DesignConfig) -> np.ndarray:
    """Evaluate the design terms on one observation (a name -> value mapping).

    Raises UnresolvedMissing when a referenced variable is absent or NaN: the
    caller must supply a current imputed value for every random variable the
    design touches.
    """

    def get(name):
        if name not in row:
            raise UnresolvedMissing(name)
        v = row[name]
        if v is None or (isinstance(v, float) and np.isnan(v)):
            raise UnresolvedMissing(name)
        return float(v)

    return np.array([_eval_term(t, get) for t in config.terms])


def _eval_term_matrix(term, cols: dict[str, np.ndarray], n: int) -> np.ndarray:
    if isinstance(term, Intercept):
        return np.ones(n)
    if isinstance(term, DummyOf):
        return (cols[term.var] == term.level).astype(float)
    if isinstance(term, LinearOf):
        return np.asarray(cols[term.var], dtype=float)
    if isinstance(term, InteractionOf):
        return _eval_term_matrix(term.left, cols, n) * _eval_term_matrix(term.right, cols, n)
    raise ConfigError(f"unknown design term {term!r}")


def design_matrix(cols: dict[str, np.ndarray], config: DesignConfig, n: int) -> np.ndarray:
    """Stacked design vectors, shape (n, k). ``cols`` holds current values
    (observed or imputed) for every variable the design references."""
    out = np.empty((n, config.k))
    for j, term in enumerate(config.terms):
        out[:, j] = _eval_term_matrix(term, cols, n)
    return out


def design_vars(config: DesignConfig) -> set[str]:
    """Names of all variables the design references."""
    out: set[str] = set()

    def walk(term):
        if isinstance(term, InteractionOf):
            walk(term.left)
            walk(term.right)
        elif isinstance(term, (DummyOf, LinearOf)):
            out.add(term.var)

    for t in config.terms:
        walk(t)
    return out
