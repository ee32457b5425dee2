"""Cohort data model, CSV ingestion and descriptive statistics.

A cohort is a rectangular numeric table whose columns are declared by a
schema of :class:`CovariateSpec` entries. Exactly one column is the binary
treatment indicator and exactly one is the binary outcome; every other column
is a covariate. Rows with missing or out-of-domain cells are rejected at load
time rather than imputed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    BadValue,
    EmptyCohort,
    MissingColumn,
    SchemaError,
    SingleArm,
    UnknownColumn,
)

BINARY = "binary"
CONTINUOUS = "continuous"
KINDS = (BINARY, CONTINUOUS)

COVARIATE = "covariate"
TREATMENT = "treatment"
OUTCOME = "outcome"
ROLES = (COVARIATE, TREATMENT, OUTCOME)

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class CovariateSpec:
    """Declaration of one cohort column.

    ``minimum`` is an optional inclusive lower bound checked at ingestion
    (the bundled glioma schema uses it for ``Age >= 18``).
    """

    name: str
    kind: str
    role: str = COVARIATE
    minimum: float | None = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SchemaError(f"invalid column name {self.name!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: role must be one of {ROLES}, got {self.role!r}")
        if self.role != COVARIATE and self.kind != BINARY:
            raise SchemaError(f"{self.role} column {self.name!r} must be binary")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.minimum is not None:
            d["minimum"] = self.minimum
        return d


def validate_schema(schema: Sequence[CovariateSpec]) -> tuple[CovariateSpec, ...]:
    schema = tuple(schema)
    names = [s.name for s in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate column names: {', '.join(dupes)}")
    for role in (TREATMENT, OUTCOME):
        count = sum(s.role == role for s in schema)
        if count != 1:
            raise SchemaError(f"schema must declare exactly one {role} column, found {count}")
    return schema


def schema_from_dicts(entries: Iterable[dict]) -> tuple[CovariateSpec, ...]:
    specs = []
    for e in entries:
        try:
            specs.append(CovariateSpec(
                name=e["name"],
                kind=e["kind"],
                role=e.get("role", COVARIATE),
                minimum=e.get("minimum"),
            ))
        except KeyError as exc:
            raise SchemaError(f"schema entry {e!r} lacks {exc.args[0]!r}") from None
    return validate_schema(specs)


def _parse_schema_text(text: str) -> tuple[CovariateSpec, ...]:
    # One column per line:  name: kind [, role] [, min=<number>]
    specs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SchemaError(f"schema line {lineno}: expected 'name: kind[, role][, min=x]'")
        name, rest = (p.strip() for p in line.split(":", 1))
        parts = [p.strip() for p in rest.split(",") if p.strip()]
        if not parts:
            raise SchemaError(f"schema line {lineno}: missing kind for {name!r}")
        entry: dict = {"name": name, "kind": parts[0]}
        for p in parts[1:]:
            if p.startswith(("min=", "minimum=")):
                try:
                    entry["minimum"] = float(p.split("=", 1)[1])
                except ValueError:
                    raise SchemaError(f"schema line {lineno}: bad minimum {p!r}") from None
            else:
                entry["role"] = p
        specs.append(entry)
    return schema_from_dicts(specs)


def parse_schema(text: str) -> tuple[CovariateSpec, ...]:
    """Parse a schema from JSON or from the line-oriented ``name: kind, role`` format."""
    stripped = text.lstrip()
    if stripped.startswith(("{", "[")):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON schema: {exc}") from None
        entries = doc["columns"] if isinstance(doc, dict) else doc
        return schema_from_dicts(entries)
    return _parse_schema_text(text)


def load_schema(path: str | os.PathLike) -> tuple[CovariateSpec, ...]:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def schema_to_json(schema: Sequence[CovariateSpec]) -> str:
    return json.dumps({"columns": [s.to_dict() for s in schema]}, indent=2) + "\n"


def glioma_schema() -> tuple[CovariateSpec, ...]:
    """Canonical schema of the 839-patient glioma cohort (Gender=1 is male)."""
    text = resources.files("psmatch").joinpath("data/glioma_schema.json").read_text("utf-8")
    return parse_schema(text)


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable validated cohort.

    ``data`` is an ``(n, len(schema))`` float array aligned with ``schema``.
    ``pair_ids`` is set on matched cohorts: rows sharing a pair id form one
    matched (treated, control) pair.
    """

    schema: tuple[CovariateSpec, ...]
    data: np.ndarray
    pair_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        schema = validate_schema(self.schema)
        data = np.array(self.data, dtype=float, copy=True)
        if data.ndim != 2 or data.shape[1] != len(schema):
            raise SchemaError(
                f"data shape {data.shape} does not match schema of {len(schema)} columns")
        if data.shape[0] == 0:
            raise EmptyCohort("cohort has no records")
        if not np.all(np.isfinite(data)):
            raise BadValue(int(np.argwhere(~np.isfinite(data))[0][0]), "?", "non-finite value")
        for j, spec in enumerate(schema):
            col = data[:, j]
            if spec.kind == BINARY:
                bad = np.flatnonzero((col != 0) & (col != 1))
                if bad.size:
                    raise BadValue(int(bad[0]), spec.name, f"binary value {col[bad[0]]!r} not in {{0, 1}}")
            if spec.minimum is not None:
                bad = np.flatnonzero(col < spec.minimum)
                if bad.size:
                    raise BadValue(int(bad[0]), spec.name, f"value {col[bad[0]]!r} below minimum {spec.minimum}")
        t = data[:, [s.role for s in schema].index(TREATMENT)]
        if data.shape[0] < 2 or t.min() == t.max():
            raise SingleArm("cohort needs at least two records and both treatment levels")
        data.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "data", data)
        if self.pair_ids is not None:
            pid = np.array(self.pair_ids, dtype=np.int64, copy=True)
            if pid.shape != (data.shape[0],):
                raise SchemaError("pair_ids must have one entry per record")
            pid.setflags(write=False)
            object.__setattr__(self, "pair_ids", pid)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.schema]

    @property
    def records(self) -> list[tuple[float, ...]]:
        return [tuple(row) for row in self.data.tolist()]

    def _spec_with_role(self, role: str) -> CovariateSpec:
        return next(s for s in self.schema if s.role == role)

    @property
    def treatment(self) -> CovariateSpec:
        return self._spec_with_role(TREATMENT)

    @property
    def outcome(self) -> CovariateSpec:
        return self._spec_with_role(OUTCOME)

    @property
    def covariates(self) -> list[CovariateSpec]:
        return [s for s in self.schema if s.role == COVARIATE]

    def spec(self, name: str) -> CovariateSpec:
        for s in self.schema:
            if s.name == name:
                return s
        raise UnknownColumn(name)

    def column(self, name: str) -> np.ndarray:
        self.spec(name)
        return self.data[:, self.names.index(name)]

    def treated_mask(self) -> np.ndarray:
        return self.column(self.treatment.name) == 1

    def covariate_matrix(self) -> np.ndarray:
        idx = [self.names.index(s.name) for s in self.covariates]
        return self.data[:, idx]

    def take(self, indices: Sequence[int], pair_ids: Sequence[int] | None = None) -> "Cohort":
        return Cohort(self.schema, self.data[np.asarray(indices, dtype=np.int64)], pair_ids)

    def with_roles(self, treatment: str | None = None, outcome: str | None = None) -> "Cohort":
        """Re-declare which columns act as treatment and outcome."""
        treatment = treatment or self.treatment.name
        outcome = outcome or self.outcome.name
        for name in (treatment, outcome):
            self.spec(name)
        schema = []
        for s in self.schema:
            role = TREATMENT if s.name == treatment else OUTCOME if s.name == outcome else COVARIATE
            schema.append(CovariateSpec(s.name, s.kind, role, s.minimum))
        return Cohort(tuple(schema), self.data, self.pair_ids)

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        if self.schema != other.schema or not np.array_equal(self.data, other.data):
            return False
        if self.pair_ids is None or other.pair_ids is None:
            return self.pair_ids is None and other.pair_ids is None
        return np.array_equal(self.pair_ids, other.pair_ids)

    __hash__ = None

    def to_csv(self, stream: IO[str] | None = None) -> str | None:
        """Write the cohort as CSV; returns the text when no stream is given."""
        out = stream if stream is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.names)
        kinds = [s.kind for s in self.schema]
        for row in self.data.tolist():
            writer.writerow([_format_cell(v, k) for v, k in zip(row, kinds)])
        if stream is None:
            return out.getvalue()
        return None


def _format_cell(value: float, kind: str) -> str:
    if kind == BINARY:
        return str(int(value))
    if value == int(value) and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def _open_text(source) -> tuple[IO[str], str | None, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8-sig", newline=""), os.fspath(source), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig")), None, False
    if isinstance(source, io.TextIOBase):
        return source, getattr(source, "name", None), False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline=""), getattr(source, "name", None), False


def load_cohort(source, schema: Sequence[CovariateSpec]) -> Cohort:
    """Read a CSV (path, bytes, or text/byte stream) and validate it against ``schema``.

    Row numbers in :class:`BadValue` errors are file line numbers (the header
    is line 1). Extra CSV columns not named in the schema are ignored.
    """
    schema = validate_schema(schema)
    fh, name, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyCohort(f"{name or 'input'} is empty")
        header = [h.strip() for h in header]
        positions = []
        for spec in schema:
            if spec.name not in header:
                raise MissingColumn(spec.name, name)
            positions.append(header.index(spec.name))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise BadValue(lineno, "*", f"expected {len(header)} cells, found {len(row)}", name)
            values = []
            for spec, pos in zip(schema, positions):
                cell = row[pos].strip()
                if cell.lower() in _MISSING_TOKENS:
                    raise BadValue(lineno, spec.name, "missing value", name)
                try:
                    v = float(cell)
                except ValueError:
                    raise BadValue(lineno, spec.name, f"cannot parse {cell!r} as a number", name) from None
                if not math.isfinite(v):
                    raise BadValue(lineno, spec.name, f"non-finite value {cell!r}", name)
                if spec.kind == BINARY and v not in (0.0, 1.0):
                    raise BadValue(lineno, spec.name, f"binary value {cell!r} not in {{0, 1}}", name)
                if spec.minimum is not None and v < spec.minimum:
                    raise BadValue(lineno, spec.name, f"value {cell} below minimum {spec.minimum:g}", name)
                values.append(v)
            rows.append(values)
    finally:
        if owned:
            fh.close()
    if not rows:
        raise EmptyCohort(f"{name or 'input'} has a header but no records")
    return Cohort(schema, np.array(rows, dtype=float))


# -- descriptive statistics ---------------------------------------------------

def _mean_sd(x: np.ndarray) -> tuple[float, float]:
    # fsum keeps the result independent of record order
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(x.tolist()) / n
    if n == 1:
        return mean, math.nan
    var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class StratumStats:
    n: int
    count: int | None = None
    percent: float | None = None
    mean: float | None = None
    sd: float | None = None

    def formatted(self) -> str:
        if self.count is not None:
            return f"{self.count} ({self.percent:.2f})"
        return f"{self.mean:.2f} ({self.sd:.2f})"


@dataclass(frozen=True)
class DescriptiveEntry:
    name: str
    kind: str
    stats: tuple[StratumStats, ...]


@dataclass(frozen=True)
class DescriptiveSummary:
    stratify_by: str
    strata: tuple[str, ...]
    sizes: tuple[int, ...]
    entries: tuple[DescriptiveEntry, ...]

    def entry(self, name: str) -> DescriptiveEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise UnknownColumn(name)

    def get(self, name: str, stratum: str = "overall") -> StratumStats:
        return self.entry(name).stats[self.strata.index(stratum)]

    def to_dict(self) -> dict:
        return {
            "stratify_by": self.stratify_by,
            "strata": [{"label": s, "n": n} for s, n in zip(self.strata, self.sizes)],
            "variables": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "stats": {
                        label: ({"count": s.count, "percent": s.percent} if e.kind == BINARY
                                else {"mean": s.mean, "sd": s.sd})
                        for label, s in zip(self.strata, e.stats)
                    },
                }
                for e in self.entries
            ],
        }

    def format_table(self) -> str:
        head = ["Variable"] + [f"{s} (N = {n})" for s, n in zip(self.strata, self.sizes)]
        rows = []
        for e in self.entries:
            label = f"{e.name} = 1 (%)" if e.kind == BINARY else f"{e.name}, mean (SD)"
            rows.append([label] + [s.formatted() for s in e.stats])
        return _render_columns(head, rows)


def _render_columns(head: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    rule = "-" * len(fmt(head))
    return "\n".join([rule, fmt(head), rule] + [fmt(r) for r in rows] + [rule])


def describe(cohort: Cohort, stratify_by: str) -> DescriptiveSummary:
    """Counts/percentages of binary columns and mean/SD of continuous ones.

    Strata are the whole cohort plus each level of the binary column
    ``stratify_by``; every column except the stratifier is summarised, in
    schema order. SDs use the n-1 denominator.
    """
    spec = cohort.spec(stratify_by)
    if spec.kind != BINARY:
        raise SchemaError(f"stratifier {stratify_by!r} must be a binary column")
    strat = cohort.column(stratify_by)
    masks = [np.ones(cohort.n, dtype=bool), strat == 0, strat == 1]
    labels = ("overall", f"{stratify_by}=0", f"{stratify_by}=1")
    entries = []
    for j, s in enumerate(cohort.schema):
        if s.name == stratify_by:
            continue
        col = cohort.data[:, j]
        stats = []
        for m in masks:
            x = col[m]
            if s.kind == BINARY:
                count = int(np.count_nonzero(x == 1))
                pct = 100.0 * count / len(x) if len(x) else math.nan
                stats.append(StratumStats(n=len(x), count=count, percent=pct))
            else:
                mean, sd = _mean_sd(x)
                stats.append(StratumStats(n=len(x), mean=mean, sd=sd))
        entries.append(DescriptiveEntry(s.name, s.kind, tuple(stats)))
    return DescriptiveSummary(
        stratify_by=stratify_by,
        strata=labels,
        sizes=tuple(int(m.sum()) for m in masks),
        entries=tuple(entries),
    )
