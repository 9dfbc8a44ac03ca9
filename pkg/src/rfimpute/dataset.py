"""Survey schema, validity cleaning, encoding, missingness injection and splitting.

Cells are integers. Missingness lives in a boolean mask alongside the values
(``True`` = missing); the value stored under a missing cell is always 0 and
carries no meaning.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError, RangeError

MISSING_TOKEN = "NA"

ORDINAL = "ordinal"
CATEGORICAL = "categorical"
BINARY = "binary"
KINDS = (ORDINAL, CATEGORICAL, BINARY)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    lower: int
    upper: int
    description: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")
        if self.lower > self.upper:
            raise ConfigError(f"{self.name}: lower {self.lower} > upper {self.upper}")
        if self.kind == BINARY and (self.lower, self.upper) != (0, 1):
            raise ConfigError(f"{self.name}: binary variables take values 0/1")

    @property
    def n_categories(self) -> int:
        return self.upper - self.lower + 1

    @property
    def code_width(self) -> int:
        if self.kind != CATEGORICAL:
            return 0
        return max(1, math.ceil(math.log2(self.n_categories)))

    @property
    def width(self) -> int:
        """Number of encoded columns."""
        return self.code_width if self.kind == CATEGORICAL else 1

    @property
    def is_regression_target(self) -> bool:
        return self.kind == ORDINAL


@dataclass(frozen=True)
class Schema:
    variables: tuple[VariableSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate variable names in schema: {names}")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __len__(self):
        return len(self.variables)

    def __contains__(self, name):
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown variable {name!r}; schema has {self.names}") from None

    def spec(self, name: str) -> VariableSpec:
        return self.variables[self.index(name)]

    @property
    def encoded_width(self) -> int:
        return sum(v.width for v in self.variables)

    def column_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for v in self.variables:
            out[v.name] = slice(start, start + v.width)
            start += v.width
        return out

    def encoded_columns(self, names: Sequence[str]) -> list[int]:
        slices = self.column_slices()
        cols = []
        for name in names:
            s = slices[self.spec(name).name]
            cols.extend(range(s.start, s.stop))
        return cols

    @property
    def encoded_names(self) -> list[str]:
        out = []
        for v in self.variables:
            if v.kind == CATEGORICAL:
                out.extend(f"{v.name}[{b}]" for b in range(v.code_width))
            else:
                out.append(v.name)
        return out

    def to_dict(self) -> dict:
        return {"variables": [asdict(v) for v in self.variables]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(tuple(VariableSpec(**v) for v in d["variables"]))


DEFAULT_SCHEMA = Schema((
    VariableSpec("Province", CATEGORICAL, 1, 9, "Province (location)"),
    VariableSpec("Age", ORDINAL, 12, 50, "Age of mother"),
    VariableSpec("Edu", ORDINAL, 0, 13, "Education level"),
    VariableSpec("Gra", ORDINAL, 1, 12, "Gravidity"),
    VariableSpec("Par", ORDINAL, 0, 9, "Parity"),
    VariableSpec("FathAge", ORDINAL, 12, 90, "Father's age"),
    VariableSpec("HIV", BINARY, 0, 1, "HIV status"),
    VariableSpec("RPR", BINARY, 0, 1, "RPR test status"),
    VariableSpec("Race", CATEGORICAL, 0, 5, "Race"),
))


# --------------------------------------------------------------------------
# Dataset

@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64, copy=True)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, len(self.schema))
        missing = np.array(self.missing, dtype=bool, copy=True).reshape(values.shape)
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise DataError(
                f"rows must have {len(self.schema)} cells, got shape {values.shape}"
            )
        values[missing] = 0
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @classmethod
    def complete(cls, schema: Schema, values) -> "Dataset":
        values = np.asarray(values, dtype=np.int64)
        return cls(schema, values, np.zeros(values.shape, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.missing, other.missing)
        )

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    @property
    def is_complete(self) -> bool:
        return not self.missing.any()

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.schema, self.values[rows], self.missing[rows])

    def complete_rows(self) -> "Dataset":
        return self.take(np.flatnonzero(~self.missing.any(axis=1)))

    def with_missing(self, missing) -> "Dataset":
        return Dataset(self.schema, self.values, missing)

    def replace(self, values=None, missing=None) -> "Dataset":
        return Dataset(
            self.schema,
            self.values if values is None else values,
            self.missing if missing is None else missing,
        )


# --------------------------------------------------------------------------
# Validity rules

@dataclass(frozen=True)
class Violation:
    rule: str
    variables: tuple[str, ...]
    message: str

    def __str__(self):
        return self.message


# lower bounds implied by the logical rules, where stricter than the declared range
_RULE_LOWER = {"FathAge": 13}


def valid_bounds(spec: VariableSpec) -> tuple[int, int]:
    """Smallest and largest value passing every rule that involves one variable."""
    return max(spec.lower, _RULE_LOWER.get(spec.name, spec.lower)), spec.upper


def _violation_masks(values: np.ndarray, missing: np.ndarray, schema: Schema):
    """Yield (rule, variables, message, row_mask) for every rule that applies."""
    names = schema.names
    obs = ~missing
    col = {n: values[:, i] for i, n in enumerate(names)}
    seen = {n: np.zeros(len(values), dtype=bool) for n in names}
    out = []

    def add(rule, vars_, message, mask):
        for v in vars_:
            seen[v] |= mask
        out.append((rule, tuple(vars_), message, mask))

    for i, n in enumerate(names):
        add("negative", (n,), f"{n} negative", obs[:, i] & (col[n] < 0))
    if "Age" in names:
        i = names.index("Age")
        m = obs[:, i] & (col["Age"] >= 0) & ((col["Age"] < 12) | (col["Age"] > 50))
        add("age_range", ("Age",), "age out of 12-50", m)
    if "FathAge" in names:
        i = names.index("FathAge")
        m = obs[:, i] & (col["FathAge"] >= 0) & (col["FathAge"] <= 12)
        add("father_age", ("FathAge",), "father's age not greater than 12", m)
    if "Gra" in names and "Par" in names:
        gi, pi = names.index("Gra"), names.index("Par")
        m = obs[:, gi] & obs[:, pi] & (col["Gra"] < col["Par"])
        add("gravidity_parity", ("Gra", "Par"), "gravidity<parity", m)
    if "Edu" in names:
        i = names.index("Edu")
        add("education_max", ("Edu",), "education above 13", obs[:, i] & (col["Edu"] > 13))
    for i, spec in enumerate(schema.variables):
        n = spec.name
        m = obs[:, i] & ~seen[n] & ((col[n] < spec.lower) | (col[n] > spec.upper))
        add("range", (n,), f"{n} out of {spec.lower}-{spec.upper}", m)
    return out


def validate_record(record, schema: Schema = DEFAULT_SCHEMA, missing=None) -> list[Violation]:
    """Return every rule the record violates; missing cells are skipped."""
    values = np.asarray(record, dtype=np.int64).reshape(1, -1)
    if values.shape[1] != len(schema):
        raise DataError(f"record has {values.shape[1]} cells, schema has {len(schema)}")
    miss = (np.zeros(values.shape, dtype=bool) if missing is None
            else np.asarray(missing, dtype=bool).reshape(1, -1))
    return [Violation(rule, vars_, msg)
            for rule, vars_, msg, m in _violation_masks(values, miss, schema) if m[0]]


def violation_counts(dataset: Dataset) -> dict[str, int]:
    """Number of violations per rule (per-variable rules summed over variables)."""
    counts: dict[str, int] = {}
    for rule, _, _, m in _violation_masks(dataset.values, dataset.missing, dataset.schema):
        counts[rule] = counts.get(rule, 0) + int(m.sum())
    return counts


def clean(dataset: Dataset) -> Dataset:
    """Flag every cell taking part in a violated rule as missing.

    Joint rules (gravidity below parity) flag both cells.
    """
    missing = dataset.missing.copy()
    for _, vars_, _, m in _violation_masks(dataset.values, dataset.missing, dataset.schema):
        for v in vars_:
            missing[m, dataset.schema.index(v)] = True
    return dataset.with_missing(missing)


# --------------------------------------------------------------------------
# Encoding

@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    schema: Schema
    values: np.ndarray   # float, NaN where missing
    mask: np.ndarray     # True where missing

    @property
    def n_rows(self):
        return self.values.shape[0]


def _bits(codes: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.float64)


def encode_values(values: np.ndarray, schema: Schema) -> np.ndarray:
    """Encode a complete integer array (no range checks)."""
    values = np.asarray(values)
    out = np.empty((values.shape[0], schema.encoded_width))
    for j, (spec, s) in enumerate(zip(schema.variables, schema.column_slices().values())):
        v = values[:, j]
        if spec.kind == CATEGORICAL:
            out[:, s] = _bits(v.astype(np.int64) - spec.lower, spec.code_width)
        else:
            span = spec.upper - spec.lower
            out[:, s.start] = (v - spec.lower) / span if span else 0.0
    return out


def encode(dataset: Dataset) -> EncodedMatrix:
    """Min-max scale ordinals/binaries to [0,1] and binary-code categoricals."""
    schema = dataset.schema
    for j, spec in enumerate(schema.variables):
        v = dataset.values[:, j]
        bad = ~dataset.missing[:, j] & ((v < spec.lower) | (v > spec.upper))
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise RangeError(r, spec.name, int(v[r]), spec.lower, spec.upper)
    filled = np.where(dataset.missing, np.array([s.lower for s in schema.variables]),
                      dataset.values)
    values = encode_values(filled, schema)
    mask = np.zeros(values.shape, dtype=bool)
    for j, s in enumerate(schema.column_slices().values()):
        mask[:, s] = dataset.missing[:, [j]]
    values[mask] = np.nan
    return EncodedMatrix(schema, values, mask)


def _valid_codes(spec: VariableSpec) -> np.ndarray:
    return _bits(np.arange(spec.n_categories), spec.code_width)


def decode_category(bits: np.ndarray, spec: VariableSpec) -> np.ndarray:
    """Map bit groups (rows x code_width, values in [0,1]) to the Hamming-nearest
    declared category; ties go to the smallest category."""
    hard = (np.asarray(bits, dtype=np.float64) >= 0.5).astype(np.float64)
    dist = np.abs(hard[:, None, :] - _valid_codes(spec)[None, :, :]).sum(axis=2)
    return np.argmin(dist, axis=1) + spec.lower


def decode_variable(col: np.ndarray, spec: VariableSpec) -> np.ndarray:
    """Decode one variable's encoded column(s) to integers in range."""
    if spec.kind == CATEGORICAL:
        return decode_category(col.reshape(len(col), -1), spec)
    col = np.asarray(col, dtype=np.float64).reshape(-1)
    x = np.floor(col * (spec.upper - spec.lower) + spec.lower + 0.5)
    return np.clip(x, spec.lower, spec.upper).astype(np.int64)


def decode_values(values: np.ndarray, schema: Schema) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.empty((values.shape[0], len(schema)), dtype=np.int64)
    for j, (spec, s) in enumerate(zip(schema.variables, schema.column_slices().values())):
        out[:, j] = decode_variable(np.nan_to_num(values[:, s], nan=0.0), spec)
    return out


def decode(encoded: EncodedMatrix) -> Dataset:
    schema = encoded.schema
    missing = np.zeros((encoded.n_rows, len(schema)), dtype=bool)
    for j, s in enumerate(schema.column_slices().values()):
        missing[:, j] = encoded.mask[:, s].any(axis=1)
    return Dataset(schema, decode_values(encoded.values, schema), missing)


# --------------------------------------------------------------------------
# Missingness injection

@dataclass(frozen=True)
class MissingnessPlan:
    mechanism: str = "MCAR"
    target_variables: tuple[str, ...] = ("Age",)
    rate: float = 0.1
    mar_driver: str | None = None
    joint: bool = False  # remove all targets of a selected row together

    def __post_init__(self):
        object.__setattr__(self, "target_variables", tuple(self.target_variables))
        if self.mechanism not in ("MCAR", "MAR"):
            raise ConfigError(f"unknown missingness mechanism {self.mechanism!r}")
        if not self.target_variables:
            raise ConfigError("missingness plan needs at least one target variable")
        if not 0.0 < self.rate < 1.0:
            raise ConfigError(f"missingness rate must lie in (0, 1), got {self.rate}")
        if self.mechanism == "MAR":
            if self.mar_driver is None:
                raise ConfigError("MAR plan requires mar_driver")
            if self.mar_driver in self.target_variables:
                raise ConfigError("mar_driver must not be a target variable")


def _removal_probability(dataset: Dataset, plan: MissingnessPlan) -> np.ndarray:
    n = dataset.n_rows
    if plan.mechanism == "MCAR":
        return np.full(n, plan.rate)
    j = dataset.schema.index(plan.mar_driver)
    obs = ~dataset.missing[:, j]
    r = np.full(n, 0.5)
    if obs.any():
        r[obs] = (rankdata(dataset.values[obs, j]) - 0.5) / obs.sum()
    # mean of 2*r over observed rows is 1, so the expected rate is preserved
    return np.minimum(1.0, 2.0 * plan.rate * r)


def inject_missing(dataset: Dataset, plan: MissingnessPlan, seed: int) -> Dataset:
    """Remove target cells at random per the plan; deterministic per seed."""
    rng = np.random.default_rng(seed)
    cols = [dataset.schema.index(v) for v in plan.target_variables]
    p = _removal_probability(dataset, plan)
    if plan.joint:
        u = rng.random(dataset.n_rows)
        remove = np.repeat((u < p)[:, None], len(cols), axis=1)
    else:
        u = rng.random((dataset.n_rows, len(cols)))
        remove = u < p[:, None]
    missing = dataset.missing.copy()
    missing[:, cols] |= remove
    return dataset.with_missing(missing)


def removed_count(before: Dataset, after: Dataset) -> int:
    return int((after.missing & ~before.missing).sum())


# --------------------------------------------------------------------------
# Splitting

SPLIT_NAMES = ("train", "validation", "test", "experiment")


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n rows; ties go to earlier sets."""
    f = np.asarray(fractions, dtype=np.float64)
    if np.any(f < 0) or not np.isclose(f.sum(), 1.0):
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {list(fractions)}")
    raw = f * n
    sizes = np.floor(raw + 1e-9).astype(int)
    rem = raw - sizes
    order = sorted(range(len(f)), key=lambda i: (-round(rem[i], 9), i))
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def split(dataset: Dataset, fractions=(0.25, 0.25, 0.25, 0.25), seed: int = 0):
    """Seeded disjoint row partition into (train, validation, test, experiment)."""
    if len(fractions) != 4:
        raise ConfigError("split needs four fractions (train, validation, test, experiment)")
    n_parts = int(np.count_nonzero(np.asarray(fractions) > 0))
    if dataset.n_rows < n_parts:
        raise DataError(f"{dataset.n_rows} rows cannot fill {n_parts} partitions")
    sizes = split_sizes(dataset.n_rows, fractions)
    perm = np.random.default_rng(seed).permutation(dataset.n_rows)
    bounds = np.cumsum([0] + sizes)
    return tuple(dataset.take(np.sort(perm[a:b])) for a, b in zip(bounds[:-1], bounds[1:]))


# --------------------------------------------------------------------------
# Synthetic survey generator

@dataclass(frozen=True)
class SyntheticParams:
    age_shape: float = 4.0
    age_scale: float = 3.0
    age_offset: float = 13.0
    edu_mean: float = 9.4
    edu_age_slope: float = 0.25
    edu_noise: float = 2.0
    gravidity_rate_per_year: float = 0.1
    gravidity_age_onset: float = 14.0
    # P(gravidity - parity = 0, 1, 2)
    parity_gap_probs: tuple[float, ...] = (0.1, 0.85, 0.05)
    father_offset: float = 4.0
    father_noise: float = 3.5
    province_probs: tuple[float, ...] = (0.06, 0.14, 0.04, 0.21, 0.12, 0.08, 0.10, 0.12, 0.13)
    race_probs: tuple[float, ...] = (0.06, 0.72, 0.10, 0.06, 0.04, 0.02)
    race_province_affinity: float = 0.3
    rpr_intercept: float = -3.0
    rpr_province_bit_coef: tuple[float, ...] = (0.8, -0.5, 0.6, 0.0)
    # planted HIV model on encoded columns
    hiv_intercept: float = -1.2
    hiv_age_coef: float = 4.0
    hiv_edu_coef: float = -2.5
    hiv_province_bit_coef: tuple[float, ...] = (0.6, -0.4, 0.5, 0.3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def hiv_coefficients(self, schema: Schema = DEFAULT_SCHEMA) -> dict:
        """Planted HIV logistic coefficients keyed by encoded column name."""
        coef = {name: 0.0 for name in schema.encoded_names if name != "HIV"}
        coef["Age"] = self.hiv_age_coef
        coef["Edu"] = self.hiv_edu_coef
        for b, c in enumerate(self.hiv_province_bit_coef):
            coef[f"Province[{b}]"] = c
        return {"intercept": self.hiv_intercept, "coefficients": coef}


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def hiv_logit(values: np.ndarray, params: SyntheticParams, schema: Schema = DEFAULT_SCHEMA):
    enc = encode_values(values, schema)
    cols = schema.column_slices()
    z = (params.hiv_intercept
         + params.hiv_age_coef * enc[:, cols["Age"].start]
         + params.hiv_edu_coef * enc[:, cols["Edu"].start])
    z = z + enc[:, cols["Province"]] @ np.asarray(params.hiv_province_bit_coef)
    return z


def generate_synthetic(n: int, seed: int, params: SyntheticParams | None = None) -> Dataset:
    """Draw n complete, valid records over the default schema with planted
    dependencies (parity from gravidity, father's age from age, education from
    age, HIV from a logistic model over encoded age/education/province)."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    p = params or SyntheticParams()
    rng = np.random.default_rng(seed)
    province = rng.choice(np.arange(1, 10), size=n, p=_normalized(p.province_probs))
    age = np.clip(np.rint(p.age_offset + rng.gamma(p.age_shape, p.age_scale, n)), 12, 50)
    edu = np.rint(p.edu_mean + p.edu_age_slope * (age - 25.0) + rng.normal(0.0, p.edu_noise, n))
    edu = np.clip(edu, 0, 13)
    lam = np.maximum(0.05, (age - p.gravidity_age_onset) * p.gravidity_rate_per_year)
    gra = np.clip(1 + rng.poisson(lam), 1, 12)
    gap = rng.choice(np.arange(len(p.parity_gap_probs)), size=n, p=_normalized(p.parity_gap_probs))
    par = np.clip(gra - gap, 0, np.minimum(9, gra))
    fath = np.clip(np.rint(age + p.father_offset + rng.normal(0.0, p.father_noise, n)), 13, 90)
    base_race = rng.choice(np.arange(6), size=n, p=_normalized(p.race_probs))
    affine = rng.random(n) < p.race_province_affinity
    race = np.where(affine, (province - 1) % 6, base_race)
    prov_bits = _bits(province - 1, 4)
    rpr = (rng.random(n) < _sigmoid(p.rpr_intercept + prov_bits @ np.asarray(p.rpr_province_bit_coef))).astype(np.int64)
    values = np.column_stack([province, age, edu, gra, par, fath,
                              np.zeros(n), rpr, race]).astype(np.int64)
    z = hiv_logit(values, p)
    values[:, 6] = (rng.random(n) < _sigmoid(z)).astype(np.int64)
    return Dataset.complete(DEFAULT_SCHEMA, values)


def _normalized(probs):
    a = np.asarray(probs, dtype=np.float64)
    return a / a.sum()


# --------------------------------------------------------------------------
# CSV and sidecar IO

def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.schema.names)
        for vals, miss in zip(dataset.values.tolist(), dataset.missing.tolist()):
            w.writerow([MISSING_TOKEN if m else v for v, m in zip(vals, miss)])


def read_csv(path, schema: Schema = DEFAULT_SCHEMA) -> Dataset:
    """Read a CSV whose header names the schema variables; NA marks missing."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != schema.names:
            raise DataError(f"{path}:1: header {header} does not match schema {schema.names}")
        values, missing = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            vals, miss = [], []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == MISSING_TOKEN:
                    vals.append(0)
                    miss.append(True)
                    continue
                try:
                    vals.append(int(cell))
                except ValueError:
                    raise DataError(f"{path}:{line_no}: {name}={cell!r} is not an integer") from None
                miss.append(False)
            values.append(vals)
            missing.append(miss)
    shape = (len(values), len(schema))
    return Dataset(schema, np.array(values, dtype=np.int64).reshape(shape),
                   np.array(missing, dtype=bool).reshape(shape))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")
