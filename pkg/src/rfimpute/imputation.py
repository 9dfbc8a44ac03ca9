"""Imputation strategies producing labelled, fully observed datasets.

Strategies: per-variable Random Forests with chained re-prediction, the
autoencoder + GA search, the two RF/autoencoder cascades, and the random and
mean baselines. All of them work in the encoded [0, 1] space and decode at the
end; observed cells are never changed.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autoencoder as ae
from .dataset import (
    Dataset, MissingnessPlan, Schema, decode_values, encode, encode_values, inject_missing,
    valid_bounds,
)
from .errors import ConfigError, DataError
from .forest import CLASSIFICATION, REGRESSION, ForestParams, RandomForest, fit_forest
from .optimizer import GaConfig, SearchBox, run_ga
from .seeding import derive_seed

log = logging.getLogger(__name__)

# Missing-variable patterns of the impact study.
SET_PATTERNS = {
    "1A": ("Age",),
    "1B": ("Edu",),
    "1C": ("Gra",),
    "2A": ("Age", "FathAge"),
    "3A": ("Age", "Edu", "FathAge"),
    "4A": ("Age", "Edu", "FathAge", "Gra"),
}
STRATEGY_PREFIX = {
    "rf": "RF",
    "random": "R",
    "mean": "M",
    "aann-ga": "AG",
    "rf-aann-ga": "RFAG",
    "aann-ga-rf": "AGRF",
}
TARGET_LABEL = "T"
RF_BOX_HALF_WIDTH = 0.05

DEFAULT_RANGES = {
    "Age": (1, 2, 4, 6, 10),
    "FathAge": (1, 2, 4, 6, 10),
    "Edu": (0, 1, 2, 3, 5),
    "Gra": (0, 1, 2, 3, 5),
    "Par": (0, 1, 2, 3, 5),
}


def parse_label(label: str) -> tuple[str, str, tuple[str, ...]]:
    """Split a set label such as ``RF2A`` into (strategy, pattern code, variables)."""
    for strategy, prefix in sorted(STRATEGY_PREFIX.items(), key=lambda kv: -len(kv[1])):
        code = label[len(prefix):]
        if label.startswith(prefix) and code in SET_PATTERNS:
            return strategy, code, SET_PATTERNS[code]
    raise ConfigError(f"unknown set label {label!r}")


def make_label(strategy: str, variables) -> str:
    prefix = STRATEGY_PREFIX[strategy]
    for code, vars_ in SET_PATTERNS.items():
        if tuple(vars_) == tuple(variables):
            return prefix + code
    return prefix + "[" + "+".join(variables) + "]"


@dataclass(eq=False)
class ImputedSet:
    label: str
    strategy: str
    pattern: tuple[str, ...]
    data: Dataset               # fully observed
    imputed: np.ndarray         # (rows, variables) True where a value was filled in
    encoded: np.ndarray         # completed encoded matrix before decoding
    provenance: dict = field(default_factory=dict)
    round_predictions: list = field(default_factory=list)  # RF only: per-round filled values

    def sidecar(self) -> dict:
        return {
            "label": self.label,
            "strategy": self.strategy,
            "pattern": list(self.pattern),
            "n_rows": self.data.n_rows,
            "n_imputed_cells": int(self.imputed.sum()),
            "provenance": self.provenance,
        }


def _check_coverage(dataset: Dataset, pattern) -> None:
    if pattern is None:
        return
    cols = [dataset.schema.index(v) for v in pattern]
    outside = dataset.missing.copy()
    outside[:, cols] = False
    if outside.any():
        r, c = map(int, np.argwhere(outside)[0])
        raise DataError(f"row {r}: {dataset.schema.names[c]} is missing but not in pattern {list(pattern)}")


def _pattern_of(dataset: Dataset, pattern) -> tuple[str, ...]:
    if pattern is not None:
        return tuple(pattern)
    return tuple(n for j, n in enumerate(dataset.schema.names) if dataset.missing[:, j].any())


def enforce_rules(values: np.ndarray, imputed: np.ndarray, schema: Schema) -> np.ndarray:
    """Move imputed cells (only) so every record passes the validity rules."""
    v = values.copy()
    for j, spec in enumerate(schema.variables):
        lo, hi = valid_bounds(spec)
        m = imputed[:, j]
        v[m, j] = np.clip(v[m, j], lo, hi)
    if "Gra" in schema and "Par" in schema:
        g, p = schema.index("Gra"), schema.index("Par")
        bad = v[:, g] < v[:, p]
        fix_g = bad & imputed[:, g] & ~imputed[:, p]
        v[fix_g, g] = v[fix_g, p]
        fix_p = bad & imputed[:, p]
        v[fix_p, p] = v[fix_p, g]
    return v


def _finish(dataset: Dataset, completed_enc: np.ndarray, **kw) -> ImputedSet:
    schema = dataset.schema
    decoded = decode_values(completed_enc, schema)
    values = np.where(dataset.missing, decoded, dataset.values)
    values = enforce_rules(values, dataset.missing, schema)
    return ImputedSet(data=Dataset.complete(schema, values), imputed=dataset.missing.copy(),
                      encoded=completed_enc, **kw)


def _encoded_target_value(spec, cls_values: np.ndarray) -> np.ndarray:
    """Encoded column(s) for integer category predictions."""
    tmp_schema = Schema((spec,))
    return encode_values(cls_values.reshape(-1, 1), tmp_schema)


# --------------------------------------------------------------------------
# Random Forest imputer

@dataclass(eq=False)
class RfImputer:
    schema: Schema
    forests: dict               # variable name -> RandomForest
    inputs: dict                # variable name -> encoded input column indices
    column_means: np.ndarray    # encoded training means
    params: ForestParams
    exclude_hiv: bool
    rounds: int
    seed: int

    def task(self, name) -> str:
        return REGRESSION if self.schema.spec(name).is_regression_target else CLASSIFICATION

    def to_dict(self) -> dict:
        return {
            "format": "rfimpute.rf-imputer/1",
            "schema": self.schema.to_dict(),
            "params": asdict(self.params),
            "exclude_hiv": self.exclude_hiv,
            "rounds": self.rounds,
            "seed": self.seed,
            "column_means": self.column_means.tolist(),
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "forests": {k: f.to_dict() for k, f in self.forests.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "RfImputer":
        if d.get("format") != "rfimpute.rf-imputer/1":
            raise DataError(f"unsupported imputer format {d.get('format')!r}")
        return cls(
            schema=Schema.from_dict(d["schema"]),
            forests={k: RandomForest.from_dict(f) for k, f in d["forests"].items()},
            inputs={k: list(v) for k, v in d["inputs"].items()},
            column_means=np.asarray(d["column_means"], dtype=np.float64),
            params=ForestParams(**d["params"]), exclude_hiv=d["exclude_hiv"],
            rounds=d["rounds"], seed=d["seed"],
        )


def _require_complete(dataset: Dataset, what: str) -> None:
    if not dataset.is_complete:
        raise DataError(f"{what} must be complete ({dataset.n_missing} missing cells)")
    if dataset.n_rows == 0:
        raise DataError(f"{what} is empty")


def fit_rf_imputer(train: Dataset, forest_params: ForestParams = ForestParams(), seed: int = 0,
                   exclude_hiv: bool = True, rounds: int = 2, targets=None,
                   threads: int = 1) -> RfImputer:
    """One forest per schema variable, each predicting its variable from every
    other encoded column (HIV never an input when ``exclude_hiv``)."""
    _require_complete(train, "training data")
    if rounds < 1:
        raise ConfigError("rounds must be at least 1")
    schema = train.schema
    E = encode(train).values
    slices = schema.column_slices()
    excluded = set()
    if exclude_hiv and "HIV" in schema:
        excluded.update(range(slices["HIV"].start, slices["HIV"].stop))
    forests, inputs = {}, {}
    for name in (targets or schema.names):
        spec = schema.spec(name)
        own = set(range(slices[name].start, slices[name].stop))
        cols = [c for c in range(schema.encoded_width) if c not in own and c not in excluded]
        params = forest_params.for_features(len(cols))
        if spec.is_regression_target:
            y, task = E[:, slices[name].start], REGRESSION
        else:
            y, task = train.column(name), CLASSIFICATION
        forests[name] = fit_forest(E[:, cols], y, params, derive_seed(seed, "rf", name),
                                   task=task, threads=threads)
        inputs[name] = cols
    return RfImputer(schema, forests, inputs, E.mean(axis=0), forest_params,
                     exclude_hiv, rounds, int(seed))


def _rf_complete(imputer: RfImputer, dataset: Dataset, rounds: int):
    schema = dataset.schema
    enc = encode(dataset)
    cur = np.where(enc.mask, imputer.column_means[None, :], enc.values)
    slices = schema.column_slices()
    considered = [j for j, n in enumerate(schema.names)
                  if not (imputer.exclude_hiv and n == "HIV")]
    all_missing = dataset.missing[:, considered].all(axis=1)
    if all_missing.any():
        log.warning("%d rows have every variable missing; imputed from training means",
                    int(all_missing.sum()))
    history = []
    for _ in range(rounds):
        preds = {}
        for j, name in enumerate(schema.names):
            rows = np.flatnonzero(dataset.missing[:, j] & ~all_missing)
            if len(rows) == 0:
                continue
            if name not in imputer.forests:
                raise DataError(f"imputer has no forest for {name}")
            forest = imputer.forests[name]
            p = forest.predict(cur[np.ix_(rows, imputer.inputs[name])])
            spec = schema.spec(name)
            if spec.is_regression_target:
                cur[rows, slices[name].start] = p
            else:
                cur[np.ix_(rows, range(slices[name].start, slices[name].stop))] = \
                    _encoded_target_value(spec, p)
            preds[name] = cur[rows, slices[name]].copy()
        history.append(preds)
    return cur, history, int(all_missing.sum())


def impute_rf(imputer: RfImputer, dataset: Dataset, label: str | None = None,
              pattern=None, rounds: int | None = None) -> ImputedSet:
    """Mean-initialise missing encoded cells, then re-predict every missing
    variable from the current completed record, ``rounds`` times."""
    _check_coverage(dataset, pattern)
    pattern = _pattern_of(dataset, pattern)
    rounds = imputer.rounds if rounds is None else rounds
    cur, history, n_all = _rf_complete(imputer, dataset, rounds)
    out = _finish(dataset, cur, label=label or make_label("rf", pattern), strategy="rf",
                  pattern=pattern,
                  provenance={"seed": imputer.seed, "rounds": rounds,
                              "forest_params": asdict(imputer.params),
                              "exclude_hiv": imputer.exclude_hiv,
                              "rows_all_missing": n_all})
    out.round_predictions = history
    return out


# --------------------------------------------------------------------------
# Baselines

def impute_mean(train: Dataset, dataset: Dataset, label: str | None = None, pattern=None) -> ImputedSet:
    """Fill with the decoded training mean of each encoded column."""
    _check_coverage(dataset, pattern)
    pattern = _pattern_of(dataset, pattern)
    means = encode(train.complete_rows()).values.mean(axis=0)
    enc = encode(dataset)
    cur = np.where(enc.mask, means[None, :], enc.values)
    return _finish(dataset, cur, label=label or make_label("mean", pattern), strategy="mean",
                   pattern=pattern, provenance={"n_train": train.n_rows})


def impute_random(train: Dataset, dataset: Dataset, seed: int, label: str | None = None,
                  pattern=None) -> ImputedSet:
    """Uniform integer draw within each variable's valid range. Gravidity and
    parity draws respect the partner value already in the record."""
    _check_coverage(dataset, pattern)
    pattern = _pattern_of(dataset, pattern)
    schema = dataset.schema
    rng = np.random.default_rng(seed)
    values = dataset.values.copy()
    names = schema.names
    for j, spec in enumerate(schema.variables):
        rows = np.flatnonzero(dataset.missing[:, j])
        if len(rows) == 0:
            continue
        lo, hi = valid_bounds(spec)
        lo = np.full(len(rows), lo)
        hi = np.full(len(rows), hi)
        if spec.name == "Gra" and "Par" in names:
            lo = np.maximum(lo, values[rows, names.index("Par")])
        if spec.name == "Par" and "Gra" in names:
            hi = np.minimum(hi, values[rows, names.index("Gra")])
        values[rows, j] = lo + np.floor(rng.random(len(rows)) * (hi - lo + 1)).astype(np.int64)
    cur = encode_values(values, schema)
    return _finish(dataset, cur, label=label or make_label("random", pattern), strategy="random",
                   pattern=pattern, provenance={"seed": int(seed)})


# --------------------------------------------------------------------------
# Autoencoder + GA

def _ga_objective(network, x, mask):
    def objective(genes):
        X = np.repeat(x[None, :], len(genes), axis=0)
        X[:, mask] = genes
        return ae.batch_reconstruction_errors(network, X)
    return objective


def impute_aann_ga(network, ga_config: GaConfig, record, mask=None, mean_candidate=None,
                   box: SearchBox | None = None, extra_candidates=()) -> np.ndarray:
    """Fill the unknown entries of one encoded record by GA search minimising
    the network's reconstruction error; known entries stay fixed.

    ``mask`` defaults to the NaN positions of ``record``. ``mean_candidate``
    (full-length, e.g. training column means) seeds generation 0.
    """
    x = np.array(record, dtype=np.float64)
    mask = np.isnan(x) if mask is None else np.asarray(mask, dtype=bool)
    if mask.all():
        raise DataError("every element is missing; nothing to search from")
    if not mask.any():
        return x
    n_unknown = int(mask.sum())
    box = box or SearchBox.unit(n_unknown)
    x[mask] = 0.0
    candidates = []
    if mean_candidate is not None:
        candidates.append(np.asarray(mean_candidate, dtype=np.float64)[mask])
    candidates.extend(np.asarray(c, dtype=np.float64) for c in extra_candidates)
    result = run_ga(_ga_objective(network, x, mask), box, ga_config,
                    initial=np.array(candidates) if candidates else None)
    x[mask] = result.best
    return x


def _map_rows(fn, rows, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, rows))
    return [fn(r) for r in rows]


def _aann_ga_fill(network, ga_config, dataset, column_means, seed, boxes=None,
                  extra=None, threads=1) -> np.ndarray:
    enc = encode(dataset)
    cur = enc.values.copy()
    rows = np.flatnonzero(enc.mask.any(axis=1))

    def fill(i):
        box = None if boxes is None else boxes[i]
        extra_c = () if extra is None else (extra[i],)
        cfg = ga_config.with_seed(derive_seed(seed, "row", int(i)))
        return impute_aann_ga(network, cfg, cur[i], enc.mask[i], column_means, box, extra_c)

    for i, filled in zip(rows, _map_rows(fill, rows, threads)):
        cur[i] = filled
    return cur


def impute_aann_ga_dataset(network, ga_config: GaConfig, dataset: Dataset, column_means,
                           seed: int = 0, label: str | None = None, pattern=None,
                           threads: int = 1) -> ImputedSet:
    _check_coverage(dataset, pattern)
    pattern = _pattern_of(dataset, pattern)
    cur = _aann_ga_fill(network, ga_config, dataset, column_means, seed, threads=threads)
    return _finish(dataset, cur, label=label or make_label("aann-ga", pattern),
                   strategy="aann-ga", pattern=pattern,
                   provenance={"seed": int(seed), "ga": ga_config.to_dict(),
                               "network_sizes": list(network.sizes)})


def rf_boxes(rf_encoded: np.ndarray, mask: np.ndarray, half_width: float = RF_BOX_HALF_WIDTH):
    """Per-row GA boxes of +/- half_width around the RF predictions, clamped to [0, 1]."""
    boxes = {}
    for i in np.flatnonzero(mask.any(axis=1)):
        p = rf_encoded[i, mask[i]]
        boxes[i] = SearchBox(np.maximum(0.0, p - half_width), np.minimum(1.0, p + half_width))
    return boxes


def impute_rf_aann_ga(rf_imputer: RfImputer, network, ga_config: GaConfig, dataset: Dataset,
                      column_means, seed: int = 0, label: str | None = None, pattern=None,
                      threads: int = 1) -> ImputedSet:
    """RF predictions bound the GA search to [p - 0.05, p + 0.05] per gene."""
    _check_coverage(dataset, pattern)
    pattern = _pattern_of(dataset, pattern)
    rf_set = impute_rf(rf_imputer, dataset, pattern=pattern)
    enc = encode(dataset)
    boxes = rf_boxes(rf_set.encoded, enc.mask)
    centres = {i: rf_set.encoded[i, enc.mask[i]] for i in boxes}
    cur = _aann_ga_fill(network, ga_config, dataset, column_means, seed, boxes=boxes,
                        extra=centres, threads=threads)
    return _finish(dataset, cur, label=label or make_label("rf-aann-ga", pattern),
                   strategy="rf-aann-ga", pattern=pattern,
                   provenance={"seed": int(seed), "ga": ga_config.to_dict(),
                               "rf_seed": rf_imputer.seed, "box_half_width": RF_BOX_HALF_WIDTH})


# --------------------------------------------------------------------------
# Autoencoder + GA followed by an RF correction

@dataclass(eq=False)
class CorrectionModel:
    """Forests mapping an AANN-GA-completed record (plus missing flags) to the
    true value of each target variable."""
    schema: Schema
    targets: tuple[str, ...]
    forests: dict
    seed: int

    def features(self, completed_enc: np.ndarray, missing: np.ndarray) -> np.ndarray:
        cols = [self.schema.index(v) for v in self.targets]
        return np.column_stack([completed_enc, missing[:, cols].astype(np.float64)])

    def to_dict(self) -> dict:
        return {"format": "rfimpute.correction/1", "schema": self.schema.to_dict(),
                "targets": list(self.targets), "seed": self.seed,
                "forests": {k: f.to_dict() for k, f in self.forests.items()}}

    @classmethod
    def from_dict(cls, d) -> "CorrectionModel":
        if d.get("format") != "rfimpute.correction/1":
            raise DataError(f"unsupported correction format {d.get('format')!r}")
        return cls(Schema.from_dict(d["schema"]), tuple(d["targets"]),
                   {k: RandomForest.from_dict(f) for k, f in d["forests"].items()}, d["seed"])


def fit_correction(aann_test: ImputedSet, test_truth: Dataset, targets,
                   forest_params: ForestParams = ForestParams(), seed: int = 0,
                   threads: int = 1) -> CorrectionModel:
    """Train one correction forest per target variable on the AANN-GA-completed
    test set, with the original values as targets."""
    schema = test_truth.schema
    _require_complete(test_truth, "test truth")
    if aann_test.data.n_rows != test_truth.n_rows:
        raise DataError("imputed test set and truth differ in row count")
    model = CorrectionModel(schema, tuple(targets), {}, int(seed))
    X = model.features(aann_test.encoded, aann_test.imputed)
    truth_enc = encode(test_truth).values
    slices = schema.column_slices()
    for name in model.targets:
        spec = schema.spec(name)
        params = forest_params.for_features(X.shape[1])
        if spec.is_regression_target:
            y, task = truth_enc[:, slices[name].start], REGRESSION
        else:
            y, task = test_truth.column(name), CLASSIFICATION
        model.forests[name] = fit_forest(X, y, params, derive_seed(seed, "correction", name),
                                         task=task, threads=threads)
    return model


def apply_correction(model: CorrectionModel, aann_set: ImputedSet, label: str | None = None) -> ImputedSet:
    """Replace the AANN-GA values of each missing target cell with the
    correction forest's prediction."""
    schema = model.schema
    X = model.features(aann_set.encoded, aann_set.imputed)
    cur = aann_set.encoded.copy()
    slices = schema.column_slices()
    for name in model.targets:
        j = schema.index(name)
        rows = np.flatnonzero(aann_set.imputed[:, j])
        if len(rows) == 0:
            continue
        p = model.forests[name].predict(X[rows])
        spec = schema.spec(name)
        if spec.is_regression_target:
            cur[rows, slices[name].start] = p
        else:
            cur[np.ix_(rows, range(slices[name].start, slices[name].stop))] = \
                _encoded_target_value(spec, p)
    incomplete = aann_set.data.with_missing(aann_set.imputed)
    return _finish(incomplete, cur, label=label or make_label("aann-ga-rf", aann_set.pattern),
                   strategy="aann-ga-rf", pattern=aann_set.pattern,
                   provenance={**aann_set.provenance, "correction_seed": model.seed})


@dataclass(eq=False)
class AannGaRfResult:
    corrected: ImputedSet
    uncorrected: ImputedSet
    truth: Dataset
    network: object
    trace: object
    correction: CorrectionModel


def impute_aann_ga_rf(network, ga_config: GaConfig, forest_params: ForestParams, sets,
                      plan: MissingnessPlan, seed: int = 0,
                      train_config: ae.TrainConfig = ae.TrainConfig(),
                      threads: int = 1) -> AannGaRfResult:
    """Full four-set protocol: train the network on train/validation, impute the
    artificially incomplete test and experiment sets with AANN-GA, learn the
    correction on test, apply it to experiment."""
    if len(sets) != 4:
        raise ConfigError("need (train, validation, test, experiment)")
    train_set, val_set, test_set, exp_set = sets
    for name, d in zip(("train", "validation", "test", "experiment"), sets):
        _require_complete(d, f"{name} set")
    E_train = encode(train_set).values
    net, trace = ae.train(network, E_train, encode(val_set).values, train_config)
    means = E_train.mean(axis=0)
    test_miss = inject_missing(test_set, plan, derive_seed(seed, "inject", "test"))
    exp_miss = inject_missing(exp_set, plan, derive_seed(seed, "inject", "experiment"))
    test_imp = impute_aann_ga_dataset(net, ga_config, test_miss, means,
                                      derive_seed(seed, "ga", "test"), threads=threads)
    exp_imp = impute_aann_ga_dataset(net, ga_config, exp_miss, means,
                                     derive_seed(seed, "ga", "experiment"), threads=threads)
    correction = fit_correction(test_imp, test_set, plan.target_variables, forest_params,
                                derive_seed(seed, "correction"), threads=threads)
    corrected = apply_correction(correction, exp_imp)
    return AannGaRfResult(corrected, exp_imp, exp_set, net, trace, correction)


# --------------------------------------------------------------------------
# Accuracy within ranges

@dataclass(frozen=True)
class RangeAccuracy:
    per_variable: dict      # name -> list of (range, fraction, n_cells)

    def fraction(self, name: str, r) -> float:
        for rr, frac, _ in self.per_variable[name]:
            if rr == r:
                return frac
        raise KeyError(r)

    def to_dict(self) -> dict:
        return {k: [{"range": r, "fraction": f, "n": n} for r, f, n in v]
                for k, v in self.per_variable.items()}


def range_accuracy(imputed_set: ImputedSet, truth: Dataset, ranges=None) -> RangeAccuracy:
    """Fraction of imputed cells within each range of the true value."""
    ranges = ranges or DEFAULT_RANGES
    schema = truth.schema
    if truth.n_rows != imputed_set.data.n_rows:
        raise DataError("truth and imputed set differ in row count")
    out = {}
    for name in imputed_set.pattern:
        j = schema.index(name)
        m = imputed_set.imputed[:, j]
        if not m.any():
            continue
        err = np.abs(imputed_set.data.values[m, j] - truth.values[m, j])
        out[name] = [(r, float(np.mean(err <= r)), int(m.sum()))
                     for r in ranges.get(name, (0,))]
    return RangeAccuracy(out)


def imputed_cell_mse(imputed_set: ImputedSet, truth: Dataset, name: str) -> float:
    j = truth.schema.index(name)
    m = imputed_set.imputed[:, j]
    if not m.any():
        raise DataError(f"no imputed cells for {name}")
    d = imputed_set.data.values[m, j] - truth.values[m, j]
    return float(np.mean(d.astype(np.float64) ** 2))
