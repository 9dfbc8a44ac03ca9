"""Command-line driver: generate, clean, split, inject, train, impute, assess,
run (whole pipeline) and replay (re-execute a manifest, checking digests).

Every command is a function of its input files, its configuration and the
master seed. With ``--manifest`` a command appends a step record (argv,
effective-config hash, input and output sha256 digests) that ``replay`` can
re-execute elsewhere.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import assessment as asm
from . import autoencoder as ae
from .dataset import (
    DEFAULT_SCHEMA, MissingnessPlan, SPLIT_NAMES, SyntheticParams, clean, encode,
    generate_synthetic, inject_missing, read_csv, removed_count, sidecar_path, split,
    violation_counts, write_csv, write_json,
)
from .errors import ConfigError, DataError, ReproducibilityError, RfImputeError
from .forest import CLASSIFICATION, ForestParams, fit_forest
from .imputation import (
    SET_PATTERNS, STRATEGY_PREFIX, CorrectionModel, ImputedSet, RfImputer, apply_correction,
    fit_correction, fit_rf_imputer, impute_aann_ga_dataset, impute_mean, impute_random,
    impute_rf, impute_rf_aann_ga, make_label, parse_label, range_accuracy,
)
from .optimizer import GaConfig
from .seeding import derive_seed

log = logging.getLogger("rfimpute")

MANIFEST_FORMAT = "rfimpute.manifest/1"
DEFAULT_SETS = ("RF1A", "R1A", "RF1B", "R1B", "RF1C", "R1C",
                "RF2A", "R2A", "RF3A", "R3A", "RF4A", "R4A")
AANN_STRATEGIES = ("aann-ga", "rf-aann-ga", "aann-ga-rf")


# --------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class RunConfig:
    seed: int
    n: int = 5000
    fractions: tuple = (0.25, 0.25, 0.25, 0.25)
    forest: ForestParams = ForestParams()
    hidden: int = 11
    activation: str = "linear"
    training: ae.TrainConfig = ae.TrainConfig()
    ga: GaConfig = GaConfig()
    mechanism: str = "MCAR"
    rate: float = 0.1
    mar_driver: str | None = None
    joint: bool = False
    sets: tuple = DEFAULT_SETS
    exclude_hiv: bool = True
    rf_rounds: int = 2
    qq_points: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if d.get("seed") is None:
            raise ConfigError("a master seed is required (config 'seed' or --seed)")
        try:
            nested = {
                "forest": ForestParams(**d.pop("forest", {})),
                "training": ae.TrainConfig(**d.pop("training", {})),
                "ga": GaConfig(**d.pop("ga", {})),
            }
            cfg = cls(**d, **nested)
        except TypeError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        cfg = cls(**{**asdict(cfg), **nested, "seed": int(cfg.seed),
                     "fractions": tuple(cfg.fractions), "sets": tuple(cfg.sets)})
        for label in cfg.sets:
            parse_label(label)
        if cfg.n < 1:
            raise ConfigError("n must be positive")
        if cfg.rf_rounds < 1:
            raise ConfigError("rf_rounds must be at least 1")
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["sets"] = list(self.sets)
        return d

    def plan(self, variables) -> MissingnessPlan:
        return MissingnessPlan(self.mechanism, tuple(variables), self.rate, self.mar_driver, self.joint)

    def network(self, seed: int):
        width = DEFAULT_SCHEMA.encoded_width
        return ae.init_network((width, self.hidden, width), (self.activation, self.activation), seed)

    def sha256(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict())).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def load_config(args) -> RunConfig:
    d = {}
    if getattr(args, "config", None):
        try:
            d = json.loads(_path(args, args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    return RunConfig.from_dict(d)


# --------------------------------------------------------------------------
# Paths, digests, IO helpers

def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.base_dir) / p


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read(args, p):
    path = _path(args, p)
    if not path.exists():
        raise DataError(f"input file not found: {p}")
    return read_csv(path)


def _write_dataset(args, dataset, p, sidecar: dict):
    path = _path(args, p)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, path)
    write_json(sidecar, sidecar_path(path))
    return [str(p), str(p) + ".json"]


def _write_json(args, obj, p):
    path = _path(args, p)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json(obj, path)
    return [str(p)]


def _write_text(args, text, p):
    path = _path(args, p)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return [str(p)]


def _load_json(args, p) -> dict:
    path = _path(args, p)
    if not path.exists():
        raise DataError(f"model file not found: {p}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: not valid JSON ({exc})") from None


def _variables(text) -> tuple[str, ...]:
    names = tuple(v for v in text.split(",") if v)
    for v in names:
        if v not in DEFAULT_SCHEMA:
            raise ConfigError(f"unknown variable {v!r}")
    return names


# --------------------------------------------------------------------------
# Commands. Each returns (inputs, outputs) as lists of path strings.

def cmd_generate(args, cfg):
    seed = derive_seed(cfg.seed, "generate")
    n = args.n if args.n is not None else cfg.n
    data = generate_synthetic(n, seed)
    out = _write_dataset(args, data, args.out, {
        "step": "generate", "n": n, "seed": seed, "params": SyntheticParams().to_dict()})
    return [], out


def cmd_clean(args, cfg):
    data = _read(args, args.input)
    counts = violation_counts(data)
    cleaned = clean(data)
    out = _write_dataset(args, cleaned, args.out, {
        "step": "clean", "input": str(args.input), "violations": counts,
        "cells_flagged": removed_count(data, cleaned)})
    return [args.input], out


def cmd_split(args, cfg):
    data = _read(args, args.input)
    dropped = 0
    if not args.keep_incomplete:
        kept = data.complete_rows()
        dropped = data.n_rows - kept.n_rows
        data = kept
    seed = derive_seed(cfg.seed, "split")
    parts = split(data, cfg.fractions, seed)
    outs = []
    for name, part in zip(SPLIT_NAMES, parts):
        outs += _write_dataset(args, part, Path(args.out_dir) / f"{name}.csv", {
            "step": "split", "set": name, "n_rows": part.n_rows, "seed": seed,
            "fractions": list(cfg.fractions), "dropped_incomplete": dropped})
    return [args.input], outs


def cmd_inject(args, cfg):
    data = _read(args, args.input)
    variables = _variables(args.variables)
    plan = cfg.plan(variables)
    seed = derive_seed(cfg.seed, "inject", ",".join(variables), args.stream)
    out_data = inject_missing(data, plan, seed)
    out = _write_dataset(args, out_data, args.out, {
        "step": "inject", "input": str(args.input), "plan": asdict(plan), "seed": seed,
        "removed": removed_count(data, out_data)})
    return [args.input], out


def cmd_train(args, cfg):
    train_set = _read(args, args.input)
    if args.model == "rf":
        seed = derive_seed(cfg.seed, "train", "rf")
        imp = fit_rf_imputer(train_set, cfg.forest, seed, exclude_hiv=cfg.exclude_hiv,
                             rounds=cfg.rf_rounds, threads=args.threads)
        doc = imp.to_dict()
        doc["training"] = {"input": str(args.input), "forest_params": asdict(cfg.forest)}
        return [args.input], _write_json(args, doc, args.out)
    if args.model == "aann":
        if not args.validation:
            raise ConfigError("train aann needs --validation")
        val = _read(args, args.validation)
        seed = derive_seed(cfg.seed, "train", "aann")
        E = encode(train_set).values
        net, trace = ae.train(cfg.network(seed), E, encode(val).values, cfg.training)
        doc = net.to_dict()
        doc["column_means"] = E.mean(axis=0).tolist()
        doc["training"] = {"hidden": cfg.hidden, "cycles": cfg.training.max_cycles,
                           "selected_cycle": trace.selected_cycle, "seed": seed}
        out = _write_json(args, doc, args.out)
        trace_path = str(args.out) + ".trace.csv"
        trace.write_csv(_path(args, trace_path))
        return [args.input, args.validation], out + [trace_path]
    # correction: AANN-GA on the incomplete test set, forests learn the truth
    if not (args.network and args.incomplete):
        raise ConfigError("train correction needs --network and --incomplete")
    net, means = _load_network(args, args.network)
    incomplete = _read(args, args.incomplete)
    variables = tuple(n for j, n in enumerate(DEFAULT_SCHEMA.names) if incomplete.missing[:, j].any())
    if not variables:
        raise DataError("incomplete test set has no missing cells")
    seed = derive_seed(cfg.seed, "train", "correction", ",".join(variables))
    aann = impute_aann_ga_dataset(net, cfg.ga, incomplete, means, derive_seed(seed, "ga"),
                                  threads=args.threads)
    model = fit_correction(aann, train_set, variables, cfg.forest, seed, threads=args.threads)
    return [args.input, args.network, args.incomplete], _write_json(args, model.to_dict(), args.out)


def _load_network(args, p):
    doc = _load_json(args, p)
    if "column_means" not in doc:
        raise DataError(f"{p}: network file lacks column_means")
    return ae.AutoencoderNetwork.from_dict(doc), np.asarray(doc["column_means"])


def cmd_impute(args, cfg):
    data = _read(args, args.input)
    if args.label:
        strategy, _, pattern = parse_label(args.label)
        label = args.label
    else:
        if not (args.strategy and args.variables):
            raise ConfigError("impute needs --label or both --strategy and --variables")
        strategy, pattern = args.strategy, _variables(args.variables)
        label = make_label(strategy, pattern)
    seed = derive_seed(cfg.seed, "impute", label)
    inputs = [args.input]

    def need(opt, name):
        if not getattr(args, opt):
            raise ConfigError(f"strategy {strategy} needs --{name}")
        inputs.append(getattr(args, opt))
        return getattr(args, opt)

    if strategy == "rf":
        imp = RfImputer.from_dict(_load_json(args, need("model", "model")))
        out = impute_rf(imp, data, label, pattern)
    elif strategy == "mean":
        out = impute_mean(_read(args, need("train", "train")), data, label, pattern)
    elif strategy == "random":
        out = impute_random(_read(args, need("train", "train")), data, seed, label, pattern)
    elif strategy == "aann-ga":
        net, means = _load_network(args, need("network", "network"))
        out = impute_aann_ga_dataset(net, cfg.ga, data, means, seed, label, pattern, args.threads)
    elif strategy == "rf-aann-ga":
        imp = RfImputer.from_dict(_load_json(args, need("model", "model")))
        net, means = _load_network(args, need("network", "network"))
        out = impute_rf_aann_ga(imp, net, cfg.ga, data, means, seed, label, pattern, args.threads)
    else:
        net, means = _load_network(args, need("network", "network"))
        correction = CorrectionModel.from_dict(_load_json(args, need("correction", "correction")))
        aann = impute_aann_ga_dataset(net, cfg.ga, data, means, seed, label, pattern, args.threads)
        out = apply_correction(correction, aann, label)
    side = out.sidecar()
    side["provenance"] = {**side["provenance"], "input": str(args.input),
                          "models": [str(p) for p in inputs[1:]]}
    return inputs, _write_dataset(args, out.data, args.out, side)


# -- assessment -------------------------------------------------------------

def _set_label(p) -> str:
    side = Path(str(p) + ".json")
    if side.exists():
        try:
            return json.loads(side.read_text()).get("label") or Path(p).stem
        except json.JSONDecodeError:
            pass
    return Path(p).stem


def _load_sets(args):
    sets = []
    for p in args.sets:
        d = _read(args, p)
        if not d.is_complete:
            raise DataError(f"{p} still has missing cells")
        sets.append((_set_label(_path(args, p)), d))
    return sets


def _non_hiv_features(dataset):
    E = encode(dataset).values
    cols = DEFAULT_SCHEMA.column_slices()["HIV"]
    keep = [c for c in range(E.shape[1]) if not (cols.start <= c < cols.stop)]
    names = [n for i, n in enumerate(DEFAULT_SCHEMA.encoded_names) if i in keep]
    return E[:, keep], names


def _report_pair(args, doc, text):
    base = Path(args.out)
    return (_write_json(args, doc, str(base) + ".json")
            + _write_text(args, text, str(base) + ".txt"))


def cmd_assess(args, cfg):
    if not args.target:
        raise DataError("assessment needs the target set T (--target)")
    target = _read(args, args.target)
    if not target.is_complete:
        raise DataError("target set T must be complete")
    sets = _load_sets(args)
    for label, d in sets:
        if d.n_rows != target.n_rows:
            raise DataError(f"set {label} has {d.n_rows} rows, target has {target.n_rows}")
    inputs = [args.target] + list(args.sets)

    if args.kind == "stats":
        variables = _variables(args.variables) if args.variables else None
        doc, cols = {}, {}
        for (label, d), p in zip(sets, args.sets):
            vs = variables or _pattern_from_sidecar(_path(args, p))
            block = {}
            for v in vs:
                j = DEFAULT_SCHEMA.index(v)
                rep = asm.stat_impact(target.values[:, j], d.values[:, j])
                block[v] = rep.to_dict()
                cols[f"{label}:{v}"] = rep.rows()
            doc[label] = block
        rows = list(next(iter(cols.values())).keys()) if cols else []
        text = asm.format_table({k: list(v.values()) for k, v in cols.items()}, rows,
                                "Statistical impact")
        return inputs, _report_pair(args, doc, text)

    if args.kind == "classify":
        if not args.train:
            raise ConfigError("assess classify needs --train")
        train_set = _read(args, args.train)
        inputs.append(args.train)
        X, _ = _non_hiv_features(train_set)
        params = cfg.forest.for_features(X.shape[1])
        clf = fit_forest(X, train_set.column("HIV"), params,
                         derive_seed(cfg.seed, "assess", "classify"), CLASSIFICATION,
                         threads=args.threads)
        actual = target.column("HIV")
        doc, cols = {}, {}
        for label, d in [("T", target)] + sets:
            cm = asm.confusion(clf.predict(_non_hiv_features(d)[0]), actual)
            m = asm.metrics(cm)
            doc[label] = {"confusion": cm.to_dict(), "metrics": asdict(m)}
            cols[label] = [100 * m.accuracy, 100 * m.sensitivity, 100 * m.specificity,
                           100 * m.precision, m.f_measure]
        text = asm.format_table(cols, ["Accuracy (%)", "Sensitivity (%)", "Specificity (%)",
                                       "Precision (%)", "F measure"], "HIV classification")
        return inputs, _report_pair(args, doc, text)

    if args.kind == "lr":
        if not args.train:
            raise ConfigError("assess lr needs --train")
        train_set = _read(args, args.train)
        inputs.append(args.train)
        X, names = _non_hiv_features(train_set)
        model = asm.fit_lr(X, train_set.column("HIV"), feature_names=names)
        tX = _non_hiv_features(target)[0]
        doc = {"model": model.to_dict()}
        cols = {}
        for label, d in [("T", target)] + sets:
            rep = asm.lr_impact(model, tX, _non_hiv_features(d)[0])
            doc[label] = rep.to_dict()
            cols[label] = list(rep.rows().values())
        rows = list(asm.lr_impact(model, tX, tX).rows().keys())
        text = asm.format_table(cols, rows, "Logistic regression impact")
        return inputs, _report_pair(args, doc, text)

    if args.kind == "range-accuracy":
        doc, lines = {}, []
        for (label, d), p in zip(sets, args.sets):
            pattern = _pattern_from_sidecar(_path(args, p))
            mask = _imputed_mask_from(target, pattern, args)
            iset = ImputedSet(label, "", pattern, d, mask, np.empty((0, 0)))
            ra = range_accuracy(iset, target)
            doc[label] = ra.to_dict()
            for v, entries in ra.per_variable.items():
                lines.append(f"{label:<8} {v:<8} " + "  ".join(
                    f"<={r}: {100 * f:6.2f}%" for r, f, _ in entries))
        return inputs, _report_pair(args, doc,
                                    "Accuracy within ranges\n" + "\n".join(lines) + "\n")

    # qq
    if not args.variables:
        raise ConfigError("assess qq needs --variables (one variable)")
    (v,) = _variables(args.variables)[:1]
    j = DEFAULT_SCHEMA.index(v)
    outs = []
    for (label, d), p in zip(sets, args.sets):
        pts = asm.qq_points(target.values[:, j], d.values[:, j], cfg.qq_points)
        path = f"{args.out}.{label}.{v}.csv"
        _path(args, path).parent.mkdir(parents=True, exist_ok=True)
        with _path(args, path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"T_{v}", f"{label}_{v}"])
            w.writerows([[repr(float(a)), repr(float(b))] for a, b in pts])
        outs.append(path)
    return inputs, outs


def _pattern_from_sidecar(path) -> tuple[str, ...]:
    side = Path(str(path) + ".json")
    if side.exists():
        try:
            pattern = json.loads(side.read_text()).get("pattern")
            if pattern:
                return tuple(pattern)
        except json.JSONDecodeError:
            pass
    label = _set_label(path)
    return parse_label(label)[2]


def _imputed_mask_from(target, pattern, args):
    # Without the incomplete file only the pattern is known; cells of the
    # pattern columns that were observed are identical to T and score as exact,
    # so --incomplete points at the pre-imputation file when available.
    if args.incomplete:
        inc = _read(args, args.incomplete)
        return inc.missing.copy()
    mask = np.zeros_like(target.missing)
    for v in pattern:
        mask[:, DEFAULT_SCHEMA.index(v)] = True
    return mask


# --------------------------------------------------------------------------
# Pipeline

def cmd_run(args, cfg):
    """generate -> clean -> split -> train -> inject -> impute -> assess, every
    step recorded in <out-dir>/manifest.json."""
    out_dir = _path(args, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.json"
    if manifest.exists():
        manifest.unlink()
    config_file = "config.json"
    write_json(cfg.to_dict(), out_dir / config_file)
    common = ["--config", config_file, "--manifest", "manifest.json"]
    strategies = {parse_label(l)[0] for l in cfg.sets}

    steps = [
        ["generate", "--out", "data/raw.csv"],
        ["clean", "--in", "data/raw.csv", "--out", "data/clean.csv"],
        ["split", "--in", "data/clean.csv", "--out-dir", "data"],
    ]
    if strategies & {"rf", "rf-aann-ga"}:
        steps.append(["train", "rf", "--in", "data/train.csv", "--out", "models/rf.json"])
    if strategies & set(AANN_STRATEGIES):
        steps.append(["train", "aann", "--in", "data/train.csv",
                      "--validation", "data/validation.csv", "--out", "models/aann.json"])
    codes = sorted({parse_label(l)[1] for l in cfg.sets})
    for code in codes:
        vs = ",".join(SET_PATTERNS[code])
        steps.append(["inject", "--in", "data/experiment.csv", "--variables", vs,
                      "--stream", "experiment", "--out", f"sets/missing_{code}.csv"])
        if any(parse_label(l) == ("aann-ga-rf", code, SET_PATTERNS[code]) for l in cfg.sets):
            steps.append(["inject", "--in", "data/test.csv", "--variables", vs,
                          "--stream", "test", "--out", f"sets/test_missing_{code}.csv"])
            steps.append(["train", "correction", "--in", "data/test.csv",
                          "--network", "models/aann.json",
                          "--incomplete", f"sets/test_missing_{code}.csv",
                          "--out", f"models/correction_{code}.json"])
    for label in cfg.sets:
        strategy, code, _ = parse_label(label)
        step = ["impute", "--label", label, "--in", f"sets/missing_{code}.csv",
                "--out", f"sets/{label}.csv"]
        if strategy in ("rf", "rf-aann-ga"):
            step += ["--model", "models/rf.json"]
        if strategy in ("mean", "random"):
            step += ["--train", "data/train.csv"]
        if strategy in AANN_STRATEGIES:
            step += ["--network", "models/aann.json"]
        if strategy == "aann-ga-rf":
            step += ["--correction", f"models/correction_{code}.json"]
        steps.append(step)
    set_files = [f"sets/{l}.csv" for l in cfg.sets]
    steps += [
        ["assess", "stats", "--target", "data/experiment.csv", "--sets", *set_files,
         "--out", "reports/stats"],
        ["assess", "classify", "--target", "data/experiment.csv", "--train", "data/train.csv",
         "--sets", *set_files, "--out", "reports/classify"],
        ["assess", "lr", "--target", "data/experiment.csv", "--train", "data/train.csv",
         "--sets", *set_files, "--out", "reports/lr"],
    ]
    for label in cfg.sets:
        code = parse_label(label)[1]
        steps.append(["assess", "range-accuracy", "--target", "data/experiment.csv",
                      "--sets", f"sets/{label}.csv", "--incomplete", f"sets/missing_{code}.csv",
                      "--out", f"reports/range_{label}"])
    for step in steps:
        execute(step + common, base_dir=out_dir, threads=args.threads)
    return [], ["manifest.json"]


def cmd_replay(args, cfg=None):
    """Re-execute every manifest step into a fresh directory and compare digests."""
    mpath = _path(args, args.manifest_file)
    try:
        doc = json.loads(mpath.read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {args.manifest_file}: {exc}") from None
    if doc.get("format") != MANIFEST_FORMAT:
        raise DataError(f"unsupported manifest format {doc.get('format')!r}")
    src = mpath.parent
    dst = Path(args.out_dir) if args.out_dir else Path(tempfile.mkdtemp(prefix="rfimpute-replay-"))
    dst.mkdir(parents=True, exist_ok=True)
    produced = set()
    for k, step in enumerate(doc["steps"]):
        for p, digest in step["inputs"].items():
            target = Path(p) if Path(p).is_absolute() else dst / p
            if p not in produced and not Path(p).is_absolute():
                origin = src / p
                if not origin.exists():
                    raise DataError(f"step {k}: input {p} not found")
                if origin.resolve() != target.resolve():
                    target.parent.mkdir(parents=True, exist_ok=True)
                    shutil.copyfile(origin, target)
            actual = sha256_file(target)
            if actual != digest:
                raise ReproducibilityError(f"step {k} ({step['argv'][0]}): input {p} digest "
                                           f"{actual[:12]} != recorded {digest[:12]}")
        ns = _parse(step["argv"], base_dir=dst, threads=args.threads)
        step_cfg = load_config(ns) if ns.command != "replay" else None
        if step_cfg is not None and step_cfg.sha256() != step["config_sha256"]:
            raise ReproducibilityError(f"step {k} ({step['argv'][0]}): config hash mismatch")
        _, outputs = ns.func(ns, step_cfg)
        for p, digest in step["outputs"].items():
            actual = sha256_file(Path(p) if Path(p).is_absolute() else dst / p)
            if actual != digest:
                raise ReproducibilityError(f"step {k} ({step['argv'][0]}): output {p} digest "
                                           f"{actual[:12]} != recorded {digest[:12]}")
            produced.add(p)
    log.info("replayed %d steps into %s; all digests match", len(doc["steps"]), dst)
    print(f"replay ok: {len(doc['steps'])} steps, outputs in {dst}")
    return [], []


# --------------------------------------------------------------------------
# Manifest recording and dispatch

def _append_manifest(args, argv, cfg, inputs, outputs):
    mpath = _path(args, args.manifest)
    doc = {"format": MANIFEST_FORMAT, "steps": []}
    if mpath.exists():
        doc = json.loads(mpath.read_text())
    doc["steps"].append({
        "argv": argv,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": {str(p): sha256_file(_path(args, p)) for p in inputs},
        "outputs": {str(p): sha256_file(_path(args, p)) for p in outputs},
    })
    mpath.parent.mkdir(parents=True, exist_ok=True)
    write_json(doc, mpath)


def _strip_run_options(argv):
    """argv without --threads/--manifest/--base-dir (not part of a step's identity)."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--threads", "--manifest", "--base-dir"):
            skip = True
            continue
        if tok.startswith(("--threads=", "--manifest=", "--base-dir=")):
            continue
        out.append(tok)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfimpute", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--manifest", help="append this step to a manifest file")
        p.add_argument("--base-dir", default=".", help=argparse.SUPPRESS)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic survey dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)

    p = add("clean", cmd_clean, "flag rule-violating cells as missing")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("split", cmd_split, "partition into train/validation/test/experiment")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--keep-incomplete", action="store_true",
                   help="keep rows with missing cells (dropped by default)")

    p = add("inject", cmd_inject, "remove cells per the configured missingness plan")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variables", required=True, help="comma-separated variable names")
    p.add_argument("--stream", default="", help="extra seed key, e.g. the set name")

    p = add("train", cmd_train, "train an imputation model")
    p.add_argument("model", choices=("rf", "aann", "correction"))
    p.add_argument("--in", dest="input", required=True,
                   help="training set (for correction: the complete test set)")
    p.add_argument("--validation")
    p.add_argument("--network")
    p.add_argument("--incomplete", help="test set with injected missingness (correction)")
    p.add_argument("--out", required=True)

    p = add("impute", cmd_impute, "complete a dataset with one strategy")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", help="set label such as RF2A or R1B")
    p.add_argument("--strategy", choices=tuple(STRATEGY_PREFIX))
    p.add_argument("--variables")
    p.add_argument("--model")
    p.add_argument("--network")
    p.add_argument("--correction")
    p.add_argument("--train")

    p = add("assess", cmd_assess, "impact reports against the target set T")
    p.add_argument("kind", choices=("stats", "classify", "lr", "range-accuracy", "qq"))
    p.add_argument("--target")
    p.add_argument("--sets", nargs="+", default=[])
    p.add_argument("--train")
    p.add_argument("--variables")
    p.add_argument("--incomplete")
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "whole pipeline from a config, with a manifest")
    p.add_argument("--out-dir", required=True)

    p = add("replay", cmd_replay, "re-execute a manifest and verify digests")
    p.add_argument("manifest_file")
    p.add_argument("--out-dir")
    return parser


def _parse(argv, base_dir=".", threads=None):
    ns = build_parser().parse_args(argv)
    ns.base_dir = str(base_dir) if base_dir != "." else ns.base_dir
    if threads is not None:
        ns.threads = threads
    if ns.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return ns


def execute(argv, base_dir=".", threads=None):
    """Run one command; used by main, run and tests."""
    ns = _parse(argv, base_dir, threads)
    if ns.command == "replay":
        return cmd_replay(ns)
    cfg = load_config(ns)
    inputs, outputs = ns.func(ns, cfg)
    if ns.manifest:
        if ns.config:
            inputs = [ns.config] + list(inputs)
        _append_manifest(ns, _strip_run_options(argv), cfg, inputs, outputs)
    return inputs, outputs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = [a for a in argv if a not in ("-v", "--verbose")]
    try:
        execute(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except RfImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
