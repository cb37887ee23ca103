"""Command-line front end: ingest, synth, train, gridsearch, evaluate, predict, gradcheck, reproduce.

Settings resolve as built-in defaults < ``--config`` JSON file < flags, with
``CATCAST_SEED`` standing in for the seed when neither supplies one. Every
report embeds the tool version and the resolved run config so that
``catcast reproduce <report>`` can re-execute it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile

import numpy as np

from catcast import __version__, core
from catcast.baselines import EncodedClassifier, FlatTree, forest_fit, logreg_fit, tree_fit
from catcast.encoders import EncodingScheme, encode_indices
from catcast.errors import CatcastError, ConfigError, FormatError, UsageError
from catcast.ingest import (
    DEFAULT_MAX_YEAR,
    DEFAULT_MIN_YEAR,
    DEFAULT_TEST_YEAR,
    Dataset,
    GeneratorSpec,
    bayes_accuracy,
    ingest,
    parse_csv,
    synth_raw,
    write_csv,
)
from catcast.neural import persist
from catcast.neural.layers import EmbeddingInput
from catcast.neural.model import build_stage_model
from catcast.neural.train import TrainConfig, grad_check, kink_margin, train
from catcast.pipeline import (
    STAGES,
    build_stage_plan,
    chain_predict,
    evaluate_stage,
    normalize_record,
    report_from_probs,
    stage_labels,
)
from catcast.search import SearchTrace, default_grid, run_search

log = logging.getLogger("catcast")

COMMANDS = ("ingest", "synth", "train", "gridsearch", "evaluate", "predict", "gradcheck", "reproduce")
MODEL_KINDS = ("mlp", "conv1d", "logreg", "tree", "forest")
ENCODINGS = ("integer", "binary", "hashing", "one-hot", "embedding")
MODE_NAMES = {"teacher": "teacher_forced", "chained": "chained"}
GRADCHECK_TOL = 1e-4

DEFAULTS = {
    "ingest": {"min_year": DEFAULT_MIN_YEAR, "max_year": DEFAULT_MAX_YEAR, "test_year": DEFAULT_TEST_YEAR,
               "rename": None},
    "synth": {"rows": 1000},
    "train": {"stage": 1, "model": None, "encoding": "embedding", "hash_buckets": 256, "epochs": None,
              "batch_size": 128, "lr": None, "optimizer": "adam", "dropout": None, "hidden": None,
              "convs": None, "pool": None, "head": None, "activation": None, "n_trees": 100,
              "max_depth": None, "min_samples": 2, "report": None},
    "gridsearch": {"family": "mlp", "stage": 1, "k": 5, "budget": None, "encoding": "one-hot",
                   "hash_buckets": 256, "width_scale": 1.0, "max_rows": None},
    "evaluate": {"stage": "all", "mode": "teacher", "split": "test", "report": None},
    "predict": {"var": [], "record": None, "top": 3},
    "gradcheck": {"width": 8, "rows": 4, "attempts": 50},
}
# settings that only name where output goes; never compared on reproduce
OUTPUT_KEYS = {"out", "report", "trace"}


# Helpers ---------------------------------------------------------------------

def _csv_ints(text, name):
    if text is None or isinstance(text, list):
        return text
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name} expects comma-separated integers, got {text!r}") from exc


def _conv_pairs(text):
    """'128x4,256x3' -> [(128, 4), (256, 3)]."""
    if text is None or isinstance(text, list):
        return [tuple(p) for p in text] if text else text
    pairs = []
    for part in str(text).split(","):
        try:
            filters, kernel = part.lower().split("x")
            pairs.append((int(filters), int(kernel)))
        except ValueError as exc:
            raise UsageError(f"--convs expects FILTERSxKERNEL items, got {part!r}") from exc
    return pairs


def _sha256(path) -> str:
    with open(path, "rb") as fh:
        return "sha256:" + hashlib.sha256(fh.read()).hexdigest()


def _need(cfg, *names):
    missing = [n for n in names if cfg.get(n) in (None, [], "")]
    if missing:
        raise UsageError(f"{cfg['command']}: missing required option(s): "
                         + ", ".join("--" + n.replace("_", "-") for n in missing))


def load_artifact(path):
    """Neural model or baseline, told apart by the file's leading bytes."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(persist.MAGIC))
    except OSError as exc:
        raise FormatError(f"cannot read model artifact {path}: {exc}") from exc
    if head == persist.MAGIC:
        return persist.load_model(path)
    return EncodedClassifier.load(path)


def _stage_of(model, path) -> int:
    stage = getattr(model, "stage", None)
    if stage not in STAGES:
        raise FormatError(f"{path}: artifact does not record its stage")
    return stage


def _load_stage_models(paths) -> dict:
    models = {}
    for path in paths:
        model = load_artifact(path)
        stage = _stage_of(model, path)
        if stage in models:
            raise UsageError(f"two artifacts given for stage {stage}")
        models[stage] = (model, path)
    return models


def _portable(cfg: dict) -> dict:
    """Run config without output locations, so artifacts do not depend on where they are written."""
    return {k: v for k, v in cfg.items() if k not in OUTPUT_KEYS}


def make_report(cfg: dict, metrics: dict) -> dict:
    return {"tool": "catcast", "version": __version__, "run_config": cfg, "metrics": metrics}


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _pct(x) -> str:
    return f"{100.0 * x:6.2f}%"


# Commands --------------------------------------------------------------------

def cmd_ingest(cfg: dict) -> dict:
    _need(cfg, "input", "out")
    rename = None
    if cfg.get("rename"):
        with open(cfg["rename"], encoding="utf-8") as fh:
            rename = json.load(fh)
    raw = parse_csv(cfg["input"])
    data = ingest(raw, cfg["min_year"], cfg["max_year"], cfg["test_year"], cfg["seed"], rename)
    data.info["run_config"] = cfg
    data.save(cfg["out"])
    return make_report(cfg, dict(data.info, cardinalities={
        v.name: v.vocabulary.cardinality for v in data.table.schema.variables}))


def cmd_synth(cfg: dict) -> dict:
    _need(cfg, "spec", "out")
    spec = GeneratorSpec.load(cfg["spec"])
    if cfg["rows"] < 1:
        raise UsageError("--rows must be >= 1")
    write_csv(synth_raw(spec, cfg["rows"]), cfg["out"])
    return make_report(cfg, {"rows": cfg["rows"], "epsilon": spec.epsilon,
                             "bayes_accuracy": {str(s): bayes_accuracy(spec, s) for s in STAGES}})


def _train_neural(cfg, data, plan):
    overrides = {"seed": cfg["seed"]}
    for key, value in (("hidden", _csv_ints(cfg["hidden"], "hidden")), ("convs", _conv_pairs(cfg["convs"])),
                       ("pool", cfg["pool"]), ("head", _csv_ints(cfg["head"], "head")),
                       ("activation", cfg["activation"])):
        if value is not None:
            overrides[key] = value
    if cfg["dropout"] is not None:
        overrides["dropout"] = cfg["dropout"]
    if cfg["encoding"] != "embedding":
        overrides["encoding"] = cfg["encoding"]
        overrides["buckets"] = cfg["hash_buckets"]
    model = build_stage_model(plan.stage_id, data.table.schema, cfg["model"], overrides)
    config = TrainConfig(epochs=cfg["epochs"] or 50, batch_size=cfg["batch_size"],
                         learning_rate=cfg["lr"] or 0.001, optimizer=cfg["optimizer"],
                         dropout=cfg["dropout"], seed=cfg["seed"])
    history = train(model, data.part("train"), data.part("validation"), config)
    model.provenance["run_config"] = _portable(cfg)
    persist.save_model(model, cfg["out"])
    return model, [h.to_dict() for h in history]


def _train_baseline(cfg, data, plan):
    if cfg["encoding"] == "embedding":
        raise UsageError(f"--model {cfg['model']} needs a classical --encoding, not embedding")
    schema = data.table.schema
    scheme = EncodingScheme(cfg["encoding"], cfg["hash_buckets"])
    part = data.part("train")
    x_idx = part.columns(plan.inputs)
    y = stage_labels(part, plan)
    known = y >= 0
    X = encode_indices(x_idx[known], [schema.vocab(n) for n in plan.inputs], scheme)
    y = y[known]
    k = plan.target_cardinality
    history = []
    if cfg["model"] == "logreg":
        est = logreg_fit(X, y, lr=cfg["lr"] or 0.1, epochs=cfg["epochs"] or 50, seed=cfg["seed"],
                         batch_size=cfg["batch_size"], n_classes=k)
        history = [{"epoch": i + 1, "train_loss": loss} for i, loss in enumerate(est.history)]
    elif cfg["model"] == "tree":
        rng = np.random.default_rng(cfg["seed"])
        est = FlatTree(tree_fit(X, y, cfg["max_depth"], cfg["min_samples"], k, rng=rng), k)
    else:
        est = forest_fit(X, y, n_trees=cfg["n_trees"], max_depth=cfg["max_depth"], seed=cfg["seed"],
                         min_samples=cfg["min_samples"], n_classes=k, threads=cfg["threads"])
    model = EncodedClassifier(cfg["model"], scheme, est, schema, plan.inputs, plan.target, plan.stage_id,
                              {"run_config": _portable(cfg)})
    model.save(cfg["out"])
    return model, history


def cmd_train(cfg: dict) -> dict:
    _need(cfg, "data", "out", "model")
    if cfg["model"] not in MODEL_KINDS:
        raise UsageError(f"--model must be one of {MODEL_KINDS}")
    if cfg["encoding"] not in ENCODINGS:
        raise UsageError(f"--encoding must be one of {ENCODINGS}")
    data = Dataset.load(cfg["data"])
    plan = build_stage_plan(int(cfg["stage"]), data.table.schema)
    fit = _train_neural if cfg["model"] in ("mlp", "conv1d") else _train_baseline
    model, history = fit(cfg, data, plan)
    val = data.part("validation")
    probs = model.predict_proba(val.columns(plan.inputs))
    report = report_from_probs(probs, stage_labels(val, plan), plan.stage_id, "teacher_forced")
    metrics = {"history": history, "validation": report.to_dict(), "artifact": _sha256(cfg["out"])}
    doc = make_report(cfg, metrics)
    if cfg.get("report"):
        _write_json(cfg["report"], doc)
    return doc


def cmd_gridsearch(cfg: dict) -> dict:
    _need(cfg, "data")
    if int(cfg["k"]) < 2:
        raise UsageError("--k must be >= 2")
    data = Dataset.load(cfg["data"])
    table = data.part("train")
    if cfg["max_rows"]:
        table = table.subset(np.arange(min(int(cfg["max_rows"]), len(table))))
    plan = build_stage_plan(int(cfg["stage"]), table.schema)
    base = {"width_scale": float(cfg["width_scale"])}
    if cfg["encoding"] != "embedding":
        base.update(encoding=cfg["encoding"], buckets=cfg["hash_buckets"])
    trace = run_search(default_grid(cfg["family"]), table, plan, int(cfg["k"]), cfg["seed"],
                       cfg["budget"], base)
    trace.meta = {"tool": "catcast", "version": __version__, "run_config": cfg}
    if cfg.get("trace"):
        trace.save(cfg["trace"])
    metrics = {"winners": trace.winners, "final": trace.final,
               "configs": [{k: r[k] for k in ("iteration", "index", "fold_scores", "mean")} for r in trace.records]}
    return make_report(cfg, metrics)


def cmd_evaluate(cfg: dict) -> dict:
    _need(cfg, "data", "model")
    if cfg["mode"] not in MODE_NAMES:
        raise UsageError(f"--mode must be one of {tuple(MODE_NAMES)}")
    data = Dataset.load(cfg["data"])
    part = data.part(cfg["split"])
    loaded = _load_stage_models(cfg["model"])
    stages = sorted(loaded) if cfg["stage"] == "all" else [int(cfg["stage"])]
    for s in stages:
        if s not in loaded:
            raise UsageError(f"no artifact for stage {s}")
    mode = MODE_NAMES[cfg["mode"]]
    upstream = {s: m for s, (m, _) in loaded.items()}
    rows = []
    for s in stages:
        model, path = loaded[s]
        prov = {"artifact": path, "checksum": _sha256(path),
                "model": getattr(model, "kind", None) or model.provenance.get("family")}
        plan = build_stage_plan(s, part.schema)
        rows.append(evaluate_stage(model, part, plan, mode, upstream, prov).to_dict())
    doc = make_report(cfg, {"split": cfg["split"], "stages": rows})
    if cfg.get("report"):
        _write_json(cfg["report"], doc)
    return doc


def _record_from_args(cfg) -> dict:
    record = {}
    if cfg.get("record"):
        raw = parse_csv(cfg["record"])
        if len(raw) != 1:
            raise UsageError(f"{cfg['record']}: expected exactly one data row, found {len(raw)}")
        record.update(zip(raw.header, raw.cells[0]))
    for item in cfg.get("var") or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--var expects NAME=value, got {item!r}")
        record[name.strip().upper()] = value
    return record


def cmd_predict(cfg: dict) -> dict:
    _need(cfg, "model")
    loaded = _load_stage_models(cfg["model"])
    if 1 not in loaded:
        raise UsageError("predict needs at least the stage-1 model")
    record = _record_from_args(cfg)
    values = normalize_record(record)
    for name in core.STAGE1_INPUTS:
        if name not in values:
            raise UsageError(f"missing required variable {name}")
    models = {}
    for s in STAGES:
        if s not in loaded:
            break
        models[s] = loaded[s][0]
    unknown: list[str] = []
    preds = chain_predict(record, models, int(cfg["top"]), unknown)
    for name in unknown:
        log.warning("unknown value for %s: %r (predicted through the unseen-category slot)",
                    name, values[name])
    return make_report(cfg, {"predictions": [p.to_dict() for p in preds], "unknown": unknown})


def _gradcheck_schema(seed):
    spec = GeneratorSpec.random({v: c for v, c in zip(
        (core.MONTH, core.NOTIFICATION_COUNTRY, core.DISTRIBUTION_STATUS, core.COUNTRY_ORIGIN,
         core.PRODUCT_CATEGORY, core.HAZARD_CATEGORY, core.ACTION_TAKEN), (12, 6, 5, 9, 7, 6, 5))}, 0.0, seed)
    return spec.schema()


def reduced_stage_model(stage: int, schema, width: int, seed: int, activation="relu", family=None):
    """A stage architecture with every width capped, for finite-difference checks."""
    dims = {v.name: 3 for v in schema.variables}
    overrides = {"hidden": [width, width], "convs": [(width, 3), (width, 2)], "pool": 2,
                 "head": [width], "activation": activation, "dropout": 0.0,
                 "embedding_dims": dims, "seed": seed}
    model = build_stage_model(stage, schema, family, overrides)
    for layer in model.layers:
        if isinstance(layer, EmbeddingInput):
            for table in layer.params.values():
                table *= 20.0  # spread activations away from kinks
    return model


def check_stage_gradients(stage, width=8, rows=4, seed=0, attempts=50, activation="relu", family=None):
    """(max relative error, kink margin, seed used) for a reduced stage model."""
    schema = _gradcheck_schema(seed)
    plan = build_stage_plan(stage, schema)
    best = None
    for a in range(attempts):
        s = seed * 1000 + a
        rng = np.random.default_rng(s)
        model = reduced_stage_model(stage, schema, width, s, activation, family)
        batch = np.stack([rng.integers(1, schema.vocab(n).cardinality + 1, size=rows) for n in plan.inputs], axis=1)
        labels = rng.integers(plan.target_cardinality, size=rows)
        margin = kink_margin(model, batch)
        if best is None or margin > best[1]:
            best = (model, margin, s, batch, labels)
        if margin >= 1e-2:
            break
    model, margin, s, batch, labels = best
    return grad_check(model, batch, labels, h=1e-5), margin, s


def cmd_gradcheck(cfg: dict) -> dict:
    results = []
    for stage in STAGES:
        err, margin, used = check_stage_gradients(stage, int(cfg["width"]), int(cfg["rows"]), cfg["seed"],
                                                  int(cfg["attempts"]))
        results.append({"stage": stage, "max_rel_error": err, "kink_margin": margin, "seed": used,
                        "passed": bool(err < GRADCHECK_TOL)})
    doc = make_report(cfg, {"tolerance": GRADCHECK_TOL, "stages": results})
    if not all(r["passed"] for r in results):
        doc["failed"] = True
    return doc


RUNNERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def _rerun(cfg: dict) -> dict:
    """Execute ``cfg`` again with every output path redirected to a scratch directory."""
    cfg = dict(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        for key in OUTPUT_KEYS & set(cfg):
            if cfg[key] is not None and not (cfg["command"] == "ingest" and key == "out"):
                cfg[key] = os.path.join(tmp, key)
        if cfg["command"] == "ingest":
            cfg["out"] = os.path.join(tmp, "data")
        return RUNNERS[cfg["command"]](cfg)


def cmd_reproduce(cfg: dict) -> dict:
    _need(cfg, "report")
    path = cfg["report"]
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read report {path}: {exc}") from exc
    first = text.lstrip().split("\n", 1)[0]
    try:
        head = json.loads(first) if first.startswith("{\"") and first.rstrip().endswith("}") else None
    except ValueError:
        head = None
    if head is not None and head.get("type") == "search":
        old = SearchTrace.load(path)
        run_config = old.meta.get("run_config")
        if not run_config:
            raise FormatError(f"{path}: trace carries no run config")
        new = _rerun(run_config)
        expected = {"winners": old.winners, "final": old.final}
        got = {"winners": new["metrics"]["winners"], "final": new["metrics"]["final"]}
    else:
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise FormatError(f"{path}: not a JSON report: {exc}") from exc
        run_config = doc.get("run_config") if isinstance(doc, dict) else None
        if not run_config or run_config.get("command") not in RUNNERS:
            raise FormatError(f"{path}: report carries no usable provenance")
        new = _rerun(run_config)
        expected, got = doc.get("metrics"), json.loads(json.dumps(new["metrics"]))
        if run_config["command"] == "evaluate":
            expected, got = _strip_paths(expected), _strip_paths(got)
    same = json.loads(json.dumps(expected)) == got
    out = make_report(cfg, {"reproduced": same, "source": path, "command": run_config["command"]})
    if not same:
        out["failed"] = True
        log.error("metrics differ from %s", path)
    return out


def _strip_paths(metrics):
    """Artifact paths may legitimately move; checksums may not."""
    metrics = json.loads(json.dumps(metrics))
    for row in (metrics or {}).get("stages", []):
        row.get("provenance", {}).pop("artifact", None)
    return metrics


RUNNERS["reproduce"] = cmd_reproduce


# Rendering -------------------------------------------------------------------

def render_text(doc: dict) -> str:
    cfg, m = doc["run_config"], doc["metrics"]
    command = cfg["command"]
    lines = []
    if command == "evaluate":
        lines.append(f"split: {m['split']}  mode: {cfg['mode']}")
        lines.append(f"{'stage':<6} {'model':<8} {'Top1':>8} {'Top2':>8} {'Top3':>8} {'n':>7}")
        for r in m["stages"]:
            lines.append(f"{r['stage']:<6} {str(r['provenance'].get('model')):<8} {_pct(r['top1']):>8} "
                         f"{_pct(r['top2']):>8} {_pct(r['top3']):>8} {r['n_evaluated']:>7}")
    elif command == "train":
        for h in m["history"][-5:]:
            val = h.get("val_top1")
            lines.append(f"epoch {h['epoch']:>4}  loss {h['train_loss']:.6f}"
                         + (f"  val Top1 {_pct(val)}" if val is not None else ""))
        v = m["validation"]
        lines.append(f"validation Top1 {_pct(v['top1'])}  Top2 {_pct(v['top2'])}  Top3 {_pct(v['top3'])}")
        lines.append(f"artifact {cfg['out']} ({m['artifact']})")
    elif command == "predict":
        for p in m["predictions"]:
            lines.append(f"stage {p['stage']} {p['target']}:")
            for c in p["candidates"]:
                lines.append(f"  {c['category']:<40} {c['probability']:.4f}")
    elif command == "gridsearch":
        for w in m["winners"]:
            lines.append(f"iteration {w['iteration']}: {json.dumps(w['values'], sort_keys=True)}  mean Top1 {_pct(w['mean'])}")
        lines.append("final: " + json.dumps(m["final"], sort_keys=True))
    elif command == "gradcheck":
        for r in m["stages"]:
            lines.append(f"stage {r['stage']}: max rel error {r['max_rel_error']:.3e} "
                         f"(margin {r['kink_margin']:.3g}) {'ok' if r['passed'] else 'FAIL'}")
    elif command == "reproduce":
        lines.append(f"{m['source']}: {'reproduced' if m['reproduced'] else 'metrics differ'}")
    else:
        lines.extend(f"{k}: {v}" for k, v in m.items())
    return "\n".join(lines)


# Argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=S, help="JSON file of settings; flags override it")
    common.add_argument("--seed", type=int, default=S, help="global seed (fallback: $CATCAST_SEED, then 0)")
    common.add_argument("--format", choices=("text", "machine"), default=S, help="stdout rendering")
    common.add_argument("--threads", type=int, default=S, help="worker cap (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    parser = argparse.ArgumentParser(prog="catcast", description="Staged categorical prediction for food-safety notifications.")
    parser.add_argument("--version", action="version", version=f"catcast {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="clean a CSV dump into an indexed, split dataset")
    p.add_argument("--input", default=S)
    p.add_argument("--min-year", type=int, default=S)
    p.add_argument("--max-year", type=int, default=S)
    p.add_argument("--test-year", type=int, default=S)
    p.add_argument("--rename", default=S, help="JSON map of category renames")
    p.add_argument("--out", default=S, help="dataset directory")

    p = sub.add_parser("synth", parents=[common], help="sample a synthetic CSV dump from a generator spec")
    p.add_argument("--spec", default=S)
    p.add_argument("--rows", type=int, default=S)
    p.add_argument("--out", default=S, help="CSV path")

    p = sub.add_parser("train", parents=[common], help="fit one stage model")
    p.add_argument("--data", default=S)
    p.add_argument("--stage", type=int, choices=STAGES, default=S)
    p.add_argument("--model", choices=MODEL_KINDS, default=S)
    p.add_argument("--encoding", choices=ENCODINGS, default=S)
    p.add_argument("--hash-buckets", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adagrad", "adam"), default=S)
    p.add_argument("--dropout", type=float, default=S)
    p.add_argument("--hidden", default=S, help="MLP widths, e.g. 2048,1024,512")
    p.add_argument("--convs", default=S, help="conv layers, e.g. 128x4,256x3")
    p.add_argument("--pool", type=int, default=S)
    p.add_argument("--head", default=S, help="dense widths after the conv stack")
    p.add_argument("--activation", default=S)
    p.add_argument("--n-trees", type=int, default=S)
    p.add_argument("--max-depth", type=int, default=S)
    p.add_argument("--min-samples", type=int, default=S)
    p.add_argument("--out", default=S, help="model artifact path")
    p.add_argument("--report", default=S)

    p = sub.add_parser("gridsearch", parents=[common], help="iterative grid search with k-fold CV")
    p.add_argument("--data", default=S)
    p.add_argument("--family", choices=("mlp", "conv1d"), default=S)
    p.add_argument("--stage", type=int, choices=STAGES, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--budget", type=int, default=S)
    p.add_argument("--encoding", choices=ENCODINGS, default=S)
    p.add_argument("--hash-buckets", type=int, default=S)
    p.add_argument("--width-scale", type=float, default=S, help="shrink every layer width (desk runs)")
    p.add_argument("--max-rows", type=int, default=S, help="use only the first N training rows")
    p.add_argument("--trace", default=S)

    p = sub.add_parser("evaluate", parents=[common], help="Top1/2/3 of stage models")
    p.add_argument("--data", default=S)
    p.add_argument("--stage", choices=("1", "2", "3", "all"), default=S)
    p.add_argument("--mode", choices=tuple(MODE_NAMES), default=S)
    p.add_argument("--split", choices=("train", "validation", "test"), default=S)
    p.add_argument("--model", nargs="+", default=S)
    p.add_argument("--report", default=S)

    p = sub.add_parser("predict", parents=[common], help="top-3 categories per stage for one record")
    p.add_argument("--model", nargs="+", default=S)
    p.add_argument("--var", action="append", default=S, metavar="NAME=VALUE")
    p.add_argument("--record", default=S, help="one-row CSV")
    p.add_argument("--top", type=int, default=S)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the stage architectures")
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--rows", type=int, default=S)
    p.add_argument("--attempts", type=int, default=S)

    p = sub.add_parser("reproduce", parents=[common], help="rerun a report or trace and compare its metrics")
    p.add_argument("report")
    return parser


def resolve_config(ns: argparse.Namespace, env=os.environ) -> tuple[dict, str]:
    flags = {k: v for k, v in vars(ns).items()}
    command = flags.pop("command")
    file_cfg = {}
    if "config" in flags:
        path = flags.pop("config")
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    fmt = flags.pop("format", file_cfg.pop("format", "text"))
    flags.pop("verbose", None)
    file_cfg.pop("verbose", None)
    cfg = {**DEFAULTS.get(command, {}), "threads": 1, **file_cfg, **flags, "command": command}
    if "seed" not in flags and "seed" not in file_cfg:
        try:
            cfg["seed"] = int(env.get("CATCAST_SEED", 0))
        except ValueError as exc:
            raise UsageError(f"CATCAST_SEED must be an integer, got {env.get('CATCAST_SEED')!r}") from exc
    return cfg, fmt


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg, fmt = resolve_config(ns)
        doc = RUNNERS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"catcast: usage error: {exc}", file=sys.stderr)
        return 2
    except (CatcastError, OSError) as exc:
        print(f"catcast: error: {exc}", file=sys.stderr)
        return 1
    if fmt == "machine":
        print(json.dumps(doc, sort_keys=True))
    else:
        print(render_text(doc))
    return 1 if doc.get("failed") else 0


if __name__ == "__main__":
    sys.exit(main())
