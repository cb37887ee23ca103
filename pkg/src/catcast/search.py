"""Staged grid search scored by k-fold cross-validated Top1.

Each iteration sweeps only its own hyperparameters; earlier winners stay
frozen and not-yet-searched parameters sit at their defaults.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from catcast.core import Table
from catcast.errors import ConfigError
from catcast.ingest import FoldPlan, make_folds
from catcast.neural.model import CONV_HEAD, build_stage_model
from catcast.neural.train import TrainConfig, train
from catcast.pipeline import StagePlan, stage_labels, topk_accuracy

log = logging.getLogger(__name__)

ACTIVATION_GRID = ["relu", "tanh", "sigmoid", "hard_sigmoid"]
TRAINING_ITERATIONS = [
    {"dropout": [0.1, 0.2, 0.3, 0.5], "epochs": [10, 25, 50, 100, 150]},
    {"optimizer": ["sgd", "rmsprop", "adagrad", "adam"]},
    {"learning_rate": [0.01, 0.001, 0.005]},
]
DEFAULTS = {
    "hidden_layers": 3,
    "neurons": 2048,
    "filters": 128,
    "kernel": 4,
    "maxpool": 2,
    "activation": "relu",
    "dropout": 0.2,
    "epochs": 25,
    "optimizer": "adam",
    "learning_rate": 0.001,
    "batch_size": 128,
}
MIN_NEURONS = 64


@dataclass
class GridSpec:
    family: str
    iterations: list[dict[str, list]]

    def __post_init__(self):
        if self.family not in ("mlp", "conv1d"):
            raise ConfigError(f"unknown family {self.family!r}")
        for i, it in enumerate(self.iterations):
            if not it or any(len(v) == 0 for v in it.values()):
                raise ConfigError(f"iteration {i + 1} has an empty candidate list")

    def configs(self, i: int) -> list[dict]:
        it = self.iterations[i]
        names = list(it)
        return [dict(zip(names, values)) for values in itertools.product(*(it[n] for n in names))]

    def size(self, i: int) -> int:
        return int(np.prod([len(v) for v in self.iterations[i].values()]))


def default_grid(family: str) -> GridSpec:
    if family == "mlp":
        first = {
            "hidden_layers": [1, 2, 3, 4],
            "neurons": [128, 256, 512, 1024, 2048, 4096],
            "activation": list(ACTIVATION_GRID),
        }
    elif family == "conv1d":
        first = {
            "hidden_layers": [1, 2, 3, 4],
            "filters": [32, 64, 128, 256, 512],
            "kernel": [2, 3, 4, 5],
            "maxpool": [2, 3, 4],
            "activation": list(ACTIVATION_GRID),
        }
    else:
        raise ConfigError(f"unknown family {family!r}")
    return GridSpec(family, [first] + [{k: list(v) for k, v in it.items()} for it in TRAINING_ITERATIONS])


def model_overrides(params: dict, family: str, base: dict | None = None) -> dict:
    """Translate grid parameters into stage-model overrides.

    MLP layer i gets max(neurons / 2**i, 64) units; conv layer i gets
    filters * 2**i filters, all with the same kernel and pool size. A
    ``width_scale`` entry in ``base`` multiplies every width (including the
    64-unit floor and the dense head after a conv stack) for desk-scale runs.
    """
    o = dict(base or {})
    scale = float(o.pop("width_scale", 1.0))

    def scaled(width):
        return max(1, int(round(width * scale)))

    o["activation"] = params["activation"]
    o["dropout"] = params["dropout"]
    layers = int(params["hidden_layers"])
    if family == "mlp":
        o["hidden"] = [max(scaled(int(params["neurons"])) // 2 ** i, scaled(MIN_NEURONS)) for i in range(layers)]
    else:
        o["convs"] = [(scaled(int(params["filters"])) * 2 ** i, int(params["kernel"])) for i in range(layers)]
        o["pool"] = int(params["maxpool"])
        o["head"] = [scaled(w) for w in o.get("head", CONV_HEAD)]
    return o


def train_config(params: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=int(params["epochs"]),
        batch_size=int(params["batch_size"]),
        learning_rate=float(params["learning_rate"]),
        optimizer=params["optimizer"],
        dropout=float(params["dropout"]),
        seed=seed,
    )


def score_config(params: dict, table: Table, plan: StagePlan, folds: FoldPlan, family: str,
                 seed: int, base_overrides: dict | None = None) -> list[float]:
    """Validation Top1 on each fold after training on the other folds.

    Raises ConfigError when the architecture cannot be built (e.g. a conv
    stack longer than its input).
    """
    overrides = model_overrides(params, family, base_overrides)
    overrides["seed"] = seed
    config = train_config(params, seed)
    scores = []
    for i in range(folds.k):
        model = build_stage_model(plan.stage_id, table.schema, family, overrides)
        train(model, table.subset(folds.train_indices(i)), None, config)
        held = table.subset(folds.folds[i])
        probs = model.predict_proba(held.columns(plan.inputs))
        scores.append(topk_accuracy(probs, stage_labels(held, plan), 1))
    return scores


@dataclass
class SearchTrace:
    family: str
    stage: int
    k: int
    seed: int
    budget: int | None
    base_overrides: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    winners: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def lines(self) -> list[dict]:
        head = {"type": "search", "family": self.family, "stage": self.stage, "k": self.k,
                "seed": self.seed, "budget": self.budget, "base_overrides": self.base_overrides, "meta": self.meta}
        out = [head] + [{"type": "config", **r} for r in self.records]
        out += [{"type": "winner", **w} for w in self.winners]
        out.append({"type": "final", "params": self.final})
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(json.dumps(line, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SearchTrace":
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        head = lines[0]
        trace = cls(head["family"], head["stage"], head["k"], head["seed"], head["budget"],
                    head.get("base_overrides", {}), meta=head.get("meta", {}))
        for line in lines[1:]:
            kind = line.pop("type")
            if kind == "config":
                trace.records.append(line)
            elif kind == "winner":
                trace.winners.append(line)
            elif kind == "final":
                trace.final = line["params"]
        return trace


def _pick(size: int, budget: int | None, seed: int, iteration: int) -> list[int]:
    if budget is None or budget >= size:
        return list(range(size))
    rng = np.random.default_rng([seed, 1000 + iteration])
    return sorted(int(i) for i in rng.choice(size, size=budget, replace=False))


def run_search(grid: GridSpec, table: Table, plan: StagePlan, k: int = 5, seed: int = 0,
               budget: int | None = None, base_overrides: dict | None = None,
               defaults: dict | None = None) -> SearchTrace:
    """Run every iteration of ``grid`` on ``table`` (the training rows).

    With a ``budget``, each iteration evaluates a seeded subsample of at most
    ``budget`` configurations, kept in enumeration order. The winner of an
    iteration is the first configuration with the highest mean fold Top1.
    """
    if budget is not None and budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    folds = make_folds(np.arange(len(table)), k, seed)
    current = {**DEFAULTS, **(defaults or {})}
    trace = SearchTrace(grid.family, plan.stage_id, k, seed, budget, dict(base_overrides or {}))
    for i in range(len(grid.iterations)):
        configs = grid.configs(i)
        best = None
        for j in _pick(len(configs), budget, seed, i):
            params = {**current, **configs[j]}
            record = {"iteration": i + 1, "index": j, "values": configs[j], "params": params}
            try:
                scores = score_config(params, table, plan, folds, grid.family, seed, base_overrides)
            except ConfigError as exc:
                record.update(fold_scores=None, mean=None, infeasible=str(exc))
            else:
                record.update(fold_scores=scores, mean=float(np.mean(scores)), infeasible=None)
                if best is None or record["mean"] > best["mean"]:
                    best = record
            log.info("iteration %d config %d mean %s", i + 1, j, record["mean"])
            trace.records.append(record)
        if best is None:
            raise ConfigError(f"iteration {i + 1}: no feasible configuration")
        current = dict(best["params"])
        trace.winners.append({"iteration": i + 1, "index": best["index"], "values": best["values"],
                              "mean": best["mean"]})
    trace.final = current
    return trace
