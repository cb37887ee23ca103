"""Three-stage workflow: stage wiring, teacher-forced and chained evaluation,
top-k accuracy and single-record chained prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from catcast import core
from catcast.core import Schema, Table
from catcast.errors import ConfigError, DataError, SchemaError

STAGES = (1, 2, 3)
MODES = ("teacher_forced", "chained")


class StageModel(Protocol):
    schema: Schema
    inputs: list[str]

    def predict_proba(self, index_rows) -> np.ndarray: ...


@dataclass(frozen=True)
class StagePlan:
    stage_id: int
    inputs: tuple[str, ...]
    target: str
    target_cardinality: int


def build_stage_plan(stage_id: int, schema: Schema) -> StagePlan:
    """Stage 1 predicts product category from date month, notifying country,
    distribution status and origin; each later stage adds the previous target."""
    if stage_id not in STAGES:
        raise ConfigError(f"unknown stage {stage_id!r}; expected one of {STAGES}")
    inputs = core.STAGE1_INPUTS + core.TARGETS[:stage_id - 1]
    target = core.TARGETS[stage_id - 1]
    missing = [n for n in inputs + (target,) if n not in schema]
    if missing:
        raise SchemaError(f"stage {stage_id} needs variables missing from the schema: {missing}")
    return StagePlan(stage_id, inputs, target, schema.vocab(target).cardinality)


def stage_labels(table: Table, plan: StagePlan) -> np.ndarray:
    """0-based class labels; unseen targets (UNK) become -1 and never count as hits."""
    return table.column(plan.target) - 1


def topk_accuracy(probs: np.ndarray, labels, k: int) -> float:
    """Share of rows whose label is among the k most probable classes.

    Equal probabilities rank the lower class index first.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    if not 1 <= k <= n_classes:
        raise ConfigError(f"k={k} outside 1..{n_classes}")
    if labels.shape[0] == 0:
        return 0.0
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean((order == labels[:, None]).any(axis=1)))


@dataclass
class StageReport:
    stage: int
    top1: float
    top2: float
    top3: float
    n_evaluated: int
    mode: str
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "top1": self.top1,
            "top2": self.top2,
            "top3": self.top3,
            "n_evaluated": self.n_evaluated,
            "mode": self.mode,
            "provenance": self.provenance,
        }


def report_from_probs(probs, labels, stage: int, mode: str, provenance=None) -> StageReport:
    k_max = probs.shape[1]
    tops = [topk_accuracy(probs, labels, min(k, k_max)) for k in (1, 2, 3)]
    return StageReport(stage, *tops, n_evaluated=int(len(labels)), mode=mode, provenance=dict(provenance or {}))


def _check_inputs(model: StageModel, plan: StagePlan) -> None:
    if list(model.inputs) != list(plan.inputs):
        raise ConfigError(f"model inputs {list(model.inputs)} do not match stage {plan.stage_id} inputs {list(plan.inputs)}")


def chained_inputs(table: Table, plan: StagePlan, upstream: Mapping[int, StageModel]) -> np.ndarray:
    """Stage inputs where every parent target is replaced by its upstream Top1 prediction."""
    x = table.columns(plan.inputs).copy()
    for s in range(1, plan.stage_id):
        if s not in upstream:
            raise ConfigError(f"chained evaluation of stage {plan.stage_id} needs the stage-{s} model")
        sub = build_stage_plan(s, table.schema)
        _check_inputs(upstream[s], sub)
        probs = upstream[s].predict_proba(x[:, :len(sub.inputs)])
        x[:, plan.inputs.index(sub.target)] = np.argmax(probs, axis=1) + 1
    return x


def evaluate_stage(model: StageModel, table: Table, plan: StagePlan, mode: str = "teacher_forced",
                   upstream: Mapping[int, StageModel] | None = None, provenance=None) -> StageReport:
    """Top1/Top2/Top3 of a stage model.

    ``teacher_forced`` reads parent targets from the table; ``chained``
    substitutes the upstream models' Top1 predictions.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    _check_inputs(model, plan)
    if mode == "chained":
        x = chained_inputs(table, plan, upstream or {})
    else:
        x = table.columns(plan.inputs)
    probs = model.predict_proba(x)
    return report_from_probs(probs, stage_labels(table, plan), plan.stage_id, mode, provenance)


@dataclass
class StagePrediction:
    stage: int
    target: str
    candidates: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "target": self.target,
            "candidates": [{"category": c, "probability": p} for c, p in self.candidates],
        }


def normalize_record(record: Mapping[str, str]) -> dict[str, str]:
    """Apply ingestion cleaning to a single record; derives MONTH from DATE_CASE."""
    from catcast.ingest import _normalize, _parse_date

    out = {k.strip().upper(): _normalize(str(v)) for k, v in record.items()}
    if core.MONTH not in out and core.DATE_CASE in out:
        parsed = _parse_date(out[core.DATE_CASE])
        if parsed is not None:
            out[core.MONTH] = str(parsed[0])
    elif core.MONTH in out and out[core.MONTH].isdigit():
        out[core.MONTH] = str(int(out[core.MONTH]))
    return out


def chain_predict(record: Mapping[str, str], models: Mapping[int, StageModel], top: int = 3,
                  unknown: list | None = None) -> list[StagePrediction]:
    """Run the stages in order on one record, feeding each Top1 into the next stage.

    Values missing from a vocabulary are looked up as UNK; their variable
    names are appended to ``unknown`` when a list is supplied.
    """
    stages = sorted(models)
    if not stages or stages != list(range(1, len(stages) + 1)):
        raise ConfigError(f"need models for consecutive stages starting at 1, got {stages}")
    schema = models[1].schema
    values = normalize_record(record)
    missing = [n for n in core.STAGE1_INPUTS if n not in values]
    if missing:
        raise SchemaError(f"record lacks stage-1 variables: {missing}")
    row = []
    for name in core.STAGE1_INPUTS:
        index = schema.vocab(name).lookup(values[name])
        if index == core.UNK and unknown is not None:
            unknown.append(name)
        row.append(index)
    out = []
    for s in stages:
        plan = build_stage_plan(s, schema)
        _check_inputs(models[s], plan)
        probs = models[s].predict_proba(np.array([row], dtype=np.int64))[0]
        order = np.argsort(-probs, kind="stable")[:top]
        vocab = schema.vocab(plan.target)
        out.append(StagePrediction(s, plan.target, [(vocab.decode(int(c) + 1), float(probs[c])) for c in order]))
        row.append(int(order[0]) + 1)
    return out


class MappingOracle:
    """Stage model that answers with a synthetic generator's mapping tables.

    Any input category the generator does not know yields a uniform row.
    """

    def __init__(self, spec, schema: Schema, stage: int):
        self.spec = spec
        self.schema = schema
        self.stage = stage
        self.plan = build_stage_plan(stage, schema)
        self.inputs = list(self.plan.inputs)

    def predict_proba(self, index_rows) -> np.ndarray:
        index_rows = np.asarray(index_rows, dtype=np.int64)
        k = self.plan.target_cardinality
        out = np.full((index_rows.shape[0], k), 1.0 / k)
        target_vocab = self.schema.vocab(self.plan.target)
        for i, row in enumerate(index_rows):
            parents = {}
            for name, index in zip(self.inputs, row):
                parents[name] = self.spec.gen_id(name, self.schema.vocab(name).decode(int(index)))
            try:
                gen = self.spec.predict(self.stage, parents)
            except DataError:
                continue
            label = target_vocab.lookup(self.spec.category(self.plan.target, gen)) - 1
            if label >= 0:
                out[i] = 0.0
                out[i, label] = 1.0
        return out
