"""Layered network over categorical index rows: embeddings (or a classical
encoding) feeding a dense/conv trunk and a softmax head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from catcast import core
from catcast.core import Schema
from catcast.encoders import EncodingScheme, code_table
from catcast.errors import ConfigError, SchemaError
from catcast.neural import layers as L
from catcast.pipeline import StagePlan, build_stage_plan

CLAMP = 1e-12

LAYER_KINDS = (
    "embedding", "encode", "concat", "dense", "conv1d", "maxpool1d",
    "dropout", "flatten", "softmax_output",
)

# Embedding widths of the published stage models, by variable.
STAGE_EMBEDDING_DIMS = {
    core.MONTH: 6,
    core.NOTIFICATION_COUNTRY: 16,
    core.DISTRIBUTION_STATUS: 9,
    core.COUNTRY_ORIGIN: 50,
    core.PRODUCT_CATEGORY: 19,
    core.HAZARD_CATEGORY: 18,
}
MLP_HIDDEN = (2048, 1024, 512)
CONV_LAYERS = ((128, 4), (256, 3))
CONV_HEAD = (512, 256)
DEFAULT_POOL = 2
DEFAULT_DROPOUT = 0.2
STAGE_FAMILY = {1: "mlp", 2: "conv1d", 3: "mlp"}
FAMILIES = ("mlp", "conv1d")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    var: str | None = None
    dim: int | None = None
    units: int | None = None
    activation: str | None = None
    filters: int | None = None
    kernel: int | None = None
    size: int | None = None
    rate: float | None = None
    classes: int | None = None
    scheme: str | None = None
    buckets: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        for name in ("dim", "units", "filters", "kernel", "size", "classes"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{self.kind}.{name} must be >= 1, got {value}")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.activation is not None and self.activation not in L.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class ModelGraph:
    schema: Schema
    inputs: list[str]
    target: str | None
    specs: list[LayerSpec]
    layers: list[L.Layer]
    seed: int = 0
    stage: int | None = None
    provenance: dict = field(default_factory=dict)
    optimizer_state: dict = field(default_factory=dict)

    @property
    def classes(self) -> int:
        return self.layers[-1].params["W"].shape[1]

    @property
    def embedding_tables(self) -> dict[str, np.ndarray]:
        first = self.layers[0]
        return dict(first.params) if isinstance(first, L.EmbeddingInput) else {}

    def named_params(self):
        """(name, layer, key) triples in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                out.append((f"{i}.{key}", layer, key))
        return out

    def param_count(self) -> int:
        return sum(layer.params[k].size for _, layer, k in self.named_params())

    def predict_proba(self, index_rows, batch_size: int = 4096) -> np.ndarray:
        index_rows = np.asarray(index_rows, dtype=np.int64)
        if index_rows.shape[0] == 0:
            return np.zeros((0, self.classes))
        return np.concatenate([
            forward(self, index_rows[i:i + batch_size], "infer")
            for i in range(0, index_rows.shape[0], batch_size)
        ])


def build_model(schema: Schema, inputs: Sequence[str], specs: Sequence[LayerSpec],
                target: str | None = None, seed: int = 0, stage: int | None = None,
                init: bool = True) -> ModelGraph:
    """Instantiate layers from specs; shapes are inferred front to back."""
    specs = list(specs)
    inputs = list(inputs)
    for name in inputs:
        if name not in schema:
            raise SchemaError(f"input variable {name!r} not in schema")
    outputs = [i for i, s in enumerate(specs) if s.kind == "softmax_output"]
    if outputs != [len(specs) - 1]:
        raise ConfigError("exactly one softmax_output layer is required, and it must be last")

    embed = [s for s in specs if s.kind == "embedding"]
    encode = [s for s in specs if s.kind == "encode"]
    if embed and encode:
        raise ConfigError("a model uses either embeddings or a classical encoding, not both")
    cards = [schema.vocab(n).cardinality for n in inputs]
    if embed:
        if [s.var for s in embed] != inputs:
            raise ConfigError(f"embedding layers {[s.var for s in embed]} do not match inputs {inputs}")
        first = L.EmbeddingInput(inputs, cards, [s.dim for s in embed])
        trunk = [s for s in specs if s.kind not in ("embedding", "concat")]
    elif len(encode) == 1:
        enc = encode[0]
        scheme = EncodingScheme(enc.scheme or "one_hot", enc.buckets or 256)
        first = L.EncodedInput([code_table(schema.vocab(n), scheme) for n in inputs])
        trunk = [s for s in specs if s.kind != "encode"]
    else:
        raise ConfigError("model needs embedding layers or exactly one encode layer")

    built: list[L.Layer] = [first]
    shape = first.out_shape(None)
    for spec in trunk:
        if spec.kind == "dense":
            if len(shape) != 1:
                raise ConfigError("dense layer needs a flat input; add a flatten layer")
            layer = L.Dense(shape[0], spec.units, spec.activation or "relu")
        elif spec.kind == "conv1d":
            channels = shape[1] if len(shape) == 2 else 1
            layer = L.Conv1D(channels, spec.filters, spec.kernel, spec.activation or "relu")
        elif spec.kind == "maxpool1d":
            layer = L.MaxPool1D(spec.size or DEFAULT_POOL)
        elif spec.kind == "dropout":
            layer = L.Dropout(spec.rate or 0.0)
        elif spec.kind == "flatten":
            layer = L.Flatten()
        elif spec.kind == "softmax_output":
            if len(shape) != 1:
                raise ConfigError("softmax_output needs a flat input; add a flatten layer")
            layer = L.SoftmaxOutput(shape[0], spec.classes)
        else:
            raise ConfigError(f"layer kind {spec.kind!r} cannot appear in the trunk")
        try:
            shape = layer.out_shape(shape)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        built.append(layer)

    model = ModelGraph(schema, inputs, target, specs, built, seed=seed, stage=stage)
    if init:
        init_params(model, seed)
    return model


def init_params(model: ModelGraph, seed: int) -> None:
    """Glorot-uniform weights, zero biases, embeddings uniform in [-0.05, 0.05]."""
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        layer.init(rng)
    model.seed = seed
    model.optimizer_state.clear()


def embedding_dim(name: str, cardinality: int) -> int:
    if name in STAGE_EMBEDDING_DIMS:
        return STAGE_EMBEDDING_DIMS[name]
    return max(1, min(50, (cardinality + 1) // 2))


def mlp_trunk(hidden: Sequence[int], activation="relu", dropout=DEFAULT_DROPOUT) -> list[LayerSpec]:
    specs = []
    for units in hidden:
        specs.append(LayerSpec("dense", units=units, activation=activation))
        if dropout:
            specs.append(LayerSpec("dropout", rate=dropout))
    return specs


def conv_trunk(convs: Sequence[tuple[int, int]], pool=DEFAULT_POOL, head: Sequence[int] = CONV_HEAD,
               activation="relu", dropout=DEFAULT_DROPOUT) -> list[LayerSpec]:
    specs = []
    for filters, kernel in convs:
        specs.append(LayerSpec("conv1d", filters=filters, kernel=kernel, activation=activation))
        if pool:
            specs.append(LayerSpec("maxpool1d", size=pool))
    specs.append(LayerSpec("flatten"))
    return specs + mlp_trunk(head, activation, dropout)


def input_specs(plan: StagePlan, schema: Schema, encoding: str | None = None,
                buckets: int = 256, dims: dict | None = None) -> list[LayerSpec]:
    if encoding and encoding != "embedding":
        return [LayerSpec("encode", scheme=EncodingScheme(encoding).kind, buckets=buckets)]
    dims = dims or {}
    specs = [
        LayerSpec("embedding", var=n, dim=dims.get(n, embedding_dim(n, schema.vocab(n).cardinality)))
        for n in plan.inputs
    ]
    return specs + [LayerSpec("concat")]


def build_stage_model(stage_id: int, schema: Schema, family: str | None = None,
                      overrides: dict | None = None) -> ModelGraph:
    """Published stage architecture, optionally reshaped by ``overrides``.

    Recognised overrides: ``hidden`` (MLP widths), ``convs`` ((filters, kernel)
    pairs), ``pool``, ``head`` (dense widths after the conv stack),
    ``activation``, ``dropout``, ``embedding_dims`` (var -> dim),
    ``encoding`` (``embedding`` or a classical scheme), ``buckets``, ``seed``.
    The softmax width is the target's vocabulary cardinality.
    """
    o = dict(overrides or {})
    plan = build_stage_plan(stage_id, schema)
    family = family or STAGE_FAMILY[stage_id]
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    activation = o.get("activation", "relu")
    dropout = o.get("dropout", DEFAULT_DROPOUT)
    specs = input_specs(plan, schema, o.get("encoding"), o.get("buckets", 256), o.get("embedding_dims"))
    if family == "mlp":
        specs += mlp_trunk(o.get("hidden", MLP_HIDDEN), activation, dropout)
    else:
        specs += conv_trunk(o.get("convs", CONV_LAYERS), o.get("pool", DEFAULT_POOL),
                            o.get("head", CONV_HEAD), activation, dropout)
    specs.append(LayerSpec("softmax_output", classes=plan.target_cardinality))
    model = build_model(schema, plan.inputs, specs, plan.target, o.get("seed", 0), stage_id)
    model.provenance["family"] = family
    return model


def forward(model: ModelGraph, batch, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities for a batch of index rows (columns = ``model.inputs``)."""
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(model.seed)
    x = np.asarray(batch, dtype=np.int64)
    for layer in model.layers:
        x = layer.forward(x, train, rng)
    return x


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.clip(picked, CLAMP, 1.0))))


def loss_and_grad(model: ModelGraph, batch, labels, mode: str = "train",
                  rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean categorical cross-entropy and gradients for every parameter.

    Gradients are keyed as in :meth:`ModelGraph.named_params`. Softmax and
    cross-entropy are fused: d loss / d logits = (p - onehot) / batch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    probs = forward(model, batch, mode, rng)
    loss = cross_entropy(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(labels.shape[0]), labels] -= 1.0
    dlogits /= labels.shape[0]
    dy = dlogits
    for layer in reversed(model.layers):
        dy = layer.backward(dy)
    grads = {name: layer.grads[key] for name, layer, key in model.named_params()}
    return loss, grads


def set_dropout(model: ModelGraph, rate: float) -> None:
    for layer in model.layers:
        if isinstance(layer, L.Dropout):
            layer.rate = rate
    model.specs = [replace(s, rate=rate) if s.kind == "dropout" else s for s in model.specs]
