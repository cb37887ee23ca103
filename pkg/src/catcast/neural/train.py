"""Mini-batch training loop, optimizer stepping and finite-difference gradient checks."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from catcast.core import Table
from catcast.errors import ConfigError, DataError
from catcast.neural import layers as L
from catcast.neural.model import ModelGraph, cross_entropy, forward, loss_and_grad, set_dropout
from catcast.neural.optim import OPTIMIZERS, make_optimizer
from catcast.pipeline import topk_accuracy

log = logging.getLogger(__name__)

# sub-streams of a run seed
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.001
    optimizer: str = "adam"
    dropout: float | None = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer.lower() not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        self.optimizer = self.optimizer.lower()
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_top1: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def optimizer_step(model: ModelGraph, grads: dict[str, np.ndarray], config: TrainConfig) -> None:
    """Apply one update; optimizer slots live in ``model.optimizer_state``."""
    opt = model.optimizer_state.get("optimizer")
    if opt is None or model.optimizer_state.get("kind") != config.optimizer or opt.lr != config.learning_rate:
        opt = make_optimizer(config.optimizer, config.learning_rate)
        model.optimizer_state.update(optimizer=opt, kind=config.optimizer)
    params = {name: layer.params[key] for name, layer, key in model.named_params()}
    opt.step(params, grads)


def training_arrays(model: ModelGraph, table: Table) -> tuple[np.ndarray, np.ndarray]:
    if model.target is None:
        raise ConfigError("model has no target variable")
    x = table.columns(model.inputs)
    y = table.column(model.target) - 1
    known = y >= 0
    if not known.all():
        log.warning("skipping %d rows whose %s is unseen", int((~known).sum()), model.target)
        x, y = x[known], y[known]
    return x, y


def train(model: ModelGraph, train_table: Table, val_table: Table | None, config: TrainConfig) -> list[EpochRecord]:
    """Fit ``model`` in place; returns one record per epoch.

    Each epoch visits the rows in a fresh seeded permutation. The recorded
    train loss is the row-weighted mean of the batch losses seen during the
    epoch (before each batch's update).
    """
    if len(train_table) == 0:
        raise DataError("training table is empty")
    x, y = training_arrays(model, train_table)
    if x.shape[0] == 0:
        raise DataError("no training rows with a known target")
    if config.dropout is not None:
        set_dropout(model, config.dropout)
    xv = yv = None
    if val_table is not None and len(val_table):
        xv = val_table.columns(model.inputs)
        yv = val_table.column(model.target) - 1
    shuffle_rng = derive_rng(config.seed, SHUFFLE_STREAM)
    dropout_rng = derive_rng(config.seed, DROPOUT_STREAM)
    n = x.shape[0]
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(model, x[idx], y[idx], "train", dropout_rng)
            total += loss * idx.size
            optimizer_step(model, grads, config)
        val_top1 = None
        if xv is not None:
            val_top1 = topk_accuracy(model.predict_proba(xv), yv, 1)
        history.append(EpochRecord(epoch, total / n, val_top1))
        log.info("epoch %d loss %.6f val_top1 %s", epoch, total / n, val_top1)
    model.provenance["train_config"] = config.to_dict()
    return history


def _loss_at(model, batch, labels, mode, seed) -> float:
    probs = forward(model, batch, mode, np.random.default_rng(seed))
    return cross_entropy(probs, np.asarray(labels))


def grad_errors(model: ModelGraph, batch, labels, h: float = 1e-5, mode: str = "infer",
                seed: int = 0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per parameter.

    In train mode every loss evaluation replays the same dropout mask.
    """
    batch = np.asarray(batch, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    _, grads = loss_and_grad(model, batch, labels, mode, np.random.default_rng(seed))
    grads = {k: v.copy() for k, v in grads.items()}
    out = {}
    for name, layer, key in model.named_params():
        p = layer.params[key]
        flat = p.reshape(-1)
        analytic = grads[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss_at(model, batch, labels, mode, seed)
            flat[i] = orig - h
            down = _loss_at(model, batch, labels, mode, seed)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        out[name] = worst
    return out


def grad_check(model: ModelGraph, batch, labels, h: float = 1e-5, mode: str = "infer", seed: int = 0) -> float:
    errors = grad_errors(model, batch, labels, h, mode, seed)
    return max(errors.values()) if errors else 0.0


def kink_margin(model: ModelGraph, batch) -> float:
    """Distance of the forward pass from any non-differentiable point.

    Covers ReLU at 0, hard sigmoid at +-2.5 and max-pool windows whose two
    largest entries (nearly) tie. Finite differences are only meaningful
    when this margin is well above the step size.
    """
    x = np.asarray(batch, dtype=np.int64)
    margin = np.inf
    for layer in model.layers:
        if isinstance(layer, L.MaxPool1D):
            xin = x[:, :, None] if x.ndim == 2 else x
            b, length, c = xin.shape
            lp = length // layer.size
            if layer.size > 1:
                w = np.sort(xin[:, :lp * layer.size, :].reshape(b, lp, layer.size, c), axis=2)
                top, second = w[:, :, -1, :], w[:, :, -2, :]
                # ties between exact zeros (inactive ReLUs) stay ties under perturbation
                gap = np.where((top == 0.0) & (second == 0.0), np.inf, top - second)
                margin = min(margin, float(np.min(gap)))
        x = layer.forward(x, False, None)
        if isinstance(layer, (L.Dense, L.Conv1D)):
            z = layer._z
            if layer.activation == "relu":
                margin = min(margin, float(np.min(np.abs(z))))
            elif layer.activation == "hard_sigmoid":
                margin = min(margin, float(np.min(np.abs(np.abs(z) - 2.5))))
    return margin
