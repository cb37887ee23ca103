"""SGD, RMSProp, AdaGrad and Adam over named numpy parameters (updated in place)."""

from __future__ import annotations

import numpy as np

from catcast.errors import ConfigError

OPTIMIZERS = ("sgd", "rmsprop", "adagrad", "adam")
EPS = 1e-8


class Optimizer:
    def __init__(self, lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.state: dict[str, dict] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            self.update(name, p, g)

    def update(self, name, p, g):
        raise NotImplementedError


class SGD(Optimizer):
    def update(self, name, p, g):
        p -= self.lr * g


class AdaGrad(Optimizer):
    def update(self, name, p, g):
        acc = self.state.setdefault(name, {"acc": np.zeros_like(p)})["acc"]
        acc += g * g
        p -= self.lr * g / (np.sqrt(acc) + EPS)


class RMSProp(Optimizer):
    def __init__(self, lr, decay=0.9):
        super().__init__(lr)
        self.decay = decay

    def update(self, name, p, g):
        v = self.state.setdefault(name, {"v": np.zeros_like(p)})["v"]
        v *= self.decay
        v += (1.0 - self.decay) * g * g
        p -= self.lr * g / (np.sqrt(v) + EPS)


class Adam(Optimizer):
    def __init__(self, lr, b1=0.9, b2=0.999):
        super().__init__(lr)
        self.b1, self.b2 = b1, b2

    def update(self, name, p, g):
        s = self.state.setdefault(name, {"m": np.zeros_like(p), "v": np.zeros_like(p), "t": 0})
        s["t"] += 1
        t = s["t"]
        s["m"] *= self.b1
        s["m"] += (1.0 - self.b1) * g
        s["v"] *= self.b2
        s["v"] += (1.0 - self.b2) * g * g
        m_hat = s["m"] / (1.0 - self.b1 ** t)
        v_hat = s["v"] / (1.0 - self.b2 ** t)
        p -= self.lr * m_hat / (np.sqrt(v_hat) + EPS)


def make_optimizer(kind: str, lr: float) -> Optimizer:
    kind = kind.lower()
    if kind == "sgd":
        return SGD(lr)
    if kind == "rmsprop":
        return RMSProp(lr)
    if kind == "adagrad":
        return AdaGrad(lr)
    if kind == "adam":
        return Adam(lr)
    raise ConfigError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")
