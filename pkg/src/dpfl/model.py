"""Softmax-linear classifier: loss, gradient and local momentum SGD.

Parameters are a flat float64 vector of length ``C * F + C``: the ``C x F``
weight matrix (row ``c`` holds the weights of class ``c``) followed by the
``C`` biases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ConfigError("features must be a 2-D array")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ConfigError("labels must be a vector with one entry per row of features")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ConfigError("labels must be integers")
        if y.size and y.min() < 0:
            raise ConfigError("labels must be nonnegative")
        if not np.all(np.isfinite(x)):
            raise ConfigError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "LabeledBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledBatch(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    weight_decay: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")

    def with_epochs(self, epochs: int) -> "SgdConfig":
        return SgdConfig(self.learning_rate, self.weight_decay, self.momentum, self.batch_size, epochs)


def param_dim(num_features: int, num_classes: int) -> int:
    return num_classes * num_features + num_classes


def zeros(num_features: int, num_classes: int) -> np.ndarray:
    return np.zeros(param_dim(num_features, num_classes))


def unpack(params: np.ndarray, num_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a flat vector into (weights C x F, biases C) views."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size % (num_features + 1):
        raise ConfigError(
            f"parameter vector of length {params.size} does not fit {num_features} features"
        )
    c = params.size // (num_features + 1)
    return params[: c * num_features].reshape(c, num_features), params[c * num_features:]


def _checked(params, batch: LabeledBatch):
    w, b = unpack(params, batch.num_features)
    if len(batch) == 0:
        raise ConfigError("empty batch")
    if batch.labels.max() >= w.shape[0]:
        raise ConfigError(
            f"label {int(batch.labels.max())} out of range for {w.shape[0]} classes"
        )
    return w, b


def logits(params: np.ndarray, features: np.ndarray) -> np.ndarray:
    w, b = unpack(params, features.shape[1])
    return features @ w.T + b


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(params: np.ndarray, batch: LabeledBatch) -> float:
    """Mean softmax cross-entropy over the batch (no regularization term)."""
    w, b = _checked(params, batch)
    logp = _log_softmax(batch.features @ w.T + b)
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def gradient(params: np.ndarray, batch: LabeledBatch, weight_decay: float = 0.0) -> np.ndarray:
    """Gradient of :func:`loss` plus ``weight_decay * weights``; biases are not decayed."""
    _checked(params, batch)
    return _gradient(params, batch.features, batch.labels, weight_decay)


def _gradient(params, x, y, weight_decay):
    w, b = unpack(params, x.shape[1])
    n = y.shape[0]
    z = x @ w.T + b
    z -= z.max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    prob[np.arange(n), y] -= 1.0
    prob /= n
    gw = prob.T @ x
    if weight_decay:
        gw += weight_decay * w
    return np.concatenate([gw.ravel(), prob.sum(axis=0)])


def predict(params: np.ndarray, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits(params, features), axis=1)


def accuracy(params: np.ndarray, batch: LabeledBatch) -> float:
    _checked(params, batch)
    return float(np.mean(predict(params, batch.features) == batch.labels))


def local_opt(params: np.ndarray, train: LabeledBatch, cfg: SgdConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Run ``cfg.epochs`` epochs of mini-batch momentum SGD and return new parameters.

    Each epoch draws a fresh permutation of the training set from ``rng``;
    the last short batch is kept.  Momentum starts from zero on every call.
    """
    if len(train) == 0:
        raise ConfigError("client has no training data")
    out = np.array(params, dtype=np.float64, copy=True)
    _checked(out, train)
    if cfg.epochs == 0 or cfg.learning_rate == 0:
        return out
    velocity = np.zeros_like(out)
    n = len(train)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            g = _gradient(out, train.features[idx], train.labels[idx], cfg.weight_decay)
            velocity *= cfg.momentum
            velocity += g
            out -= cfg.learning_rate * velocity
    return out
