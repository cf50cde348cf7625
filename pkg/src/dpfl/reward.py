"""Set rewards: negative validation loss of an averaged model, plus a cut function for testing greedies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .aggregate import WeightedSum, weighted_average
from .errors import ConfigError, ModelStreamError
from .model import LabeledBatch, loss
from .rng import stream


class RewardOracle:
    """``R(S) = -loss(avg(S ∪ {k}), val_k)`` for one client ``k``.

    ``models`` maps client id to parameter vector and may hold only the
    models client ``k`` has received; asking for any other raises
    :class:`ModelStreamError`.  ``calls`` counts evaluations and
    ``models_touched`` counts foreign models read by set evaluations.
    """

    def __init__(self, client_id: int, val: LabeledBatch,
                 models: Mapping[int, np.ndarray] | Sequence[np.ndarray],
                 weights: Mapping[int, float] | Sequence[float]):
        self.client_id = client_id
        self.val = val
        self.models = models
        self.weights = weights
        self.calls = 0
        self.models_touched = 0

    def _model(self, i: int) -> np.ndarray:
        try:
            return self.models[i]
        except (KeyError, IndexError):
            raise ModelStreamError(f"client {self.client_id}: model of client {i} not received within budget") from None

    def of_vector(self, params: np.ndarray) -> float:
        self.calls += 1
        return -loss(params, self.val)

    def of_set(self, members: Iterable[int]) -> float:
        members = set(members) | {self.client_id}
        models = {i: self._model(i) for i in members}
        self.models_touched += len(members) - 1
        return self.of_vector(weighted_average(models, self.weights, members))

    def of_accumulator(self, acc: WeightedSum) -> float:
        if self.client_id not in acc.member_ids:
            raise ConfigError(f"accumulator for client {self.client_id} must contain it")
        return self.of_vector(acc.mean())

    __call__ = of_set


def reward_of_set(k: int, members: Iterable[int], models, weights, val: LabeledBatch) -> float:
    return RewardOracle(k, val, models, weights).of_set(members)


def reward_of_accumulator(k: int, acc: WeightedSum, val: LabeledBatch) -> float:
    return RewardOracle(k, val, {}, {}).of_accumulator(acc)


@dataclass(frozen=True)
class SyntheticCutInstance:
    edge_weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.edge_weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ConfigError("edge_weights must be square")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0) or np.any(w < 0):
            raise ConfigError("edge_weights must be symmetric, nonnegative, zero on the diagonal")
        object.__setattr__(self, "edge_weights", w)

    @property
    def n(self) -> int:
        return self.edge_weights.shape[0]


def random_cut_instance(n: int, seed: int, trial: int = 0, density: float = 0.5) -> SyntheticCutInstance:
    rng = stream(seed, "cut-instance", n, trial)
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return SyntheticCutInstance(w + w.T)


def cut_reward(instance: SyntheticCutInstance, members: Iterable[int]) -> float:
    """Total weight of edges with exactly one endpoint in ``members``."""
    mask = np.zeros(instance.n, dtype=bool)
    idx = list(members)
    if any(not 0 <= i < instance.n for i in idx):
        raise ConfigError(f"cut members must lie in [0, {instance.n})")
    mask[idx] = True
    return float(instance.edge_weights[np.ix_(mask, ~mask)].sum())
