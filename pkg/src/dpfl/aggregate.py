"""Weighted model averaging and the incremental weighted-sum accumulator."""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

Models = Sequence[np.ndarray] | Mapping[int, np.ndarray]
Weights = Sequence[float] | Mapping[int, float]


def weighted_average(models: Models, weights: Weights, members: Iterable[int]) -> np.ndarray:
    """``sum_i p_i w_i / sum_i p_i`` over ``members`` (summed in ascending id order)."""
    members = sorted(set(members))
    if not members:
        raise ConfigError("cannot average over an empty member set")
    if len(members) == 1:
        if not float(weights[members[0]]) > 0:
            raise ConfigError(f"client {members[0]} has nonpositive weight")
        return np.array(models[members[0]], dtype=np.float64, copy=True)
    total = 0.0
    acc = None
    for i in members:
        p = float(weights[i])
        if not p > 0:
            raise ConfigError(f"client {i} has nonpositive weight {p}")
        term = p * np.asarray(models[i], dtype=np.float64)
        acc = term if acc is None else acc + term
        total += p
    return acc / total


class WeightedSum:
    """Running ``sum p_i w_i`` and ``sum p_i`` over a nonempty member set.

    Owned by a single greedy run; mutated in place by :meth:`add` / :meth:`remove`.
    """

    __slots__ = ("sum_vector", "total_weight", "member_ids")

    def __init__(self, sum_vector: np.ndarray, total_weight: float, member_ids):
        self.sum_vector = np.array(sum_vector, dtype=np.float64, copy=True)
        self.total_weight = float(total_weight)
        self.member_ids = set(member_ids)
        if not self.member_ids:
            raise ConfigError("accumulator needs at least one member")

    @classmethod
    def single(cls, client_id: int, model: np.ndarray, p: float) -> "WeightedSum":
        return cls(p * np.asarray(model, dtype=np.float64), p, {client_id})

    def copy(self) -> "WeightedSum":
        return WeightedSum(self.sum_vector, self.total_weight, self.member_ids)

    def add(self, client_id: int, model: np.ndarray, p: float) -> "WeightedSum":
        if client_id in self.member_ids:
            raise ConfigError(f"client {client_id} is already in the accumulator")
        self.sum_vector += p * np.asarray(model, dtype=np.float64)
        self.total_weight += p
        self.member_ids.add(client_id)
        return self

    def remove(self, client_id: int, model: np.ndarray, p: float) -> "WeightedSum":
        if client_id not in self.member_ids:
            raise ConfigError(f"client {client_id} is not in the accumulator")
        if len(self.member_ids) == 1:
            raise ConfigError("removing the last member would empty the accumulator")
        self.sum_vector -= p * np.asarray(model, dtype=np.float64)
        self.total_weight -= p
        self.member_ids.discard(client_id)
        return self

    def with_added(self, client_id: int, model: np.ndarray, p: float) -> "WeightedSum":
        return self.copy().add(client_id, model, p)

    def with_removed(self, client_id: int, model: np.ndarray, p: float) -> "WeightedSum":
        return self.copy().remove(client_id, model, p)

    def mean(self) -> np.ndarray:
        return self.sum_vector / self.total_weight

    def __repr__(self):
        return f"WeightedSum(members={sorted(self.member_ids)}, total_weight={self.total_weight:.6g})"


def accumulator_add(acc: WeightedSum, client_id: int, model: np.ndarray, p: float) -> WeightedSum:
    return acc.with_added(client_id, model, p)


def accumulator_remove(acc: WeightedSum, client_id: int, model: np.ndarray, p: float) -> WeightedSum:
    return acc.with_removed(client_id, model, p)
