"""Collaborator selection: greedy graph construction (direct and batched), brute force, random graphs.

Both greedy routines run the randomized double greedy over a client's
candidate set.  ``X`` starts as ``{k}`` and ``Y`` as ``S ∪ {k}``; for each
candidate ``j`` (in shuffled order)::

    a = max(R(X ∪ {j}) - R(X), 0)
    b = max(R(Y \\ {j}) - R(Y), 0)
    p = a / (a + b)            (p = 1 when a = b = 0)

``j`` joins ``X`` when the coin ``u < p``, otherwise it leaves ``Y``.  The loop
stops as soon as ``X`` holds ``budget`` collaborators besides ``k``.

Randomness: the generator passed in first yields the candidate shuffle
(``rng.permutation``), then one uniform per candidate.  With
``coin_mode="lockstep"`` the uniform is drawn for every candidate; with
``coin_mode="mixed"`` it is drawn only when ``a > 0`` and ``b > 0``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .aggregate import WeightedSum
from .errors import ConfigError, ModelStreamError
from .rng import stream

COIN_MODES = ("lockstep", "mixed")
Budget = int | None  # None means unbounded


def budget_cap(budget: Budget, n: int) -> int:
    return n if budget is None else min(int(budget), n)


@dataclass
class CandidateRecord:
    candidate: int
    a: float
    b: float
    p: float
    coin: float | None
    added: bool


@dataclass
class GreedyTrace:
    client: int
    order: list[int] = field(default_factory=list)
    records: list[CandidateRecord] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    oracle_calls: int = 0
    self_reward: float | None = None
    final_reward: float | None = None
    fell_back: bool = False
    peak_foreign_models: int = 0

    def decisions(self) -> list[tuple[int, bool]]:
        return [(r.candidate, r.added) for r in self.records]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class CollabGraph:
    n: int
    omega: list[list[int]]
    selected: list[list[int]]
    budget: Budget = None

    @classmethod
    def empty(cls, n: int, budget: Budget = None) -> "CollabGraph":
        return cls(n, [[] for _ in range(n)], [[] for _ in range(n)], budget)

    def violations(self, require_subset: bool = True) -> list[str]:
        out = []
        for k in range(self.n):
            om, sel = self.omega[k], self.selected[k]
            if k in om or k in sel:
                out.append(f"client {k} lists itself")
            if self.budget is not None and (len(om) > self.budget or len(sel) > self.budget):
                out.append(f"client {k} exceeds budget {self.budget}: |omega|={len(om)} |selected|={len(sel)}")
            if require_subset and not set(sel) <= set(om):
                out.append(f"client {k} selected clients outside omega")
        return out


def _decide(a: float, b: float, rng: np.random.Generator, coin_mode: str) -> tuple[float, float | None, bool]:
    p = 1.0 if a + b == 0 else a / (a + b)
    if coin_mode == "lockstep" or (a > 0 and b > 0):
        u = float(rng.random())
        return p, u, u < p
    return p, None, p == 1.0


def _check_args(k, candidates, budget, coin_mode):
    cands = sorted(set(int(j) for j in candidates))
    if k in cands:
        raise ConfigError(f"client {k} cannot be its own candidate")
    if budget is not None and budget < 0:
        raise ConfigError("budget must be nonnegative")
    if coin_mode not in COIN_MODES:
        raise ConfigError(f"coin_mode must be one of {COIN_MODES}")
    return cands


def _finish(trace: GreedyTrace, x: set, k: int, r_x: float) -> tuple[set, GreedyTrace]:
    # never return something worse than collaborating with nobody
    chosen = x - {k}
    if trace.self_reward is not None and r_x < trace.self_reward:
        chosen = set()
        trace.fell_back = True
        r_x = trace.self_reward
    trace.selected = sorted(chosen)
    trace.final_reward = r_x
    return chosen, trace


def ggc(k: int, candidates: Iterable[int], budget: Budget,
        reward: Callable[[frozenset], float], rng: np.random.Generator,
        coin_mode: str = "lockstep") -> tuple[set, GreedyTrace]:
    """Greedy graph construction for client ``k``.

    ``reward(members)`` receives the member set including ``k``.  Returns the
    chosen collaborators (``k`` excluded) and the decision trace.
    """
    cands = _check_args(k, candidates, budget, coin_mode)
    trace = GreedyTrace(client=k)
    if not cands or budget == 0:
        return set(), trace
    cap = budget_cap(budget, len(cands))
    order = [int(j) for j in rng.permutation(cands)]
    trace.order = order

    def evaluate(members):
        trace.oracle_calls += 1
        return float(reward(frozenset(members)))

    x, y = {k}, set(cands) | {k}
    r_x, r_y = evaluate(x), evaluate(y)
    trace.self_reward = r_x
    for j in order:
        r_xj = evaluate(x | {j})
        r_yj = evaluate(y - {j})
        a, b = max(r_xj - r_x, 0.0), max(r_yj - r_y, 0.0)
        p, u, add = _decide(a, b, rng, coin_mode)
        trace.records.append(CandidateRecord(j, a, b, p, u, add))
        if add:
            x.add(j)
            r_x = r_xj
            if len(x) - 1 == cap:
                break
        else:
            y.discard(j)
            r_y = r_yj
    return _finish(trace, x, k, r_x)


def bggc(k: int, candidates: Iterable[int], budget: Budget, own_model: np.ndarray,
         weights: Mapping[int, float] | Sequence[float],
         receive: Callable[[list[int]], Sequence[np.ndarray]],
         oracle, rng: np.random.Generator, coin_mode: str = "lockstep") -> tuple[set, GreedyTrace]:
    """Batched greedy graph construction.

    Foreign models arrive through ``receive(batch_ids)`` in batches of at most
    ``budget`` and are dropped after their batch, so no more than ``budget``
    foreign models are held at once.  A first pass builds the weighted sum over
    ``S ∪ {k}``; the second pass streams the shuffled candidates and keeps the
    sums of ``X`` and ``Y`` up to date.  ``oracle.of_accumulator(acc)`` scores a
    :class:`WeightedSum`.  Same seed gives the same result as :func:`ggc`.
    """
    cands = _check_args(k, candidates, budget, coin_mode)
    trace = GreedyTrace(client=k)
    if not cands or budget == 0:
        return set(), trace
    cap = budget_cap(budget, len(cands))
    batch_size = len(cands) if budget is None else int(budget)

    def fetch(ids):
        got = list(receive(list(ids)))
        if len(got) != len(ids):
            raise ModelStreamError(f"incomplete model stream: asked for {len(ids)} models, got {len(got)}")
        trace.peak_foreign_models = max(trace.peak_foreign_models, len(got))
        return got

    def evaluate(acc):
        trace.oracle_calls += 1
        return float(oracle.of_accumulator(acc))

    acc_y = WeightedSum.single(k, own_model, weights[k])
    for start in range(0, len(cands), batch_size):
        ids = cands[start:start + batch_size]
        for j, w in zip(ids, fetch(ids)):
            acc_y.add(j, w, weights[j])

    order = [int(j) for j in rng.permutation(cands)]
    trace.order = order
    acc_x = WeightedSum.single(k, own_model, weights[k])
    r_x, r_y = evaluate(acc_x), evaluate(acc_y)
    trace.self_reward = r_x
    done = False
    for start in range(0, len(order), batch_size):
        ids = order[start:start + batch_size]
        for j, w in zip(ids, fetch(ids)):
            p_j = weights[j]
            x_with = acc_x.with_added(j, w, p_j)
            y_without = acc_y.with_removed(j, w, p_j)
            r_xj, r_yj = evaluate(x_with), evaluate(y_without)
            a, b = max(r_xj - r_x, 0.0), max(r_yj - r_y, 0.0)
            p, u, add = _decide(a, b, rng, coin_mode)
            trace.records.append(CandidateRecord(j, a, b, p, u, add))
            if add:
                acc_x, r_x = x_with, r_xj
                if len(acc_x.member_ids) - 1 == cap:
                    done = True
                    break
            else:
                acc_y, r_y = y_without, r_yj
        if done:
            break
    return _finish(trace, set(acc_x.member_ids), k, r_x)


def brute_force_best(k: int, candidates: Iterable[int], budget: Budget,
                     reward: Callable[[frozenset], float], max_candidates: int = 12) -> set:
    """Exhaustive best collaborator set of size at most ``budget``.

    Ties go to the lexicographically smallest sorted member list.
    """
    cands = sorted(set(int(j) for j in candidates))
    if k in cands:
        raise ConfigError(f"client {k} cannot be its own candidate")
    if len(cands) > max_candidates:
        raise ConfigError(f"brute force refuses {len(cands)} candidates (limit {max_candidates})")
    cap = budget_cap(budget, len(cands))
    best_value, best = None, None
    for size in range(cap + 1):
        for combo in itertools.combinations(cands, size):
            v = float(reward(frozenset(combo) | {k}))
            if best is None or v > best_value or (v == best_value and list(combo) < best):
                best_value, best = v, list(combo)
    return set(best)


def random_graph(n: int, budget: Budget, seed: int) -> CollabGraph:
    """Every client independently draws ``min(budget, n - 1)`` distinct collaborators uniformly."""
    cap = budget_cap(budget, n - 1)
    omega = []
    for k in range(n):
        others = np.array([j for j in range(n) if j != k], dtype=np.int64)
        pick = stream(seed, "random-graph", k).choice(others, size=cap, replace=False)
        omega.append(sorted(int(j) for j in pick))
    return CollabGraph(n, omega, [list(o) for o in omega], budget)
