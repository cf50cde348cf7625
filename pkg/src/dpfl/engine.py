"""The decentralized personalized FL loop and its baselines.

Modes:

* ``dpfl`` - local pre-training, batched greedy construction of each client's
  candidate set ``omega``, then rounds of local SGD, greedy re-selection of
  collaborators from ``omega`` every ``refresh_period`` rounds and weighted
  averaging over the selection.
* ``random_graph`` - same schedule, but ``omega`` is a uniform random set of
  ``budget`` clients and every round aggregates over all of it.
* ``local_only`` - local SGD only.
* ``fedavg`` - every client averages over everybody every round.

Preprocessing counts as two rounds, so ``dpfl`` and ``random_graph`` run
``rounds - 2`` training rounds after it (round 0 is the preprocessing record)
while the other modes run ``rounds`` training rounds numbered from 1.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .aggregate import weighted_average
from .data import (ClientShard, DatasetSpec, PartitionSpec, flip_labels, make_cohort,
                   random_derangement, sample_blobs)
from .errors import ConfigError
from .graph import COIN_MODES, Budget, CollabGraph, GreedyTrace, bggc, ggc, random_graph
from .metrics import (CommLedger, RoundRecord, cross_group_fraction, mean_and_variance,
                      sparsity, symmetry_pct)
from .reward import RewardOracle
from .rng import stream

log = logging.getLogger(__name__)

MODES = ("dpfl", "local_only", "fedavg", "random_graph")


@dataclass(frozen=True)
class MaliciousSpec:
    fraction: float = 0.4
    permutation_seed: int = 0
    runs_ggc: bool = True

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ConfigError("malicious fraction must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    num_clients: int = 30
    budget: Budget = 6
    tau_init: int = 5
    tau_train: int = 1
    rounds: int = 30
    refresh_period: int = 1
    mode: str = "dpfl"
    sgd: M.SgdConfig = field(default_factory=M.SgdConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    malicious: MaliciousSpec | None = None
    seed: int = 0
    coin_mode: str = "lockstep"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be positive")
        if self.budget is not None and self.budget < 0:
            raise ConfigError("budget must be nonnegative or unbounded")
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.mode in ("dpfl", "random_graph") and self.rounds < 2:
            raise ConfigError("dpfl and random_graph modes need rounds >= 2 (preprocessing uses two)")
        if self.refresh_period < 1:
            raise ConfigError("refresh_period must be at least 1")
        if self.tau_init < 0 or self.tau_train < 0:
            raise ConfigError("tau_init and tau_train must be nonnegative")
        if self.coin_mode not in COIN_MODES:
            raise ConfigError(f"coin_mode must be one of {COIN_MODES}")

    @property
    def training_rounds(self) -> int:
        return self.rounds - 2 if self.mode in ("dpfl", "random_graph") else self.rounds


@dataclass
class ClientState:
    shard: ClientShard
    params: np.ndarray
    best_params: np.ndarray
    best_val_loss: float = float("inf")
    omega: list[int] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    selected_history: list[list[int]] = field(default_factory=list)
    malicious: bool = False

    def track_best(self) -> None:
        v = M.loss(self.params, self.shard.val)
        if v < self.best_val_loss:
            self.best_val_loss = v
            self.best_params = self.params.copy()


@dataclass
class SelfCheck:
    """Tally of ``R(returned ∪ {k}) >= R({k})`` over greedy invocations."""
    invocations: int = 0
    violations: int = 0
    worst_margin: float = float("inf")


@dataclass
class RunResult:
    config: RunConfig
    clients: list[ClientState]
    records: list[RoundRecord]
    graphs: dict[int, CollabGraph]
    traces: list[GreedyTrace]
    self_check: SelfCheck
    malicious_ids: list[int]

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].mean_test_accuracy

    def test_accuracies(self) -> list[float]:
        return [M.accuracy(c.best_params, c.shard.test) for c in self.clients]


def _pool_map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


class Simulation:
    """One run of a :class:`RunConfig`; use :func:`run` unless you need to step it manually."""

    def __init__(self, cfg: RunConfig, shards: list[ClientShard] | None = None,
                 threads: int = 1, keep_traces: bool = False):
        self.cfg = cfg
        self.threads = threads
        self.keep_traces = keep_traces
        if shards is None:
            partition = replace(cfg.partition, num_clients=cfg.num_clients, seed=cfg.seed)
            shards = make_cohort(replace(cfg.dataset, seed=cfg.seed), partition)
        if len(shards) != cfg.num_clients:
            raise ConfigError(f"expected {cfg.num_clients} shards, got {len(shards)}")
        self.malicious_ids: list[int] = []
        if cfg.malicious is not None and cfg.malicious.fraction > 0:
            shards = self._flip(shards)
        self.num_features = shards[0].train.num_features
        self.num_classes = cfg.dataset.num_classes
        w0 = M.zeros(self.num_features, self.num_classes)
        bad = set(self.malicious_ids)
        self.clients = [ClientState(s, w0.copy(), w0.copy(), malicious=s.client_id in bad) for s in shards]
        self.weights = [s.weight_p for s in shards]
        self.records: list[RoundRecord] = []
        self.graphs: dict[int, CollabGraph] = {}
        self.traces: list[GreedyTrace] = []
        self.self_check = SelfCheck()

    def _flip(self, shards):
        spec = self.cfg.malicious
        n = len(shards)
        count = int(round(spec.fraction * n))
        picks = stream(self.cfg.seed, "malicious").choice(n, size=count, replace=False)
        self.malicious_ids = sorted(int(i) for i in picks)
        perm = random_derangement(self.cfg.dataset.num_classes, spec.permutation_seed)
        return [flip_labels(s, perm) if s.client_id in self.malicious_ids else s for s in shards]

    # -- helpers ---------------------------------------------------------
    def _aggregates(self, k: int) -> bool:
        c = self.clients[k]
        return not (c.malicious and not self.cfg.malicious.runs_ggc)

    def _local_train(self, epochs: int, label: str, round_: int):
        sgd = self.cfg.sgd.with_epochs(epochs)

        def work(k):
            c = self.clients[k]
            return M.local_opt(c.params, c.shard.train, sgd, stream(self.cfg.seed, label, k, round_))

        for c, new in zip(self.clients, _pool_map(work, range(len(self.clients)), self.threads)):
            c.params = new

    def _audit(self, k: int, chosen, models) -> None:
        val = self.clients[k].shard.val
        own = -M.loss(models[k], val)
        got = -M.loss(weighted_average(models, self.weights, set(chosen) | {k}), val)
        margin = got - own
        sc = self.self_check
        sc.invocations += 1
        sc.worst_margin = min(sc.worst_margin, margin)
        if margin < -1e-12:
            sc.violations += 1
            log.warning("client %d: selection %s scores below self by %.3g", k, sorted(chosen), -margin)

    def graph(self) -> CollabGraph:
        return CollabGraph(len(self.clients), [list(c.omega) for c in self.clients],
                           [list(c.selected) for c in self.clients], self.cfg.budget)

    def _record(self, round_: int, ledger: CommLedger) -> RoundRecord:
        accs = [M.accuracy(c.best_params, c.shard.test) for c in self.clients]
        mean, var = mean_and_variance(accs)
        sel = [c.selected for c in self.clients]
        n = len(self.clients)
        cross = None
        if self.malicious_ids:
            benign = [k for k in range(n) if k not in set(self.malicious_ids)]
            cross, _ = cross_group_fraction(sel, benign, self.malicious_ids)
        rec = RoundRecord(round_, mean, var, sparsity(sel, n), symmetry_pct(sel, n), cross, ledger)
        self.records.append(rec)
        self.graphs[round_] = self.graph()
        for c in self.clients:
            c.selected_history.append(list(c.selected))
        return rec

    # -- preprocessing ---------------------------------------------------
    def preprocess(self) -> RoundRecord:
        cfg = self.cfg
        n = len(self.clients)
        ledger = CommLedger()
        self._local_train(cfg.tau_init, "local-init", 0)
        w_init = [c.params.copy() for c in self.clients]

        if cfg.mode == "random_graph":
            g = random_graph(n, cfg.budget, cfg.seed)
            for c, om in zip(self.clients, g.omega):
                c.omega = om
        else:
            def select(k):
                if not self._aggregates(k):
                    return set(), None, 0
                received = [0]

                def receive(ids):
                    received[0] += len(ids)
                    return [w_init[j] for j in ids]

                oracle = RewardOracle(k, self.clients[k].shard.val, {}, self.weights)
                chosen, trace = bggc(k, [j for j in range(n) if j != k], cfg.budget, w_init[k],
                                     self.weights, receive, oracle,
                                     stream(cfg.seed, "bggc", k), cfg.coin_mode)
                return chosen, trace, received[0]

            for k, (chosen, trace, received) in enumerate(_pool_map(select, range(n), self.threads)):
                self.clients[k].omega = sorted(chosen)
                ledger.models_received += received
                ledger.models_sent += received
                if trace is not None:
                    ledger.oracle_calls += trace.oracle_calls
                    ledger.hold(trace.peak_foreign_models)
                    self._audit(k, chosen, w_init)
                    if self.keep_traces:
                        self.traces.append(trace)

        for k, c in enumerate(self.clients):
            if self._aggregates(k) and cfg.mode == "random_graph":
                ledger.models_received += len(c.omega)
                ledger.models_sent += len(c.omega)
                ledger.hold(len(c.omega))
            c.selected = list(c.omega) if self._aggregates(k) else []
            c.params = weighted_average(w_init, self.weights, set(c.selected) | {k})
            c.track_best()
        return self._record(0, ledger)

    # -- training --------------------------------------------------------
    def training_round(self, t: int) -> RoundRecord:
        cfg = self.cfg
        n = len(self.clients)
        ledger = CommLedger()
        self._local_train(cfg.tau_train, "local-train", t)
        snapshot = [c.params.copy() for c in self.clients]

        if cfg.mode == "fedavg":
            everyone = range(n)
            avg = weighted_average(snapshot, self.weights, everyone)
            for k, c in enumerate(self.clients):
                c.selected = [j for j in everyone if j != k]
                c.params = avg.copy() if n > 1 else snapshot[k]
            ledger.models_sent = ledger.models_received = n * (n - 1)
            ledger.hold(n - 1)
        elif cfg.mode in ("dpfl", "random_graph"):
            for c in self.clients:
                ledger.models_received += len(c.omega)
                ledger.hold(len(c.omega))
            ledger.models_sent = ledger.models_received
            refresh = cfg.mode == "dpfl" and t % cfg.refresh_period == 0

            def select(k):
                c = self.clients[k]
                if not self._aggregates(k):
                    return [], None
                if not refresh:
                    return c.selected, None
                inbox = {j: snapshot[j] for j in c.omega}
                inbox[k] = snapshot[k]
                oracle = RewardOracle(k, c.shard.val, inbox, self.weights)
                chosen, trace = ggc(k, c.omega, cfg.budget, oracle, stream(cfg.seed, "ggc", k, t),
                                    cfg.coin_mode)
                return sorted(chosen), trace

            for k, (chosen, trace) in enumerate(_pool_map(select, range(n), self.threads)):
                c = self.clients[k]
                c.selected = list(chosen)
                if trace is not None:
                    ledger.oracle_calls += trace.oracle_calls
                    self._audit(k, chosen, snapshot)
                    if self.keep_traces:
                        self.traces.append(trace)
                c.params = weighted_average(snapshot, self.weights, set(c.selected) | {k})
        else:
            for c in self.clients:
                c.selected = []

        for c in self.clients:
            c.track_best()
        return self._record(t, ledger)

    def run(self) -> RunResult:
        if self.cfg.mode in ("dpfl", "random_graph"):
            self.preprocess()
        for t in range(1, self.cfg.training_rounds + 1):
            self.training_round(t)
        return RunResult(self.cfg, self.clients, self.records, self.graphs, self.traces,
                         self.self_check, self.malicious_ids)


def run(cfg: RunConfig, shards: list[ClientShard] | None = None, threads: int = 1,
        keep_traces: bool = False) -> RunResult:
    return Simulation(cfg, shards, threads, keep_traces).run()


# -- three-client synergy scenario -------------------------------------------

SYNERGY_LAYOUT = (
    {0: 50, 4: 50, 6: 50, 8: 50},
    {0: 300, 6: 300, 1: 200, 3: 200},
    {4: 300, 8: 300, 5: 200, 7: 200},
)
# each partner's extra classes sit next to classes of client 0 that the partner lacks
SYNERGY_DECOYS = {1: 4, 3: 8, 5: 0, 7: 6}


@dataclass
class SynergyReport:
    solo: float
    with_second: float
    with_third: float
    with_both: float

    @property
    def passed(self) -> bool:
        return self.with_both > self.solo and max(self.with_second, self.with_third) < self.solo

    def as_dict(self) -> dict:
        return {"solo": self.solo, "with_second": self.with_second, "with_third": self.with_third,
                "with_both": self.with_both, "passed": self.passed}


def synergy_shards(seed: int = 0, num_features: int = 200, center_scale: float = 3.0,
                   decoy_distance: float = 6.0, noise_sigma: float = 1.0,
                   test_per_class: int = 200, val_fraction: float = 0.2) -> list[ClientShard]:
    """Three clients; client 0 shares two classes with client 1 and the other two with client 2.

    Counts per class follow ``SYNERGY_LAYOUT`` (train plus validation);
    every client also gets ``test_per_class`` test samples of each of its classes.
    """
    rng = stream(seed, "synergy-centers")
    centers = rng.standard_normal((10, num_features))
    centers = center_scale * centers / np.linalg.norm(centers, axis=1, keepdims=True)
    for decoy, target in SYNERGY_DECOYS.items():
        offset = rng.standard_normal(num_features)
        centers[decoy] = centers[target] + decoy_distance * offset / np.linalg.norm(offset)
    shards = []
    for cid, layout in enumerate(SYNERGY_LAYOUT):
        counts = np.zeros(10, dtype=np.int64)
        test_counts = np.zeros(10, dtype=np.int64)
        for c, n in layout.items():
            counts[c] = n
            test_counts[c] = test_per_class
        pool = sample_blobs(centers, counts, noise_sigma, stream(seed, "synergy-pool", cid))
        test = sample_blobs(centers, test_counts, noise_sigma, stream(seed, "synergy-test", cid))
        rng_split = stream(seed, "synergy-split", cid)
        val_idx = []
        for c in layout:
            members = rng_split.permutation(np.flatnonzero(pool.labels == c))
            val_idx.extend(members[: int(np.floor(val_fraction * members.size + 0.5))])
        is_val = np.zeros(len(pool), dtype=bool)
        is_val[val_idx] = True
        shards.append(ClientShard(cid, pool.subset(np.flatnonzero(~is_val)),
                                  pool.subset(np.flatnonzero(is_val)), test))
    total = sum(len(s.train) for s in shards)
    return [replace(s, weight_p=len(s.train) / total) for s in shards]


def group_training(shards: list[ClientShard], group, rounds: int, sgd: M.SgdConfig, seed: int,
                   focus: int = 0) -> float:
    """Train ``group`` with local SGD plus weighted averaging each round; return ``focus``'s test accuracy.

    The reported model is ``focus``'s best-validation-loss model.
    """
    group = sorted(set(group) | {focus})
    num_features = shards[0].train.num_features
    params = {k: M.zeros(num_features, 10) for k in group}
    weights = {k: shards[k].weight_p for k in group}
    best, best_loss = params[focus].copy(), float("inf")
    for t in range(1, rounds + 1):
        for k in group:
            params[k] = M.local_opt(params[k], shards[k].train, sgd, stream(seed, "synergy-train", k, t))
        avg = weighted_average(params, weights, group)
        params = {k: avg.copy() for k in group}
        v = M.loss(params[focus], shards[focus].val)
        if v < best_loss:
            best, best_loss = params[focus].copy(), v
    return M.accuracy(best, shards[focus].test)


def synergy_scenario(seed: int = 0, rounds: int = 20, sgd: M.SgdConfig | None = None,
                     **shard_kwargs) -> SynergyReport:
    """Client 0's accuracy alone, with each partner, and with both."""
    sgd = sgd or M.SgdConfig(learning_rate=0.05, epochs=1)
    shards = synergy_shards(seed, **shard_kwargs)
    acc = {g: group_training(shards, g, rounds, sgd, seed) for g in [(0,), (0, 1), (0, 2), (0, 1, 2)]}
    return SynergyReport(acc[(0,)], acc[(0, 1)], acc[(0, 2)], acc[(0, 1, 2)])
