"""Self-checks behind ``greedy-validate`` and ``equivalence-check``."""
from __future__ import annotations

import numpy as np

from .aggregate import WeightedSum, weighted_average
from .errors import ConfigError
from .graph import bggc, brute_force_best, ggc
from .model import LabeledBatch
from .reward import RewardOracle, cut_reward, random_cut_instance
from .rng import stream

EQUIVALENCE_BUDGETS = (2, 5, 10, None)


def greedy_validate(n: int, trials: int, seed: int) -> dict:
    """Greedy selection vs exhaustive optimum on random max-cut instances (unbounded budget).

    The selecting "client" is a sentinel id ``n`` outside the instance, so the
    greedy starts from the empty cut set.
    """
    if n > 12:
        raise ConfigError("greedy-validate needs n <= 12 (brute force)")
    ratios, self_ok = [], 0  # self_ok counts selections scoring at least the empty cut
    for trial in range(trials):
        inst = random_cut_instance(n, seed, trial)

        def reward(members, inst=inst):
            return cut_reward(inst, members - {n})

        chosen, _ = ggc(n, range(n), None, reward, stream(seed, "greedy-validate", trial))
        value = cut_reward(inst, chosen)
        best = cut_reward(inst, brute_force_best(n, range(n), None, reward))
        ratios.append(1.0 if best == 0 else value / best)
        self_ok += value >= -1e-12
    if not trials:
        return {"n": n, "trials": 0, "mean_ratio": None, "min_ratio": None, "self_pass_rate": None}
    return {"n": n, "trials": trials, "mean_ratio": float(np.mean(ratios)),
            "min_ratio": float(np.min(ratios)), "self_pass_rate": self_ok / trials}


def random_instance(seed: int, trial: int, max_clients: int = 40, num_features: int = 5,
                    num_classes: int = 4, val_size: int = 30) -> dict:
    """Random client models, weights and a validation batch for one equivalence trial."""
    rng = stream(seed, "equivalence-instance", trial)
    n = int(rng.integers(2, max_clients + 1))
    k = int(rng.integers(n))
    others = [j for j in range(n) if j != k]
    size = int(rng.integers(1, len(others) + 1))
    cands = sorted(int(j) for j in rng.choice(others, size=size, replace=False))
    d = num_classes * num_features + num_classes
    models = [rng.standard_normal(d) for _ in range(n)]
    weights = rng.uniform(0.1, 1.0, size=n)
    weights = list(weights / weights.sum())
    val = LabeledBatch(rng.standard_normal((val_size, num_features)),
                       rng.integers(num_classes, size=val_size))
    return {"n": n, "k": k, "candidates": cands, "budget": EQUIVALENCE_BUDGETS[trial % len(EQUIVALENCE_BUDGETS)],
            "models": models, "weights": weights, "val": val}


def accumulator_drift(models, weights, members, rng: np.random.Generator, ops: int = 200) -> float:
    """Relative error of an accumulator after random add/remove churn vs the direct average."""
    members = sorted(members)
    acc = WeightedSum.single(members[0], models[members[0]], weights[members[0]])
    for j in members[1:]:
        acc.add(j, models[j], weights[j])
    pool = members[1:]
    for _ in range(ops):
        if not pool:
            break
        j = int(rng.choice(pool))
        if j in acc.member_ids and len(acc.member_ids) > 1:
            acc.remove(j, models[j], weights[j])
        elif j not in acc.member_ids:
            acc.add(j, models[j], weights[j])
    direct = weighted_average(models, weights, acc.member_ids)
    return float(np.max(np.abs(acc.mean() - direct)) / max(np.max(np.abs(direct)), 1e-300))


def run_pair(inst: dict, rng_seed: int, trial: int, label: str = "equivalence-greedy"):
    k, cands, budget = inst["k"], inst["candidates"], inst["budget"]
    models, weights, val = inst["models"], inst["weights"], inst["val"]
    direct = RewardOracle(k, val, models, weights)
    x_direct, trace_direct = ggc(k, cands, budget, direct, stream(rng_seed, label, trial))

    def receive(ids):
        return [models[j] for j in ids]

    batched = RewardOracle(k, val, {}, weights)
    x_batched, trace_batched = bggc(k, cands, budget, models[k], weights, receive, batched,
                                    stream(rng_seed, label, trial))
    return x_direct, trace_direct, x_batched, trace_batched


def equivalence_check(trials: int, seed: int) -> dict:
    """Direct and batched greedy on random instances must pick identical sets."""
    mismatches, drift_failures = [], []
    max_drift = 0.0
    seed_sensitive = 0
    self_violations = 0
    for trial in range(trials):
        inst = random_instance(seed, trial)
        x_direct, _, x_batched, trace_b = run_pair(inst, seed, trial)
        audit = RewardOracle(inst["k"], inst["val"], inst["models"], inst["weights"])
        own = audit(set())
        self_violations += sum(audit(x) < own - 1e-12 for x in (x_direct, x_batched))
        offending = {"trial": trial, "n": inst["n"], "k": inst["k"], "candidates": inst["candidates"],
                     "budget": inst["budget"], "seed": seed}
        if x_direct != x_batched:
            mismatches.append({**offending, "direct": sorted(x_direct), "batched": sorted(x_batched)})
        cap = inst["budget"]
        if cap is not None and trace_b.peak_foreign_models > cap:
            mismatches.append({**offending, "peak_foreign_models": trace_b.peak_foreign_models})
        drift = accumulator_drift(inst["models"], inst["weights"], set(inst["candidates"]) | {inst["k"]},
                                  stream(seed, "equivalence-drift", trial))
        max_drift = max(max_drift, drift)
        if drift >= 1e-9:
            drift_failures.append({**offending, "drift": drift})
        other, _, _, _ = run_pair(inst, seed + 1, trial)
        seed_sensitive += other != x_direct
    return {"trials": trials, "seed": seed, "equal": trials - len({m["trial"] for m in mismatches}),
            "mismatches": mismatches, "max_accumulator_rel_err": max_drift,
            "drift_failures": drift_failures, "seed_sensitive_trials": seed_sensitive,
            "self_checks": 2 * trials, "self_violations": self_violations,
            "ok": not mismatches and not drift_failures and not self_violations}
