import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpfl import checks
from dpfl.errors import ConfigError, ModelStreamError
from dpfl.graph import (CollabGraph, _decide, bggc, brute_force_best, ggc, random_graph)
from dpfl.reward import RewardOracle, cut_reward, random_cut_instance
from dpfl.rng import stream


def modular(coeffs, k):
    return lambda members: float(sum(coeffs[j] for j in members if j != k))


def table_reward(seed, n):
    """An arbitrary (generally non-submodular) set function given by a random lookup table."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(2 ** n)
    return lambda members: float(values[sum(1 << j for j in members)])


def test_empty_candidates_and_zero_budget():
    r = modular({1: 1.0}, 0)
    assert ggc(0, [], 3, r, stream(0, "g"))[0] == set()
    chosen, trace = ggc(0, [1], 0, r, stream(0, "g"))
    assert chosen == set() and trace.oracle_calls == 0


def test_self_candidate_rejected():
    with pytest.raises(ConfigError):
        ggc(0, [0, 1], 2, modular({}, 0), stream(0, "g"))


def test_decide_four_cases():
    rng = np.random.default_rng(0)
    assert _decide(1.0, 0.0, rng, "lockstep")[2] is True
    assert _decide(0.0, 1.0, rng, "lockstep")[2] is False
    assert _decide(0.0, 0.0, rng, "lockstep")[0] == 1.0
    assert _decide(0.0, 0.0, rng, "lockstep")[2] is True
    p, u, add = _decide(1.0, 3.0, rng, "lockstep")
    assert p == 0.25 and add == (u < 0.25)


def test_mixed_mode_draws_only_in_mixed_case():
    rng = np.random.default_rng(0)
    assert _decide(1.0, 0.0, rng, "mixed")[1] is None
    assert _decide(0.0, 0.0, rng, "mixed")[1] is None
    assert _decide(0.5, 0.5, rng, "mixed")[1] is not None


def test_modular_positive_takes_first_two_in_shuffle():
    coeffs = {j: 1.0 + j for j in range(1, 9)}
    for seed in range(20):
        chosen, trace = ggc(0, coeffs, 2, modular(coeffs, 0), stream(seed, "mod"))
        assert chosen == set(trace.order[:2])
        assert trace.decisions() == [(trace.order[0], True), (trace.order[1], True)]


def test_modular_negative_selects_nobody():
    coeffs = {j: -1.0 - j for j in range(1, 9)}
    chosen, trace = ggc(0, coeffs, 2, modular(coeffs, 0), stream(1, "mod"))
    assert chosen == set() and not any(r.added for r in trace.records)


def test_trace_records_are_consistent():
    inst = random_cut_instance(9, seed=2)
    reward = lambda m: cut_reward(inst, m - {9})  # noqa: E731
    for seed in range(30):
        _, trace = ggc(9, range(9), None, reward, stream(seed, "trace"))
        for r in trace.records:
            assert r.a >= 0 and r.b >= 0 and 0 <= r.p <= 1
            assert r.added == (r.coin < r.p)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.sampled_from([1, 2, 3, None]),
       st.sampled_from(["lockstep", "mixed"]))
def test_no_worse_than_self_on_arbitrary_rewards(seed, m, budget, coin_mode):
    reward = table_reward(seed, m + 1)
    chosen, trace = ggc(0, range(1, m + 1), budget, reward, stream(seed, "nws"), coin_mode)
    assert reward(frozenset(chosen) | {0}) >= reward(frozenset({0})) - 1e-12
    assert budget is None or len(chosen) <= budget
    assert trace.oracle_calls <= 4 * m


def test_greedy_cut_ratio():
    report = checks.greedy_validate(10, 500, seed=0)
    assert report["mean_ratio"] >= 0.45
    assert report["min_ratio"] >= 0
    assert report["self_pass_rate"] == 1.0


def test_greedy_validate_empty_and_guard():
    assert checks.greedy_validate(10, 0, seed=0)["mean_ratio"] is None
    with pytest.raises(ConfigError):
        checks.greedy_validate(13, 1, seed=0)


def test_direct_and_batched_agree_on_100_tuples():
    report = checks.equivalence_check(100, seed=0)
    assert report["equal"] == 100 and report["ok"]
    assert report["max_accumulator_rel_err"] < 1e-9
    assert report["seed_sensitive_trials"] >= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["lockstep", "mixed"]))
def test_direct_and_batched_traces_match(trial, coin_mode):
    inst = checks.random_instance(seed=7, trial=trial)
    k, cands, budget = inst["k"], inst["candidates"], inst["budget"]
    direct = RewardOracle(k, inst["val"], inst["models"], inst["weights"])
    x1, t1 = ggc(k, cands, budget, direct, stream(3, "pair", trial), coin_mode)
    x2, t2 = bggc(k, cands, budget, inst["models"][k], inst["weights"],
                  lambda ids: [inst["models"][j] for j in ids],
                  RewardOracle(k, inst["val"], {}, inst["weights"]), stream(3, "pair", trial), coin_mode)
    assert x1 == x2
    assert t1.order == t2.order and t1.decisions() == t2.decisions()


def test_batched_peak_and_stream_errors():
    inst = checks.random_instance(seed=1, trial=3, max_clients=30)
    while len(inst["candidates"]) < 10:
        inst = checks.random_instance(seed=1, trial=int(np.random.default_rng(len(inst["candidates"])).integers(1e6)))
    k, models, weights = inst["k"], inst["models"], inst["weights"]
    sizes = []

    def receive(ids):
        sizes.append(len(ids))
        return [models[j] for j in ids]

    oracle = RewardOracle(k, inst["val"], {}, weights)
    _, trace = bggc(k, inst["candidates"], 3, models[k], weights, receive, oracle, stream(0, "peak"))
    assert max(sizes) <= 3 and trace.peak_foreign_models <= 3
    with pytest.raises(ModelStreamError, match="incomplete model stream"):
        bggc(k, inst["candidates"], 3, models[k], weights, lambda ids: [models[j] for j in ids[:-1]],
             oracle, stream(0, "peak"))


def test_scaling_rewards_keeps_trace():
    inst = random_cut_instance(10, seed=5)
    base = lambda m: cut_reward(inst, m - {10})  # noqa: E731
    doubled = lambda m: 2.0 * base(m)  # noqa: E731
    for seed in range(30):
        x1, t1 = ggc(10, range(10), 4, base, stream(seed, "scale"))
        x2, t2 = ggc(10, range(10), 4, doubled, stream(seed, "scale"))
        assert x1 == x2
        assert [(r.p, r.coin, r.added) for r in t1.records] == [(r.p, r.coin, r.added) for r in t2.records]


def test_same_seed_same_trace():
    inst = random_cut_instance(8, seed=6)
    reward = lambda m: cut_reward(inst, m - {8})  # noqa: E731
    a = ggc(8, range(8), None, reward, stream(11, "det"))[1].to_json()
    b = ggc(8, range(8), None, reward, stream(11, "det"))[1].to_json()
    assert a == b


def bitmask_best(k, cands, budget, reward):
    best = None
    for mask in range(1 << len(cands)):
        members = [c for i, c in enumerate(cands) if mask >> i & 1]
        if budget is not None and len(members) > budget:
            continue
        v = reward(frozenset(members) | {k})
        if best is None or v > best[0] or (v == best[0] and members < best[1]):
            best = (v, members)
    return best


def test_brute_force_matches_bitmask_enumerator():
    for trial in range(50):
        inst = random_cut_instance(9, seed=8, trial=trial)
        reward = lambda m, inst=inst: cut_reward(inst, m - {9})  # noqa: E731
        budget = [None, 2, 4, 6][trial % 4]
        chosen = brute_force_best(9, range(9), budget, reward)
        value, members = bitmask_best(9, list(range(9)), budget, reward)
        assert reward(frozenset(chosen) | {9}) == value
        assert chosen == set(members)


def test_brute_force_small_cases():
    coeffs = {1: 0.5, 2: 3.0, 3: 1.0, 4: 2.0}
    assert brute_force_best(0, coeffs, 2, modular(coeffs, 0)) == {2, 4}
    assert brute_force_best(0, coeffs, 0, modular(coeffs, 0)) == set()
    # ties go to the lexicographically smallest list
    assert brute_force_best(0, [1, 2, 3], 1, lambda m: float(len(m))) == {1}
    with pytest.raises(ConfigError):
        brute_force_best(0, range(1, 14), 2, lambda m: 0.0)


def test_random_graph_rows():
    g = random_graph(12, 4, seed=3)
    assert all(len(row) == 4 and k not in row and len(set(row)) == 4 for k, row in enumerate(g.omega))
    assert g.omega == random_graph(12, 4, seed=3).omega
    assert g.omega != random_graph(12, 4, seed=4).omega
    assert not g.violations()
    assert all(len(row) == 2 for row in random_graph(3, 9, seed=0).omega)


def test_graph_violations():
    g = CollabGraph(3, [[1], [0, 2], []], [[1], [2], [0]], budget=1)
    problems = g.violations()
    assert any("budget" in p for p in problems) and any("outside omega" in p for p in problems)


def test_greedy_skips_nothing_when_budget_covers_all():
    reward = table_reward(4, 6)
    for seed in range(10):
        _, trace = ggc(0, range(1, 6), None, reward, stream(seed, "all"))
        assert len(trace.records) == 5
        assert trace.oracle_calls == 2 + 2 * 5
