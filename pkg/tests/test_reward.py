import itertools

import numpy as np
import pytest

from dpfl import model as M
from dpfl.aggregate import WeightedSum
from dpfl.errors import ConfigError, ModelStreamError
from dpfl.reward import (RewardOracle, SyntheticCutInstance, cut_reward, random_cut_instance,
                         reward_of_accumulator, reward_of_set)

from conftest import random_batch


def toy(n=9, seed=0):
    rng = np.random.default_rng(seed)
    models = [rng.standard_normal(M.param_dim(4, 3)) for _ in range(n)]
    weights = list(rng.uniform(0.05, 1, n))
    return models, weights, random_batch(rng, n=25)


def average_then_evaluate(models, weights, members, val):
    members = sorted(members)
    num = np.zeros_like(models[0])
    den = 0.0
    for i in members:
        num = num + weights[i] * models[i]
        den += weights[i]
    w = num / den
    z = val.features @ w[:12].reshape(3, 4).T + w[12:]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(np.mean(logp[np.arange(len(val)), val.labels]))


def test_empty_set_is_self_reward():
    models, weights, val = toy()
    assert reward_of_set(0, set(), models, weights, val) == -M.loss(models[0], val)


def test_identical_models_constant_reward():
    _, weights, val = toy()
    w = np.random.default_rng(5).standard_normal(15)
    oracle = RewardOracle(2, val, [w] * 9, weights)
    values = {oracle(s) for r in range(4) for s in itertools.combinations([0, 1, 3, 4, 5], r)}
    assert max(values) - min(values) < 1e-12


def test_all_subsets_match_independent_loop():
    models, weights, val = toy()
    oracle = RewardOracle(0, val, models, weights)
    others = range(1, 9)
    for r in range(9):
        for s in itertools.combinations(others, r):
            expect = average_then_evaluate(models, weights, set(s) | {0}, val)
            assert oracle.of_set(s) == pytest.approx(expect, rel=1e-12)
    assert oracle.calls == 256


def test_accounting_is_monotone():
    models, weights, val = toy()
    oracle = RewardOracle(0, val, models, weights)
    seen = []
    for s in ([], [1], [1, 2], [3]):
        oracle(s)
        seen.append((oracle.calls, oracle.models_touched))
    assert seen == sorted(seen) and seen[-1] == (4, 4)


def test_missing_model_error():
    models, weights, val = toy()
    oracle = RewardOracle(0, val, {0: models[0], 1: models[1]}, weights)
    with pytest.raises(ModelStreamError, match="not received within budget"):
        oracle({1, 2})


def test_accumulator_rewards_match_sets():
    models, weights, val = toy()
    oracle = RewardOracle(0, val, models, weights)
    acc = WeightedSum.single(0, models[0], weights[0])
    assert reward_of_accumulator(0, acc, val) == oracle(set())
    acc.add(4, models[4], weights[4])
    assert reward_of_accumulator(0, acc, val) == pytest.approx(oracle({4}), rel=1e-12)
    rng = np.random.default_rng(9)
    for _ in range(300):
        j = int(rng.integers(1, 9))
        if j in acc.member_ids:
            acc.remove(j, models[j], weights[j])
        else:
            acc.add(j, models[j], weights[j])
        assert reward_of_accumulator(0, acc, val) == pytest.approx(oracle(acc.member_ids), rel=1e-9)


def test_accumulator_must_hold_owner():
    models, weights, val = toy()
    with pytest.raises(ConfigError):
        reward_of_accumulator(0, WeightedSum.single(1, models[1], weights[1]), val)


def test_cut_definition():
    w = np.zeros((4, 4))
    w[1, 3] = w[3, 1] = 2.5
    inst = SyntheticCutInstance(w)
    assert cut_reward(inst, []) == 0 == cut_reward(inst, range(4))
    assert cut_reward(inst, {1}) == 2.5 == cut_reward(inst, {3, 0})


def test_cut_matches_double_loop():
    inst = random_cut_instance(10, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = {i for i in range(10) if rng.random() < 0.5}
        expect = sum(inst.edge_weights[i, j] for i in s for j in range(10) if j not in s)
        assert cut_reward(inst, s) == pytest.approx(expect, rel=1e-12)


def test_cut_instance_validation():
    with pytest.raises(ConfigError):
        SyntheticCutInstance(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ConfigError):
        SyntheticCutInstance(np.eye(2))
    with pytest.raises(ConfigError):
        cut_reward(random_cut_instance(3, 0), {5})
