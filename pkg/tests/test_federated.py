import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risguard.dataset import fit_normalization, model_inputs, synthetic_dataset
from risguard.federated import (ClientUpdate, FederationError, RoundState, client_train,
                                fedavg_aggregate, run_round, run_training)
from risguard.nn import checkpoint
from risguard.nn.model import init_params
from risguard.nn.training import train_local
from risguard.scenario import rng_for

from conftest import TOY_ARCH, small_pipeline


def _update(params, n, ap=0):
    return ClientUpdate(ap, checkpoint.encode(params, 8), n, 0, 0.0)


def _const(v):
    return {"w": np.full((2, 3), float(v)), "b": np.array([float(v)])}


def _shard(n, owner, seed, norm=None):
    ds = synthetic_dataset(n, np.random.default_rng(seed), shape=(8, 10))
    return replace(ds, owner=owner, norm=norm or fit_normalization(ds))


def test_single_client_is_exact(rng):
    p = init_params(rng, TOY_ARCH)
    out = fedavg_aggregate([_update(p, 17)])
    assert all(np.array_equal(out[k], p[k]) for k in p)


def test_weighted_two_client_anchor():
    out = fedavg_aggregate([_update(_const(2), 1, 0), _update(_const(4), 3, 1)])
    assert np.all(out["w"] == 3.5) and np.all(out["b"] == 3.5)


def test_identical_clients_exact(rng):
    p = init_params(rng, TOY_ARCH)
    out = fedavg_aggregate([_update(p, n, ap) for ap, n in enumerate((3, 9, 1, 40))])
    assert all(np.array_equal(out[k], p[k]) for k in p)


def test_five_client_oracle(rng):
    params = [init_params(np.random.default_rng(s), TOY_ARCH) for s in range(5)]
    ns = [5, 11, 2, 30, 7]
    out = fedavg_aggregate([_update(p, n, i) for i, (p, n) in enumerate(zip(params, ns))])
    for k in out:
        want = sum(n * p[k] for p, n in zip(params, ns)) / sum(ns)
        assert np.max(np.abs(out[k] - want)) <= 1e-12


def test_permutation_invariance_bitwise(rng):
    ups = [_update(init_params(np.random.default_rng(s), TOY_ARCH), n, ap)
           for s, (ap, n) in enumerate([(0, 4), (3, 9), (5, 4), (6, 1)])]
    ref = checkpoint.params_hash(fedavg_aggregate(ups), 8)
    perms = list(itertools.permutations(ups))
    for i in np.random.default_rng(0).choice(len(perms), 20, replace=False):
        assert checkpoint.params_hash(fedavg_aggregate(list(perms[i])), 8) == ref


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.lists(st.integers(1, 50), min_size=1, max_size=5))
def test_aggregate_commutes_with_affine_maps(a, b, ns):
    base = [init_params(np.random.default_rng(i), TOY_ARCH) for i in range(len(ns))]
    mapped = [{k: a * v + b for k, v in p.items()} for p in base]
    left = fedavg_aggregate([_update(p, n, i) for i, (p, n) in enumerate(zip(mapped, ns))])
    right = fedavg_aggregate([_update(p, n, i) for i, (p, n) in enumerate(zip(base, ns))])
    for k in left:
        assert np.allclose(left[k], a * right[k] + b, rtol=1e-9, atol=1e-9)


def test_aggregate_errors():
    with pytest.raises(FederationError):
        fedavg_aggregate([])
    with pytest.raises(FederationError):
        fedavg_aggregate([_update(_const(1), 1), _update({"w": np.zeros((2, 3))}, 1, 1)])


def _state(seed=0, epochs=1):
    return RoundState(0, init_params(np.random.default_rng(seed), TOY_ARCH), epochs=epochs,
                      batch_size=8, lr=1e-2)


def test_one_client_round_equals_local_training():
    shard = _shard(24, 2, 1)
    state = _state()
    after = run_round(state, [shard], 7)
    local, _ = train_local(state.params, model_inputs(shard), shard.y.astype(float), 1, 8,
                           rng_for(7, "shuffle:round_0"), 1e-2, 0.3)
    assert checkpoint.params_hash(after.params, 8) == checkpoint.params_hash(local, 8)
    assert after.round == 1 and len(after.history) == 1
    assert after.history[0].clients == (2,) and after.history[0].n_samples == (24,)


def test_identical_shards_equal_one_client():
    shard = _shard(24, 0, 1)
    state = _state()
    one = run_round(state, [shard], 3)
    three = run_round(state, [replace(shard, owner=i) for i in range(3)], 3)
    assert checkpoint.params_hash(one.params, 8) == checkpoint.params_hash(three.params, 8)


def test_round_failure_leaves_state_untouched():
    state = _state()
    before = checkpoint.params_hash(state.params, 8)
    empty = replace(_shard(4, 1, 0).subset([]), owner=1)
    with pytest.raises(FederationError):
        run_round(state, [_shard(10, 0, 0), empty], 0)
    with pytest.raises(FederationError):
        run_round(state, [], 0)
    assert checkpoint.params_hash(state.params, 8) == before and state.round == 0


def test_client_returns_update_only():
    shard = _shard(10, 4, 0)
    payload = checkpoint.encode(init_params(np.random.default_rng(0), TOY_ARCH), 8)
    up = client_train(payload, shard, 3, 1, 4, np.random.default_rng(0), 1e-3, 0.3)
    assert isinstance(up, ClientUpdate)
    assert (up.client_ap, up.n_samples, up.round) == (4, 10, 3)
    assert isinstance(up.payload, bytes) and np.isfinite(up.mean_loss)
    assert set(vars(up)) == {"client_ap", "payload", "n_samples", "round", "mean_loss"}


def test_history_length_and_determinism():
    shards = [_shard(20, 0, 1), _shard(16, 1, 2), _shard(12, 2, 3)]
    runs = []
    for _ in range(2):
        s = _state()
        for _ in range(3):
            s = run_round(s, shards, 11, test=shards[0])
        runs.append(s)
    assert len(runs[0].history) == 3 and [h.round for h in runs[0].history] == [0, 1, 2]
    assert runs[0].history[-1].test is not None
    assert checkpoint.params_hash(runs[0].params, 8) == checkpoint.params_hash(runs[1].params, 8)


def test_zero_rounds_keeps_initial_model(small_cfg):
    topo, _, _, _, ds = small_pipeline(small_cfg)
    res = run_training(small_cfg, ds, topo, rounds=0)
    init = init_params(rng_for(small_cfg, "init"))
    assert checkpoint.params_hash(res.params, 8) == checkpoint.params_hash(init, 8)
    assert res.history == () and res.round_log() == ""


def test_run_training_small_pipeline(small_cfg):
    topo, _, _, _, ds = small_pipeline(small_cfg)
    res = run_training(small_cfg, ds, topo)
    assert len(res.history) == small_cfg.fl_rounds
    assert sum(len(s) for s in res.shards) == len(res.train)
    assert len(res.train) + len(res.test) == 40
    assert res.metrics is not None and 0 <= res.metrics.accuracy <= 1
    lines = res.round_log().splitlines()
    assert len(lines) == small_cfg.fl_rounds * len(res.clients)
    again = run_training(small_cfg, ds, topo)
    assert checkpoint.params_hash(again.params, 8) == checkpoint.params_hash(res.params, 8)
