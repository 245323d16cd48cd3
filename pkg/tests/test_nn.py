import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risguard.dataset import fit_normalization, model_inputs, synthetic_dataset
from risguard.nn import checkpoint
from risguard.nn import layers as L
from risguard.nn.model import (DEFAULT_ARCH, DEFAULT_PARAM_COUNT, EarlyExitPolicy, ModelError,
                               backward, count_macs, expected_macs, forward, init_params,
                               layer_macs, loss, loss_and_grads, predict_early_exit, zeros_like)
from risguard.nn.training import (AdamState, adam_step, evaluate, metrics_from_predictions,
                                  train_local)

from conftest import TOY_ARCH


def _numeric_grad(params, x, y, key, idx, lam, h=1e-5):
    p = {k: v.copy() for k, v in params.items()}
    p[key][idx] += h
    up = loss(*forward(p, x), y, lam)
    p[key][idx] -= 2 * h
    down = loss(*forward(p, x), y, lam)
    return (up - down) / (2 * h)


def _rel_err(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-8)


def test_param_count_pinned():
    assert DEFAULT_ARCH.param_count() == DEFAULT_PARAM_COUNT == 26594
    params = init_params(np.random.default_rng(0))
    assert sum(v.size for v in params.values()) == DEFAULT_PARAM_COUNT
    assert list(params) == list(DEFAULT_ARCH.param_shapes())


def test_hand_convolution():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    w = np.zeros((3, 3, 1, 1))
    w[0, 1, 0, 0] = 1.0  # picks the pixel above
    w[1, 1, 0, 0] = 2.0  # and twice the centre
    out, _ = L.conv2d_forward(x, w, np.array([0.5]))
    img = np.arange(16, dtype=float).reshape(4, 4)
    above = np.vstack([np.zeros((1, 4)), img[:-1]])
    assert np.array_equal(out[0, :, :, 0], above + 2 * img + 0.5)


def test_forward_zero_model_is_half():
    params = zeros_like(init_params(np.random.default_rng(0)))
    p_aux, p = forward(params, np.zeros((2, 32, 60, 9)))
    assert np.all(p_aux == 0.5) and np.all(p == 0.5)


def test_forward_replicated_rows(rng):
    params = init_params(rng, TOY_ARCH)
    x = np.repeat(rng.normal(size=(1, 8, 10, 9)), 4, axis=0)
    p_aux, p = forward(params, x)
    assert np.all(p_aux == p_aux[0]) and np.all(p == p[0])
    assert np.all((p > 0) & (p < 1))


def test_forward_shape_error(rng):
    params = init_params(rng, TOY_ARCH)
    with pytest.raises(ModelError):
        forward(params, np.zeros((1, 8, 10, 3)))


def test_loss_anchors(rng):
    y = np.array([0.0, 1.0, 1.0])
    assert loss(np.full(3, 0.5), y, y, 0.0) <= 1e-6
    assert loss(np.full(3, 0.5), np.full(3, 0.5), y, 0.0) == pytest.approx(3 * math.log(2))
    pa, pf = rng.uniform(0.01, 0.99, 3), rng.uniform(0.01, 0.99, 3)
    bce = lambda p: -sum(t * math.log(q) + (1 - t) * math.log(1 - q) for q, t in zip(p, y))  # noqa: E731
    assert loss(pa, pf, y, 0.3) == pytest.approx(bce(pf) + 0.3 * bce(pa), rel=1e-12)


def test_gradient_check_toy_all_entries():
    rng = np.random.default_rng(1)
    params = init_params(rng, TOY_ARCH)
    x = rng.normal(size=(2, 8, 10, 9))
    y = np.array([0.0, 1.0])
    grads = backward(params, x, y, 0.3)
    for key, g in grads.items():
        assert g.shape == params[key].shape
        num = np.array([_numeric_grad(params, x, y, key, i, 0.3) for i in np.ndindex(g.shape)])
        err = np.max(np.abs(num - g.ravel())) / max(np.max(np.abs(num) + np.abs(g.ravel())), 1e-8)
        assert err < 1e-4, key


def test_gradient_check_default_widths_sampled():
    rng = np.random.default_rng(2)
    params = init_params(rng)
    x = rng.normal(size=(2, 32, 60, 9))
    y = np.array([1.0, 0.0])
    grads = backward(params, x, y, 0.3)
    for key, g in grads.items():
        flat = rng.choice(g.size, size=min(3, g.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, g.shape)
            assert _rel_err(g[idx], _numeric_grad(params, x, y, key, idx, 0.3)) < 1e-4, key


def test_zero_lambda_disconnects_aux(rng):
    params = init_params(rng, TOY_ARCH)
    g = backward(params, rng.normal(size=(3, 8, 10, 9)), np.array([0.0, 1.0, 1.0]), 0.0)
    assert np.all(g["aux.w"] == 0) and np.all(g["aux.b"] == 0)


def test_duplicate_sample_doubles_gradient(rng):
    params = init_params(rng, TOY_ARCH)
    x = rng.normal(size=(1, 8, 10, 9))
    g1 = backward(params, x, np.array([1.0]))
    g2 = backward(params, np.concatenate([x, x]), np.array([1.0, 1.0]))
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def test_adam_zero_gradient_fixed_point(rng):
    params = init_params(rng, TOY_ARCH)
    out = adam_step(params, zeros_like(params), AdamState.zeros(params))
    assert all(np.array_equal(out[k], params[k]) for k in params)


def test_adam_first_step_is_sign(rng):
    p = {"w": rng.normal(size=10)}
    g = {"w": rng.normal(size=10)}
    out = adam_step(p, g, AdamState.zeros(p), lr=1e-3)
    assert np.allclose(p["w"] - out["w"], 1e-3 * np.sign(g["w"]), rtol=1e-6)


def test_adam_two_steps_scalar_oracle():
    p = {"w": np.array([0.5, -1.0, 2.0])}
    gs = [np.array([0.1, -0.2, 0.3]), np.array([-0.4, 0.5, 0.0])]
    st_ = AdamState.zeros(p)
    cur = p
    for g in gs:
        cur = adam_step(cur, {"w": g}, st_, 1e-3)
    for i in range(3):
        w, m, v = p["w"][i], 0.0, 0.0
        for t, g in enumerate(gs, start=1):
            m = 0.9 * m + 0.1 * g[i]
            v = 0.999 * v + 0.001 * g[i] ** 2
            w -= 1e-3 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(cur["w"][i] - w) < 1e-12


def _separable(n=120, seed=0):
    ds = synthetic_dataset(n, np.random.default_rng(seed), shape=(8, 10))
    return model_inputs(replace(ds, norm=fit_normalization(ds))), ds.y.astype(float)


def test_train_local_zero_epochs_identity(rng):
    params = init_params(rng, TOY_ARCH)
    x, y = _separable(20)
    out, hist = train_local(params, x, y, 0, 8, rng)
    assert hist == [] and all(np.array_equal(out[k], params[k]) for k in params)


def test_train_local_learns_separable():
    x, y = _separable()
    params = init_params(np.random.default_rng(3), TOY_ARCH)
    params, hist = train_local(params, x, y, 20, 16, np.random.default_rng(4), lr=1e-2)
    assert len(hist) == 20
    assert evaluate(params, x, y).accuracy >= 0.95


def test_train_local_deterministic():
    x, y = _separable(40)
    runs = [train_local(init_params(np.random.default_rng(0), TOY_ARCH), x, y, 2, 8,
                        np.random.default_rng(9))[0] for _ in range(2)]
    assert checkpoint.params_hash(runs[0]) == checkpoint.params_hash(runs[1])


def test_early_exit_policy_bounds():
    with pytest.raises(ModelError):
        EarlyExitPolicy(1.0)
    with pytest.raises(ModelError):
        EarlyExitPolicy(0.49)


def test_early_exit_floor_and_ceiling(rng):
    params = init_params(rng, TOY_ARCH)
    x = rng.normal(size=(10, 8, 10, 9))
    _, exited = predict_early_exit(params, x, EarlyExitPolicy(0.5))
    assert exited.all()
    zero = zeros_like(params)
    _, exited = predict_early_exit(zero, x, EarlyExitPolicy(0.9999))
    assert not exited.any()


def test_early_exit_soundness_and_monotone(rng):
    params = init_params(rng, TOY_ARCH)
    params["aux.w"] *= 20  # spread aux confidences
    x = rng.normal(size=(40, 8, 10, 9))
    p_aux, p_final = forward(params, x)
    rates = []
    for cl in (0.5, 0.55, 0.7, 0.9):
        probs, exited = predict_early_exit(params, x, EarlyExitPolicy(cl), batch=7)
        assert np.array_equal(exited, np.maximum(p_aux, 1 - p_aux) >= cl)
        assert np.allclose(probs[exited], p_aux[exited], rtol=0, atol=0)
        assert np.allclose(probs[~exited], p_final[~exited], rtol=1e-12, atol=1e-15)
        rates.append(exited.mean())
    assert rates == sorted(rates, reverse=True)


def test_mac_counts():
    m = layer_macs()
    assert m["conv1"] == 32 * 60 * 9 * 9 * 16 == 2_488_320
    assert m["conv2"] == 16 * 30 * 9 * 16 * 32 == 2_211_840
    assert m["conv3"] == 8 * 15 * 9 * 32 * 64 == 2_211_840
    assert (m["aux"], m["fc1"], m["fc2"]) == (32, 2048, 32)
    exit_macs, full = count_macs(exited=True), count_macs()
    assert exit_macs < full
    assert exit_macs == m["conv1"] + m["conv2"] + m["aux"]
    assert count_macs(with_aux=False) == full - 32


@settings(max_examples=50)
@given(st.floats(0, 1))
def test_expected_mac_mixture(r):
    assert expected_macs(r) == pytest.approx(r * count_macs(exited=True) + (1 - r) * count_macs(), rel=1e-15)


def test_metrics_anchors():
    m = metrics_from_predictions([0, 1, 0, 1], [0, 1, 0, 1])
    assert m.accuracy == 1 and m.macro_precision == 1 and m.macro_recall == 1 and m.macro_f1 == 1
    y = np.array([0] * 7 + [1] * 3)
    m = metrics_from_predictions(y, np.zeros(10))
    assert m.accuracy == pytest.approx(0.7) and m.recall[1] == 0 and m.f1[1] == 0
    assert m.n == 10


def test_metrics_tally_oracle(rng):
    y, p = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    tp = sum(1 for a, b in zip(y, p) if a == 1 and b == 1)
    fp = sum(1 for a, b in zip(y, p) if a == 0 and b == 1)
    fn = sum(1 for a, b in zip(y, p) if a == 1 and b == 0)
    tn = 50 - tp - fp - fn
    m = metrics_from_predictions(y, p)
    assert m.confusion.tolist() == [[tn, fp], [fn, tp]]
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    assert m.precision[1] == pytest.approx(prec) and m.recall[1] == pytest.approx(rec)
    assert m.f1[1] == pytest.approx(2 * prec * rec / (prec + rec))
    assert m.accuracy == pytest.approx((tp + tn) / 50)


def test_evaluate_permutation_invariant(rng):
    params = init_params(rng, TOY_ARCH)
    x, y = _separable(30)
    perm = rng.permutation(30)
    a = evaluate(params, x, y, EarlyExitPolicy(0.55))
    b = evaluate(params, x[perm], y[perm], EarlyExitPolicy(0.55))
    assert a.as_dict() == b.as_dict()
    with pytest.raises(ValueError):
        evaluate(params, x[:0], y[:0])


def test_evaluate_mac_ratio(rng):
    params = init_params(rng, TOY_ARCH)
    x, y = _separable(30)
    m = evaluate(params, x, y, EarlyExitPolicy(0.5))
    assert m.exit_rate == 1.0
    assert m.mac_ratio == pytest.approx(count_macs(exited=True) / count_macs(with_aux=False))


def test_checkpoint_round_trip(rng, tmp_path):
    params = init_params(rng)
    for width in (4, 8):
        blob = checkpoint.encode(params, width)
        back = checkpoint.decode(blob)
        assert list(back) == list(params)
        assert checkpoint.encode(back, width) == blob
    assert all(np.array_equal(v, params[k]) for k, v in checkpoint.decode(checkpoint.encode(params, 8)).items())
    path = checkpoint.save_checkpoint(params, tmp_path / "m.rgck")
    assert path.read_bytes() == checkpoint.encode(params, 4)
    assert checkpoint.params_hash(checkpoint.load_checkpoint(path), 4) == checkpoint.params_hash(params, 4)


def test_checkpoint_errors(rng):
    blob = checkpoint.encode(init_params(rng, TOY_ARCH), 8)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(blob[:-1])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(blob + b"\0")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.encode({}, 2)


def test_loss_and_grads_value_matches_loss(rng):
    params = init_params(rng, TOY_ARCH)
    x, y = rng.normal(size=(3, 8, 10, 9)), np.array([1.0, 0.0, 1.0])
    value, _ = loss_and_grads(params, x, y, 0.3)
    assert value == loss(*forward(params, x), y, 0.3)
