from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (DEFAULT_ARCH, Architecture, EarlyExitPolicy, Params, count_macs, expected_macs,
                    loss_and_grads, predict_early_exit, zeros_like)


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params))


def adam_step(params: Params, grads: Params, state: AdamState, lr: float = 1e-3) -> Params:
    """One bias-corrected Adam update; advances ``state`` in place and returns new params."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    out = {}
    for k, w in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        out[k] = w - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return out


def train_local(params: Params, x: np.ndarray, y: np.ndarray, epochs: int, batch_size: int,
                rng: np.random.Generator, lr: float = 1e-3, lambda_aux: float = 0.3):
    """Mini-batch Adam with a fresh optimizer state.

    Returns the updated params and the mean per-sample loss of each epoch.
    """
    n = len(y)
    if n == 0:
        raise ValueError("empty shard")
    state = AdamState.zeros(params)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            value, grads = loss_and_grads(params, x[idx], y[idx], lambda_aux)
            params = adam_step(params, grads, state, lr)
            total += value
        history.append(total / n)
    return params, history


@dataclass
class Metrics:
    """Binary classification metrics; class 1 (eavesdropper) is the positive class."""
    confusion: np.ndarray  # [[tn, fp], [fn, tp]], rows = truth
    accuracy: float
    precision: np.ndarray  # per class (legit, eve)
    recall: np.ndarray
    f1: np.ndarray
    exit_rate: float | None = None
    mac_ratio: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    def as_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1,
            "precision_eve": float(self.precision[1]), "recall_eve": float(self.recall[1]),
            "f1_eve": float(self.f1[1]),
            "confusion": self.confusion.tolist(),
        }
        if self.exit_rate is not None:
            d["exit_rate"], d["mac_ratio"] = self.exit_rate, self.mac_ratio
        return d


def _safe_div(a, b):
    return a / b if b else 0.0


def metrics_from_predictions(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    cm = np.zeros((2, 2), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    precision, recall, f1 = np.zeros(2), np.zeros(2), np.zeros(2)
    for c in (0, 1):
        tp = cm[c, c]
        precision[c] = _safe_div(tp, cm[:, c].sum())
        recall[c] = _safe_div(tp, cm[c, :].sum())
        s = precision[c] + recall[c]
        f1[c] = 2 * precision[c] * recall[c] / s if s else 0.0
    return Metrics(cm, _safe_div(np.trace(cm), cm.sum()), precision, recall, f1)


def evaluate(params: Params, x: np.ndarray, y: np.ndarray, policy: EarlyExitPolicy | None = None,
             arch: Architecture = DEFAULT_ARCH) -> Metrics:
    """Threshold at 0.5; with a policy, also report exit rate and expected-MAC ratio."""
    if len(y) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    probs, exited = predict_early_exit(params, x, policy)
    m = metrics_from_predictions(y, probs >= 0.5)
    if policy is not None:
        m.exit_rate = float(exited.mean())
        m.mac_ratio = expected_macs(m.exit_rate, arch) / count_macs(arch, False, with_aux=False)
    return m
