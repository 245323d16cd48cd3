"""Early-exit convolutional binary classifier.

conv1 -> relu -> pool -> conv2 -> relu -> pool -> [aux: GAP -> dense -> sigmoid]
      -> conv3 -> relu -> pool -> GAP -> dense -> relu -> dense -> sigmoid
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L

EPS = 1e-7


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple[int, int, int] = (32, 60, 9)
    widths: tuple[int, int, int] = (16, 32, 64)
    hidden: int = 32
    kernel: int = 3

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k, (c1, c2, c3) = self.kernel, self.widths
        cin = self.input_shape[2]
        return {
            "conv1.w": (k, k, cin, c1), "conv1.b": (c1,),
            "conv2.w": (k, k, c1, c2), "conv2.b": (c2,),
            "conv3.w": (k, k, c2, c3), "conv3.b": (c3,),
            "aux.w": (c2, 1), "aux.b": (1,),
            "fc1.w": (c3, self.hidden), "fc1.b": (self.hidden,),
            "fc2.w": (self.hidden, 1), "fc2.b": (1,),
        }

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


DEFAULT_ARCH = Architecture()
# 3*3*9*16+16 + 3*3*16*32+32 + 3*3*32*64+64 + 32+1 + 64*32+32 + 32+1
DEFAULT_PARAM_COUNT = 26594
assert DEFAULT_ARCH.param_count() == DEFAULT_PARAM_COUNT

Params = dict[str, np.ndarray]


def init_params(rng: np.random.Generator, arch: Architecture = DEFAULT_ARCH) -> Params:
    """He-normal kernels for ReLU layers, Glorot-normal for the logistic heads, zero biases."""
    params = {}
    for key, shape in arch.param_shapes().items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        if key in ("aux.w", "fc2.w"):
            std = np.sqrt(2.0 / (fan_in + shape[-1]))
        else:
            std = np.sqrt(2.0 / fan_in)
        params[key] = rng.normal(0.0, std, size=shape)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _check_input(params: Params, x: np.ndarray) -> None:
    cin = params["conv1.w"].shape[2]
    if x.ndim != 4 or x.shape[3] != cin:
        raise ModelError(f"expected input (n, H, W, {cin}), got {x.shape}")


def _trunk(params, x, cache=None):
    h, c1 = L.conv2d_forward(x, params["conv1.w"], params["conv1.b"])
    h, r1 = L.relu_forward(h)
    h, p1 = L.maxpool2_forward(h)
    h, c2 = L.conv2d_forward(h, params["conv2.w"], params["conv2.b"])
    h, r2 = L.relu_forward(h)
    h2, p2 = L.maxpool2_forward(h)
    g2, s2 = L.gap_forward(h2)
    z_aux, _ = L.dense_forward(g2, params["aux.w"], params["aux.b"])
    if cache is not None:
        cache.update(c1=c1, r1=r1, p1=p1, c2=c2, r2=r2, p2=p2, s2=s2, g2=g2)
    return h2, z_aux[:, 0]


def _head(params, h2, cache=None):
    h, c3 = L.conv2d_forward(h2, params["conv3.w"], params["conv3.b"])
    h, r3 = L.relu_forward(h)
    h, p3 = L.maxpool2_forward(h)
    g3, s3 = L.gap_forward(h)
    f, _ = L.dense_forward(g3, params["fc1.w"], params["fc1.b"])
    f, rf = L.relu_forward(f)
    z, _ = L.dense_forward(f, params["fc2.w"], params["fc2.b"])
    if cache is not None:
        cache.update(c3=c3, r3=r3, p3=p3, s3=s3, g3=g3, f=f, rf=rf)
    return z[:, 0]


def forward(params: Params, x: np.ndarray, cache: dict | None = None):
    """Return (p_aux, p_final) for a batch x of shape (n, H, W, C)."""
    _check_input(params, x)
    h2, z_aux = _trunk(params, x, cache)
    z = _head(params, h2, cache)
    return L.sigmoid(z_aux), L.sigmoid(z)


def bce(p, y):
    p = np.clip(p, EPS, 1 - EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def loss(p_aux, p_final, y, lambda_aux: float = 0.3) -> float:
    """Summed BCE of the final head plus lambda_aux times that of the auxiliary head."""
    y = np.asarray(y, dtype=float)
    return float(np.sum(bce(p_final, y)) + lambda_aux * np.sum(bce(p_aux, y)))


def _dlogit(p, y):
    # derivative of clipped BCE w.r.t. the logit; zero where the clip is active
    return np.where((p > EPS) & (p < 1 - EPS), p - y, 0.0)


def loss_and_grads(params: Params, x: np.ndarray, y, lambda_aux: float = 0.3):
    y = np.asarray(y, dtype=float)
    cache: dict = {}
    p_aux, p_final = forward(params, x, cache)
    value = loss(p_aux, p_final, y, lambda_aux)
    g: Params = {}

    dz = _dlogit(p_final, y)[:, None]
    df, g["fc2.w"], g["fc2.b"] = L.dense_backward(dz, cache["f"], params["fc2.w"])
    df = L.relu_backward(df, cache["rf"])
    dg3, g["fc1.w"], g["fc1.b"] = L.dense_backward(df, cache["g3"], params["fc1.w"])
    dh = L.gap_backward(dg3, cache["s3"])
    dh = L.maxpool2_backward(dh, cache["p3"])
    dh = L.relu_backward(dh, cache["r3"])
    dh2, g["conv3.w"], g["conv3.b"] = L.conv2d_backward(dh, cache["c3"])

    dza = lambda_aux * _dlogit(p_aux, y)[:, None]
    dg2, g["aux.w"], g["aux.b"] = L.dense_backward(dza, cache["g2"], params["aux.w"])
    dh2 = dh2 + L.gap_backward(dg2, cache["s2"])

    dh = L.maxpool2_backward(dh2, cache["p2"])
    dh = L.relu_backward(dh, cache["r2"])
    dh, g["conv2.w"], g["conv2.b"] = L.conv2d_backward(dh, cache["c2"])
    dh = L.maxpool2_backward(dh, cache["p1"])
    dh = L.relu_backward(dh, cache["r1"])
    _, g["conv1.w"], g["conv1.b"] = L.conv2d_backward(dh, cache["c1"], need_dx=False)
    return value, {k: g[k] for k in params}


def backward(params: Params, x: np.ndarray, y, lambda_aux: float = 0.3) -> Params:
    return loss_and_grads(params, x, y, lambda_aux)[1]


@dataclass(frozen=True)
class EarlyExitPolicy:
    cl: float

    def __post_init__(self):
        if not 0.5 <= self.cl < 1.0:
            raise ModelError(f"confidence level {self.cl} outside [0.5, 1)")


def confidence(p):
    return np.maximum(p, 1 - p)


def predict_early_exit(params: Params, x: np.ndarray, policy: EarlyExitPolicy | None,
                       batch: int = 64):
    """Probabilities and exit flags; the main head only runs for non-exited samples."""
    _check_input(params, x)
    probs, exited = np.empty(len(x)), np.zeros(len(x), dtype=bool)
    for lo in range(0, len(x), batch):
        sl = slice(lo, lo + batch)
        h2, z_aux = _trunk(params, x[sl])
        p_aux = L.sigmoid(z_aux)
        ex = (confidence(p_aux) >= policy.cl) if policy else np.zeros(len(p_aux), dtype=bool)
        p = p_aux.copy()
        if (~ex).any():
            p[~ex] = L.sigmoid(_head(params, h2[~ex]))
        probs[sl], exited[sl] = p, ex
    return probs, exited


def predict(params: Params, x: np.ndarray, batch: int = 64) -> np.ndarray:
    return predict_early_exit(params, x, None, batch)[0]


def layer_macs(arch: Architecture = DEFAULT_ARCH) -> dict[str, int]:
    """Multiply-accumulates per layer; 'same' convs keep the spatial size, pools halve it."""
    H, W, cin = arch.input_shape
    k2 = arch.kernel ** 2
    c1, c2, c3 = arch.widths
    macs = {"conv1": H * W * k2 * cin * c1}
    H, W = H // 2, W // 2
    macs["conv2"] = H * W * k2 * c1 * c2
    H, W = H // 2, W // 2
    macs["aux"] = c2
    macs["conv3"] = H * W * k2 * c2 * c3
    macs["fc1"] = c3 * arch.hidden
    macs["fc2"] = arch.hidden
    return macs


def count_macs(arch: Architecture = DEFAULT_ARCH, exited: bool = False, with_aux: bool = True) -> int:
    """MACs of the executed prefix. ``with_aux=False`` gives the plain model without the exit head."""
    m = layer_macs(arch)
    if exited:
        return m["conv1"] + m["conv2"] + m["aux"]
    return sum(v for k, v in m.items() if with_aux or k != "aux")


def expected_macs(exit_rate: float, arch: Architecture = DEFAULT_ARCH) -> float:
    return exit_rate * count_macs(arch, True) + (1 - exit_rate) * count_macs(arch, False)
