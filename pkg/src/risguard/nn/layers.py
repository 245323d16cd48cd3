"""NHWC float64 layer primitives with explicit backward passes."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    """'Same' convolution, stride 1. x: (n, H, W, Cin), w: (k, k, Cin, Cout)."""
    k = w.shape[0]
    p = k // 2
    n, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    # windows: (n, H, W, C, k, k) -> (n*H*W, k*k*C) ordered (kh, kw, c)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * H * W, k * k * C)
    out = cols @ w.reshape(k * k * C, -1) + b
    return out.reshape(n, H, W, -1), (cols, x.shape, w)


def conv2d_backward(dout, cache, need_dx=True):
    cols, (n, H, W, C), w = cache
    k = w.shape[0]
    p = k // 2
    d2 = dout.reshape(n * H * W, -1)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(k * k * C, -1).T).reshape(n, H, W, k, k, C)
    dxp = np.zeros((n, H + 2 * p, W + 2 * p, C))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p:p + H, p:p + W, :], dw, db


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    n, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    blocks = (x[:, :2 * Ho, :2 * Wo, :].reshape(n, Ho, 2, Wo, 2, C)
              .transpose(0, 1, 3, 5, 2, 4).reshape(n, Ho, Wo, C, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(dout, cache):
    arg, (n, H, W, C) = cache
    Ho, Wo = H // 2, W // 2
    blocks = np.zeros((n, Ho, Wo, C, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, H, W, C))
    dx[:, :2 * Ho, :2 * Wo, :] = (blocks.reshape(n, Ho, Wo, C, 2, 2)
                                  .transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * Ho, 2 * Wo, C))
    return dx


def gap_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(dout, shape):
    n, H, W, C = shape
    return np.broadcast_to(dout[:, None, None, :] / (H * W), shape).copy()


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
