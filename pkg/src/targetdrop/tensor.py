"""Dense array primitives used by the drop layers and the harness network.

All feature tensors are numpy ``float64`` arrays in channel-last layout:
``(H, W, C)`` for a single sample, ``(N, H, W, C)`` for a batch, row-major
with C contiguous. Channel vectors are 1-D arrays of length C.

Every differentiable op has a ``*_backward`` counterpart that takes the
upstream gradient plus whatever the forward pass needs, and returns the
gradient(s) with respect to the inputs (reverse mode, one op at a time).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def as_feature(u, rank=(3, 4)) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim not in rank:
        raise ShapeError(f"expected rank in {rank}, got shape {u.shape}")
    return u


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# --- channel statistics ---------------------------------------------------


def global_avg_pool(u) -> np.ndarray:
    """Mean over the two spatial axes; (H, W, C) -> (C,), (N, H, W, C) -> (N, C)."""
    u = as_feature(u)
    h, w = u.shape[-3], u.shape[-2]
    if h < 1 or w < 1:
        raise ShapeError("degenerate shape: empty spatial extent")
    return u.sum(axis=(-3, -2)) / (h * w)


def global_avg_pool_backward(grad_v, input_shape) -> np.ndarray:
    grad_v = np.asarray(grad_v, dtype=np.float64)
    input_shape = tuple(input_shape)
    expected = input_shape[:-3] + input_shape[-1:]
    if grad_v.shape != expected:
        raise ShapeError(f"global_avg_pool_backward: upstream {grad_v.shape}, expected {expected}")
    h, w = input_shape[-3], input_shape[-2]
    g = grad_v[..., None, None, :] / (h * w)
    return np.broadcast_to(g, input_shape).copy()


# --- linear algebra -------------------------------------------------------


def matvec(w, x) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {w.shape} by {x.shape}")
    return w @ x


def matvec_backward(grad_y, w, x) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(grad_w, grad_x)``."""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != (w.shape[0],):
        raise ShapeError(f"matvec_backward: upstream {grad_y.shape}, expected {(w.shape[0],)}")
    return np.outer(grad_y, x), w.T @ grad_y


# --- elementwise ----------------------------------------------------------


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_y, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    grad_y = np.asarray(grad_y, dtype=np.float64)
    _check_same(grad_y, x, "relu_backward")
    return grad_y * (x > 0)


def sigmoid(x) -> np.ndarray:
    # split on sign so neither branch overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_y, y) -> np.ndarray:
    """``y`` is the forward output ``sigmoid(x)``."""
    y = np.asarray(y, dtype=np.float64)
    grad_y = np.asarray(grad_y, dtype=np.float64)
    _check_same(grad_y, y, "sigmoid_backward")
    return grad_y * y * (1.0 - y)


def pointwise_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b, "pointwise_mul")
    return a * b


def pointwise_mul_backward(grad_y, a, b) -> tuple[np.ndarray, np.ndarray]:
    grad_y = np.asarray(grad_y, dtype=np.float64)
    _check_same(grad_y, np.asarray(a), "pointwise_mul_backward")
    return grad_y * b, grad_y * a


def scalar_mul(a, s: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * s


def argmax_spatial(u_c) -> tuple[int, int]:
    """Position of the maximum of a 2-D map; ties go to the first in row-major order."""
    u_c = np.asarray(u_c)
    if u_c.ndim != 2 or u_c.size == 0:
        raise ShapeError(f"argmax_spatial needs a nonempty 2-D map, got {u_c.shape}")
    flat = int(np.argmax(u_c))
    a, b = divmod(flat, u_c.shape[1])
    return a, b


# --- convolution ----------------------------------------------------------


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, Ho, Wo, Cin, kh, kw), flattened over the last three axes
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, -1)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    kh, kw, cin, cout = w.shape
    return w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """NHWC convolution (cross-correlation).

    ``x``: (N, H, W, Cin); ``w``: (kh, kw, Cin, Cout); ``b``: (Cout,) or None.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = w.shape[:2]
    xp = _pad_hw(x, pad)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    cols = _im2col(xp, kh, kw, stride)
    out = cols @ _kernel_matrix(w)
    if b is not None:
        out = out + b
    return out


def conv2d_backward(grad_y, x, w, stride: int = 1, pad: int = 0):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    x = np.asarray(x, dtype=np.float64)
    grad_y = np.asarray(grad_y, dtype=np.float64)
    kh, kw = w.shape[:2]
    xp = _pad_hw(x, pad)
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    expected = (x.shape[0], ho, wo, w.shape[3])
    if grad_y.shape != expected:
        raise ShapeError(f"conv2d_backward: upstream {grad_y.shape}, expected {expected}")
    cols = _im2col(xp, kh, kw, stride)
    cin, cout = w.shape[2], w.shape[3]
    gy = grad_y.reshape(-1, cout)
    grad_w = (cols.reshape(-1, cin * kh * kw).T @ gy).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    grad_b = grad_y.sum(axis=(0, 1, 2))
    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            # contribution of kernel tap (i, j) to every output position
            grad_xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += (
                grad_y @ w[i, j].T
            )
    if pad:
        grad_xp = grad_xp[:, pad:-pad, pad:-pad, :]
    return grad_xp, grad_w, grad_b


# --- dense + loss ---------------------------------------------------------


def dense(x, w, b=None) -> np.ndarray:
    """``x``: (N, Din); ``w``: (Din, Dout)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    out = x @ w
    if b is not None:
        out = out + b
    return out


def dense_backward(grad_y, x, w):
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(f"dense_backward: upstream {grad_y.shape}, expected {(x.shape[0], w.shape[1])}")
    return grad_y @ w.T, x.T @ grad_y, grad_y.sum(axis=0)


def log_softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels) -> float:
    """Mean cross-entropy over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels].mean())


def softmax_cross_entropy_backward(logits, labels, grad_loss: float = 1.0) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if np.ndim(grad_loss) != 0:
        raise ShapeError("softmax_cross_entropy_backward: upstream gradient must be a scalar")
    p = np.exp(log_softmax(logits))
    p[np.arange(len(labels)), labels] -= 1.0
    return p * (grad_loss / len(labels))
