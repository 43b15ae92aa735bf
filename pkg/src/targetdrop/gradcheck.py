"""Central finite-difference checks for every backward pass in the package."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import attention_map, init_attention
from .mask import DropConfig, apply_masks, build_mask, targetdrop_backward
from .model import ModelConfig, ReLU, TinyCNN


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place (restored after)."""
    full = indices is None
    if full:
        indices = list(np.ndindex(x.shape))
    out = np.zeros(len(indices))
    for i, idx in enumerate(indices):
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape) if full else out


def _away_from_zero(rng, shape, eps):
    # keep ReLU inputs off the kink so the difference quotient stays one-sided-free
    x = rng.uniform(-1, 1, shape)
    bad = np.abs(x) < 10 * eps
    while bad.any():
        x[bad] = rng.uniform(-1, 1, bad.sum())
        bad = np.abs(x) < 10 * eps
    return x


def _fault(grad, name, inject):
    return grad * 1.1 + 0.01 if inject == name else grad


def _dims(rng, lo=1, hi=5, n=1):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, n))


def check_ops(trials: int = 50, eps: float = 1e-3, tol: float = 1e-4, seed: int = 0,
              inject: str = "") -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    errs: dict[str, list[float]] = {}

    def record(name, a, n):
        errs.setdefault(name, []).append(rel_error(_fault(a, name, inject), n))

    for _ in range(trials):
        h, w, c = _dims(rng, 1, 5, 3)
        u = rng.uniform(-1, 1, (h, w, c))
        g = rng.uniform(-1, 1, c)
        record("global_avg_pool", T.global_avg_pool_backward(g, u.shape),
               numeric_grad(lambda: float(g @ T.global_avg_pool(u)), u, eps))

        m, n = _dims(rng, 1, 6, 2)
        W = rng.uniform(-1, 1, (m, n))
        x = rng.uniform(-1, 1, n)
        g = rng.uniform(-1, 1, m)
        gw, gx = T.matvec_backward(g, W, x)
        f = lambda: float(g @ T.matvec(W, x))
        record("matvec", np.concatenate([gw.ravel(), gx]),
               np.concatenate([numeric_grad(f, W, eps).ravel(), numeric_grad(f, x, eps)]))

        shape = _dims(rng, 1, 6, 2)
        x = _away_from_zero(rng, shape, eps)
        g = rng.uniform(-1, 1, shape)
        record("relu", T.relu_backward(g, x), numeric_grad(lambda: float((g * T.relu(x)).sum()), x, eps))

        x = rng.uniform(-1, 1, shape)
        record("sigmoid", T.sigmoid_backward(g, T.sigmoid(x)),
               numeric_grad(lambda: float((g * T.sigmoid(x)).sum()), x, eps))

        a = rng.uniform(-1, 1, shape)
        b = rng.uniform(-1, 1, shape)
        ga, gb = T.pointwise_mul_backward(g, a, b)
        f = lambda: float((g * T.pointwise_mul(a, b)).sum())
        record("pointwise_mul", np.concatenate([ga.ravel(), gb.ravel()]),
               np.concatenate([numeric_grad(f, a, eps).ravel(), numeric_grad(f, b, eps).ravel()]))

        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        nb = int(rng.integers(1, 3))
        hh, ww = _dims(rng, k, k + 4, 2)
        cin, cout = _dims(rng, 1, 3, 2)
        x = rng.uniform(-1, 1, (nb, hh, ww, cin))
        W = rng.uniform(-1, 1, (k, k, cin, cout))
        bias = rng.uniform(-1, 1, cout)
        y = T.conv2d(x, W, bias, stride, pad)
        g = rng.uniform(-1, 1, y.shape)
        gx, gw, gbias = T.conv2d_backward(g, x, W, stride, pad)
        f = lambda: float((g * T.conv2d(x, W, bias, stride, pad)).sum())
        record("conv2d", np.concatenate([gx.ravel(), gw.ravel(), gbias]),
               np.concatenate([numeric_grad(f, x, eps).ravel(), numeric_grad(f, W, eps).ravel(),
                               numeric_grad(f, bias, eps)]))

        nb, din, dout = _dims(rng, 1, 5, 3)
        x = rng.uniform(-1, 1, (nb, din))
        W = rng.uniform(-1, 1, (din, dout))
        bias = rng.uniform(-1, 1, dout)
        g = rng.uniform(-1, 1, (nb, dout))
        gx, gw, gbias = T.dense_backward(g, x, W)
        f = lambda: float((g * T.dense(x, W, bias)).sum())
        record("dense", np.concatenate([gx.ravel(), gw.ravel(), gbias]),
               np.concatenate([numeric_grad(f, x, eps).ravel(), numeric_grad(f, W, eps).ravel(),
                               numeric_grad(f, bias, eps)]))

        nb, classes = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        logits = rng.uniform(-1, 1, (nb, classes))
        labels = rng.integers(0, classes, nb)
        record("softmax_cross_entropy", T.softmax_cross_entropy_backward(logits, labels),
               numeric_grad(lambda: T.softmax_cross_entropy(logits, labels), logits, eps))

        h, w = _dims(rng, 1, 6, 2)
        c = int(rng.integers(1, 9))
        u = rng.uniform(-1, 1, (h, w, c))
        gate = init_attention(c, 1, int(rng.integers(1 << 30)))
        cfg = DropConfig(float(rng.uniform(0, 1)), int(rng.choice([1, 3, 5])))
        mk = build_mask(u, attention_map(u, gate), cfg)
        g = rng.uniform(-1, 1, u.shape)
        record("targetdrop_backward", targetdrop_backward(g, mk),
               numeric_grad(lambda: float((g * apply_masks(u, mk)).sum()), u, eps))

    return [CheckResult(name, len(v), max(v), tol) for name, v in errs.items()]


def check_network(trials: int = 50, eps: float = 1e-3, tol: float = 1e-3, seed: int = 0,
                  coords: int = 12, inject: str = "") -> CheckResult:
    """Whole TinyCNN with TargetDrop after groups 1 and 2, masks frozen, 4-sample batch.

    Each trial compares a random subset of parameter and input coordinates;
    coordinates whose perturbation flips any ReLU are redrawn.
    """
    rng = np.random.default_rng(seed)
    errs = []
    for trial in range(trials):
        model = TinyCNN(ModelConfig(widths=(4, 8, 8), drop="targetdrop", r=2, gamma=0.5, k=3,
                                    seed=int(rng.integers(1 << 30))))
        for name, arr in model.named_params().items():
            if name.endswith(".b"):
                # zero biases put all-zero windows exactly on the ReLU kink
                arr[...] = rng.uniform(-0.1, 0.1, arr.shape)
        x = rng.uniform(-1, 1, (4, 6, 6, 3))
        y = rng.integers(0, 10, 4)
        model.set_phase("train")
        logits = model.forward(x)
        gx = model.backward(T.softmax_cross_entropy_backward(logits, y))
        model.freeze_masks()
        relus = [l for l in model.layers if isinstance(l, ReLU)]

        def loss_and_pattern():
            value = T.softmax_cross_entropy(model.forward(x), y)
            return value, np.concatenate([(l.x > 0).ravel() for l in relus])

        _, base = loss_and_pattern()
        analytic, numeric = [], []
        params, grads = model.named_params(), model.named_grads()
        targets = [(params[k], grads[k].copy()) for k in params] + [(x, gx)]
        while len(analytic) < coords:
            arr, grad = targets[int(rng.integers(len(targets)))]
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + eps
            fp, pat_p = loss_and_pattern()
            arr[idx] = old - eps
            fm, pat_m = loss_and_pattern()
            arr[idx] = old
            if not (np.array_equal(pat_p, base) and np.array_equal(pat_m, base)):
                continue  # the step crosses a ReLU kink; the quotient is meaningless there
            analytic.append(grad[idx])
            numeric.append((fp - fm) / (2 * eps))
        errs.append(rel_error(_fault(np.array(analytic), "network", inject), np.array(numeric)))
    return CheckResult("network", trials, max(errs), tol)


def run_all(trials=50, eps=1e-3, tol=1e-4, net_eps=1e-3, net_tol=1e-3, seed=0, inject="") -> list[CheckResult]:
    return check_ops(trials, eps, tol, seed, inject) + [check_network(trials, net_eps, net_tol, seed, inject=inject)]
