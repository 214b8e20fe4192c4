"""Central finite-difference checks shared by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from rmdn.autonet import Context, Conv2d, Flatten, Linear, MaxPool2d, ReLU, RMDN, SoftmaxCrossEntropy

STEP = 1e-5
TOL = 1e-4


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, ctx: Context | None = None) -> float:
    """Worst relative error over the input and every parameter for L = sum(out * w)."""
    ctx = ctx or Context()
    layer.build(x.shape[1:], rng)
    probe = rng.standard_normal(layer.forward(x, ctx).shape)

    def loss():
        return float((layer.forward(x, ctx) * probe).sum())

    loss()
    for t in layer.params.values():
        t.zero_grad()
    dx = layer.backward(probe)
    errs = [rel_err(dx, numeric_grad(loss, x))]
    for t in layer.params.values():
        errs.append(rel_err(t.grad, numeric_grad(loss, t.data)))
    return max(errs)


def check_softmax(rng: np.random.Generator) -> float:
    layer = SoftmaxCrossEntropy()
    logits = rng.standard_normal((5, 3))
    labels = rng.integers(0, 3, 5)
    layer.forward(logits, labels)
    analytic = layer.backward(1.0)
    return rel_err(analytic, numeric_grad(lambda: layer.forward(logits, labels), logits))


def layer_cases(seed: int) -> dict[str, float]:
    """Finite-difference errors of every layer type on small random shapes."""
    rng = np.random.default_rng(seed)
    out = {}
    out["conv2d"] = check_layer(Conv2d(int(rng.integers(1, 4)), 3), rng.standard_normal((2, 6, 6, 2)), rng)
    out["relu"] = check_layer(ReLU(), rng.standard_normal((3, 4, 4, 2)), rng)
    out["maxpool"] = check_layer(MaxPool2d(2, 2), rng.standard_normal((2, 6, 6, 3)), rng)
    out["flatten"] = check_layer(Flatten(), rng.standard_normal((2, 3, 3, 2)), rng)
    out["linear"] = check_layer(Linear(int(rng.integers(1, 6))), rng.standard_normal((4, 7)), rng)
    out["softmax_xent"] = check_softmax(rng)
    return out


def rmdn_identity_error(seed: int) -> float:
    """max |dL/dz - dL/dr| through a training-mode rmdn layer (should be exactly 0)."""
    rng = np.random.default_rng(seed)
    layer = RMDN(epsilon=1.0, lam=1e-4)
    x = rng.standard_normal((6, 3, 3, 2))
    layer.build(x.shape[1:], rng)
    design = np.column_stack([rng.uniform(1, 4, 6), rng.integers(0, 2, 6), np.ones(6)])
    layer.forward(x, Context(design=design, train_mode=True))
    dout = rng.standard_normal(x.shape)
    return float(np.max(np.abs(layer.backward(dout) - dout)))
