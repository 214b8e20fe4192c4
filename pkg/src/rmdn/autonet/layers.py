"""Layer zoo for the fixed sequential network.

Activations are float64 arrays with the batch on axis 0. Image activations
use a channels-last layout ``(B, H, W, C)``; the model converts its NCHW
input once at entry. Every layer caches what its backward pass needs during
``forward`` and returns the gradient with respect to its input from
``backward``. Parameter gradients accumulate into ``Tensor.grad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import rls
from ..errors import ShapeError, StateError
from .tensor import Tensor


@dataclass
class Context:
    """Per-batch side information threaded through the forward pass."""

    design: np.ndarray | None = None
    train_mode: bool = False


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._cache = None

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
        """Allocate parameters for ``in_shape`` and return the output shape."""
        return self.output_shape(in_shape)

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Valid-mode, stride-1 convolution. Weight layout is (k, k, C_in, C_out)."""

    kind = "conv2d"

    def __init__(self, out_channels: int, kernel: int):
        super().__init__()
        self.out_channels = out_channels
        self.kernel = kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (H, W, C) input, got {in_shape}")
        h, w, _ = in_shape
        k = self.kernel
        if h < k or w < k:
            raise ShapeError(f"conv2d kernel {k} larger than input {in_shape}")
        return (h - k + 1, w - k + 1, self.out_channels)

    def build(self, in_shape, rng):
        out = self.output_shape(in_shape)
        cin = in_shape[2]
        fan_in = cin * self.kernel * self.kernel
        self.params = {
            "weight": Tensor(_fan_in_uniform(rng, (self.kernel, self.kernel, cin, self.out_channels), fan_in)),
            "bias": Tensor(_fan_in_uniform(rng, (self.out_channels,), fan_in)),
        }
        return out

    def forward(self, x, ctx):
        b, h, w, c = x.shape
        k = self.kernel
        ho, wo = h - k + 1, w - k + 1
        # (B, Ho, Wo, C, k, k) view -> rows ordered (ki, kj, c) to match the weight
        cols = sliding_window_view(x, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        cols = cols.reshape(b * ho * wo, k * k * c)
        wmat = self.params["weight"].data.reshape(-1, self.out_channels)
        out = cols @ wmat + self.params["bias"].data
        self._cache = (cols, x.shape)
        return out.reshape(b, ho, wo, self.out_channels)

    def backward(self, dout):
        cols, xshape = self._need_cache()
        b, h, w, c = xshape
        k = self.kernel
        ho, wo = h - k + 1, w - k + 1
        dm = dout.reshape(-1, self.out_channels)
        weight = self.params["weight"]
        weight.accumulate((cols.T @ dm).reshape(weight.shape))
        self.params["bias"].accumulate(dm.sum(axis=0))
        dcols = (dm @ weight.data.reshape(-1, self.out_channels).T).reshape(b, ho, wo, k, k, c)
        dx = np.zeros(xshape)
        for i in range(k):
            for j in range(k):
                dx[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._need_cache()


class MaxPool2d(Layer):
    """Max pooling over (H, W). Ties route the gradient to the first maximum."""

    kind = "maxpool"

    def __init__(self, kernel: int = 2, stride: int | None = None):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ShapeError(f"maxpool kernel {k} larger than input {in_shape}")
        return ((h - k) // s + 1, (w - k) // s + 1, c)

    def forward(self, x, ctx):
        k, s = self.kernel, self.stride
        b, h, w, c = x.shape
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
        win = win.reshape(b, ho, wo, c, k * k)
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        idx, xshape = self._need_cache()
        k, s = self.kernel, self.stride
        ho, wo = dout.shape[1], dout.shape[2]
        dx = np.zeros(xshape)
        for off in range(k * k):
            i, j = divmod(off, k)
            dx[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s, :] += dout * (idx == off)
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class Linear(Layer):
    kind = "linear"

    def __init__(self, out_dim: int):
        super().__init__()
        self.out_dim = out_dim

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"linear expects flat input, got {in_shape}")
        return (self.out_dim,)

    def build(self, in_shape, rng):
        out = self.output_shape(in_shape)
        fan_in = in_shape[0]
        self.params = {
            "weight": Tensor(_fan_in_uniform(rng, (fan_in, self.out_dim), fan_in)),
            "bias": Tensor(_fan_in_uniform(rng, (self.out_dim,), fan_in)),
        }
        return out

    def forward(self, x, ctx):
        self._cache = x
        return x @ self.params["weight"].data + self.params["bias"].data

    def backward(self, dout):
        x = self._need_cache()
        self.params["weight"].accumulate(x.T @ dout)
        self.params["bias"].accumulate(dout.sum(axis=0))
        return dout @ self.params["weight"].data.T


class RMDN(Layer):
    """Recursive residualization of activations against confounders.

    In training mode the batch first updates the regression state, then the
    batch is residualized with the updated coefficients. In evaluation mode
    the state is frozen. The coefficients are treated as constants by the
    backward pass, so the gradient passes through unchanged.
    """

    kind = "rmdn"

    def __init__(self, epsilon: float = 1.0, lam: float = 0.0):
        super().__init__()
        self.epsilon = epsilon
        self.lam = lam
        self.state: rls.RmdnState | None = None
        self.h: int | None = None

    def build(self, in_shape, rng):
        self.h = int(np.prod(in_shape))
        return in_shape

    def forward(self, x, ctx):
        if ctx.design is None:
            raise ShapeError("rmdn layer requires a design matrix")
        design = ctx.design
        b = x.shape[0]
        z = x.reshape(b, -1)
        if self.state is None:
            self.state = rls.init_state(design.shape[1], z.shape[1], self.epsilon, self.lam)
        if ctx.train_mode:
            self.state = rls.update_batch(self.state, design, z)
        r = rls.residualize(self.state, design[:, : self.state.k], z)
        self._cache = True
        return r.reshape(x.shape)

    def backward(self, dout):
        self._need_cache()
        return dout


class SoftmaxCrossEntropy(Layer):
    """Mean softmax cross-entropy; ``forward`` takes logits and integer labels."""

    kind = "softmax_xent"

    def forward(self, logits, labels):
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsum
        n = logits.shape[0]
        loss = -logp[np.arange(n), labels].mean()
        self._cache = (np.exp(logp), labels)
        return float(loss)

    def backward(self, dout: float = 1.0):
        probs, labels = self._need_cache()
        n = probs.shape[0]
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return grad * (dout / n)
