"""Sequential network assembled from a declarative layer list."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .. import rls
from ..errors import ParameterError, ShapeError, StateError
from . import layers as L
from .tensor import Tensor


class Placement(str, Enum):
    NONE = "none"
    ALL = "after_each_conv_and_prelogits"
    PRELOGITS = "prelogits_only"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)


_FACTORIES = {
    "conv2d": lambda a: L.Conv2d(a["out_ch"], a["kernel"]),
    "relu": lambda a: L.ReLU(),
    "maxpool": lambda a: L.MaxPool2d(a.get("kernel", 2), a.get("stride")),
    "flatten": lambda a: L.Flatten(),
    "linear": lambda a: L.Linear(a["out_dim"]),
    "rmdn": lambda a: L.RMDN(a["epsilon"], a["lam"]),
}


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int] = (1, 32, 32)  # (C, H, W)

    def __post_init__(self):
        kinds = [s.kind for s in self.layers]
        for i, kind in enumerate(kinds):
            if kind == "softmax_xent":
                if i != len(kinds) - 1:
                    raise ShapeError("softmax_xent must be the last layer")
            elif kind not in _FACTORIES:
                raise ParameterError(f"unknown layer kind {kind!r}")

    @property
    def n_rmdn(self) -> int:
        return sum(s.kind == "rmdn" for s in self.layers)


def build_synth_cnn(
    placement: Placement | str = Placement.ALL,
    epsilon: float = 1.0,
    lam: float = 1e-4,
    image_size: int = 32,
) -> ModelSpec:
    """Two conv blocks and two fully connected layers, with optional rmdn layers.

    ``conv16k5 -> relu -> [rmdn] -> pool -> conv32k5 -> relu -> [rmdn] -> pool
    -> flatten -> fc84 -> relu -> [rmdn] -> fc2 -> softmax_xent``
    """
    placement = Placement(placement)
    conv_r = placement is Placement.ALL
    pre_r = placement in (Placement.ALL, Placement.PRELOGITS)
    rm = LayerSpec("rmdn", {"epsilon": epsilon, "lam": lam})
    seq: list[LayerSpec] = [LayerSpec("conv2d", {"out_ch": 16, "kernel": 5}), LayerSpec("relu")]
    if conv_r:
        seq.append(rm)
    seq += [LayerSpec("maxpool", {"kernel": 2, "stride": 2}), LayerSpec("conv2d", {"out_ch": 32, "kernel": 5}), LayerSpec("relu")]
    if conv_r:
        seq.append(rm)
    seq += [LayerSpec("maxpool", {"kernel": 2, "stride": 2}), LayerSpec("flatten"), LayerSpec("linear", {"out_dim": 84}), LayerSpec("relu")]
    if pre_r:
        seq.append(rm)
    seq += [LayerSpec("linear", {"out_dim": 2}), LayerSpec("softmax_xent")]
    return ModelSpec(tuple(seq), (1, image_size, image_size))


class Network:
    """Executable model: a layer tape run forward, then in reverse."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        c, h, w = spec.input_shape
        shape: tuple[int, ...] = (h, w, c)
        self.layers: list[L.Layer] = []
        self.loss_layer: L.SoftmaxCrossEntropy | None = None
        for s in spec.layers:
            if s.kind == "softmax_xent":
                self.loss_layer = L.SoftmaxCrossEntropy()
                continue
            layer = _FACTORIES[s.kind](s.args)
            shape = layer.build(shape, rng)
            self.layers.append(layer)
        self.output_shape = shape
        self.prelogits: np.ndarray | None = None
        self._backward_ready = False

    # -- parameters --------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, t in layer.params.items():
                out.append((f"layer{i}.{layer.kind}.{name}", t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def rmdn_layers(self) -> list[tuple[int, L.RMDN]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, L.RMDN)]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    # -- execution ---------------------------------------------------------
    def forward(self, batch: np.ndarray, design: np.ndarray, train_mode: bool = False):
        """Run the network; returns ``(logits, loss)``.

        ``design`` rows are ``[confounders..., label, 1]``. Labels for the
        loss come from the label column; rmdn layers read only the
        confounder block outside training.
        """
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"expected batch of shape (B, {self.spec.input_shape}), got {x.shape}")
        design = np.asarray(design, dtype=np.float64)
        if design.ndim != 2 or design.shape[0] != x.shape[0]:
            raise ShapeError(f"design must have {x.shape[0]} rows, got {design.shape}")
        ctx = L.Context(design=design, train_mode=train_mode)
        x = x.transpose(0, 2, 3, 1)
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            if i == n - 1 and isinstance(layer, L.Linear):
                self.prelogits = x
            x = layer.forward(x, ctx)
        logits = x
        loss = float("nan")
        if self.loss_layer is not None:
            labels = design[:, -2].astype(np.int64)
            loss = self.loss_layer.forward(logits, labels)
        self._backward_ready = train_mode
        return logits, loss

    def backward(self) -> None:
        """Accumulate parameter gradients of the last training-mode loss."""
        if not self._backward_ready or self.loss_layer is None:
            raise StateError("backward requires a preceding training-mode forward")
        g = self.loss_layer.backward(1.0)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._backward_ready = False

    def predict(self, batch: np.ndarray, design: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(batch, design, train_mode=False)
        return logits.argmax(axis=1)

    # -- (de)serialisation -------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data.copy() for name, t in self.named_parameters()}
        for i, layer in self.rmdn_layers():
            st = layer.state
            if st is None:
                continue
            pre = f"layer{i}.rmdn"
            out[f"{pre}.beta"] = st.beta.copy()
            out[f"{pre}.p_inv"] = st.p_inv.copy()
            out[f"{pre}.epsilon"] = np.array([st.epsilon])
            out[f"{pre}.lambda"] = np.array([st.lam])
            out[f"{pre}.n_seen"] = np.array([st.n_seen], dtype=np.int64)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != t.shape:
                raise ShapeError(f"{name}: expected {t.shape}, got {state[name].shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for i, layer in self.rmdn_layers():
            pre = f"layer{i}.rmdn"
            if f"{pre}.beta" not in state:
                layer.state = None
                continue
            layer.state = rls.RmdnState(
                beta=np.array(state[f"{pre}.beta"], dtype=np.float64),
                p_inv=np.array(state[f"{pre}.p_inv"], dtype=np.float64),
                epsilon=float(state[f"{pre}.epsilon"][0]),
                lam=float(state[f"{pre}.lambda"][0]),
                n_seen=int(state[f"{pre}.n_seen"][0]),
            )
