"""MLP encoders/decoders and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("none", "softmax", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    output_activation: str = "none"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"invalid layer dims {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def mirrored(self) -> "MlpSpec":
        return MlpSpec(tuple(reversed(self.layer_dims)), self.activation, "none")


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[Tensor]
    biases: list[Tensor]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def glorot_bound(d_in: int, d_out: int) -> float:
    return float(np.sqrt(6.0 / (d_in + d_out)))


def init_params(spec: MlpSpec, seed) -> MlpParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = glorot_bound(d_in, d_out)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(d_out), requires_grad=True))
    return MlpParams(spec, weights, biases)


def mlp_forward(params: MlpParams, x) -> Tensor:
    x = T.as_tensor(x)
    spec = params.spec
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise DimensionError(f"MLP expects input of width {spec.in_dim}, got shape {x.shape}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = T.matmul(h, w) + b
        if i < last:
            h = T.relu(h)
    if spec.output_activation == "softmax":
        h = T.softmax(h, axis=-1)
    elif spec.output_activation == "sigmoid":
        h = T.sigmoid(h)
    return h


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update.

    Parameter tensors are rebound to fresh arrays (``p.data = ...``); a
    ``None`` gradient counts as zero.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("Adam moment buffers do not match the parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
