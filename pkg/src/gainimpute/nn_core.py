"""Small dense-network engine: forward/backward, Xavier init, Adam and a
finite-difference gradient oracle.

Everything is float64 and value-semantic: ``adam_step`` and ``sgd_step``
return new networks instead of mutating their inputs.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")

# sigmoid(30) = 1 - 9.4e-14, so clipping here keeps outputs strictly inside (0, 1)
_SIGMOID_CLIP = 30.0


class ShapeError(ValueError):
    pass


def make_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Named sub-stream of a 64-bit seed. PCG64 under a SeedSequence is
    reproducible across platforms; names are hashed with crc32 so the same
    (seed, names) always yields the same stream."""
    key = tuple(n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**64 - 1), spawn_key=key)))


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"weights {self.weights.shape} / bias {self.bias.shape} mismatch")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class MLP:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer output {a.out_dim} does not feed input {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; the same ordering is used for
        gradients and Adam moments."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MLP":
        if len(params) != 2 * len(self.layers):
            raise ShapeError("parameter count mismatch")
        layers = []
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"layer {i}: parameter shape mismatch")
            layers.append(DenseLayer(w, b, layer.activation))
        return MLP(tuple(layers))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x).output


@dataclass
class Trace:
    """Per-layer record produced by ``forward``: the input fed to each layer
    and its post-activation output."""

    inputs: list[np.ndarray]
    outputs: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(a: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the post-activation value
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


def forward(mlp: MLP, batch: np.ndarray) -> Trace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input dim {mlp.in_dim}")
    inputs, outputs = [], []
    for layer in mlp.layers:
        inputs.append(x)
        x = _activate(x @ layer.weights + layer.bias, layer.activation)
        outputs.append(x)
    return Trace(inputs, outputs)


def backward(mlp: MLP, trace: Trace, output_gradient: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate dL/d(output) through ``mlp``.

    Returns (parameter gradients in ``mlp.parameters()`` order, dL/d(input)).
    """
    if len(trace.inputs) != len(mlp.layers):
        raise ShapeError("activation record does not belong to this network")
    for layer, inp, out in zip(mlp.layers, trace.inputs, trace.outputs):
        if inp.shape[1] != layer.in_dim or out.shape[1] != layer.out_dim:
            raise ShapeError("stale activation record")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ShapeError(f"output gradient {g.shape} vs output {trace.output.shape}")

    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))  # type: ignore[list-item]
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        delta = g * _activation_grad(trace.outputs[i], layer.activation)
        grads[2 * i] = trace.inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        g = delta @ layer.weights.T
    return grads, g


def xavier_init(in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "relu") -> DenseLayer:
    if in_dim < 1 or out_dim < 1:
        raise ValueError("layer dimensions must be >= 1")
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


def build_mlp(dims: Sequence[int], rng: np.random.Generator, hidden: str = "relu", final: str = "sigmoid") -> MLP:
    """Fully connected net with ``hidden`` activations and a ``final`` output
    activation, e.g. ``build_mlp([4, 8, 2], rng)``."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        act = final if i == len(dims) - 2 else hidden
        layers.append(xavier_init(a, b, rng, act))
    return MLP(tuple(layers))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, mlp: MLP) -> "AdamState":
        return cls([np.zeros_like(p) for p in mlp.parameters()], [np.zeros_like(p) for p in mlp.parameters()])


def _check_grads(mlp: MLP, grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    params = mlp.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradient shapes do not match parameters")
    return params


def adam_step(mlp: MLP, grads: Sequence[np.ndarray], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[MLP, AdamState]:
    params = _check_grads(mlp, grads)
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0) or lr <= 0:
        raise ValueError("invalid Adam hyperparameters")
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ShapeError("Adam state does not match parameters")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return mlp.with_parameters(new_p), AdamState(new_m, new_v, t)


def sgd_step(mlp: MLP, grads: Sequence[np.ndarray], lr: float) -> MLP:
    params = _check_grads(mlp, grads)
    return mlp.with_parameters([p - lr * g for p, g in zip(params, grads)])


def finite_diff_grad(loss_fn: Callable[[MLP], float], mlp: MLP, epsilon: float = 1e-5) -> list[np.ndarray]:
    """Central differences (loss(θ+ε) - loss(θ-ε)) / 2ε for every parameter."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = [p.copy() for p in mlp.parameters()]
    out = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + epsilon
            up = loss_fn(mlp.with_parameters(params))
            p[idx] = orig - epsilon
            down = loss_fn(mlp.with_parameters(params))
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * epsilon)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    passed: bool
    detail: list[str] = field(default_factory=list)


def compare_gradients(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray],
                      tol: float = 1e-4, min_abs: float = 1e-8) -> GradCheckResult:
    a, n = flatten(analytic), flatten(numeric)
    sel = np.maximum(np.abs(a), np.abs(n)) > min_abs
    err = relative_error(a[sel], n[sel]) if sel.any() else np.zeros(0)
    worst = float(err.max()) if err.size else 0.0
    return GradCheckResult(worst, int(sel.sum()), worst < tol)
