"""Dense numerical kernel: models with analytic backprop, losses, clipping, Adam.

Parameters travel as flat float64 numpy arrays. ``ModelSpec`` knows how a flat
vector maps onto weight matrices and bias vectors; ``ParamVector`` bundles the
two when the block layout has to travel with the data (snapshots, reports).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised on dimension mismatches between parameters, data and models."""


class NumericError(ArithmeticError):
    """Raised when a value that must be finite is not."""


class ParameterError(ValueError):
    """Raised on invalid scalar hyperparameters (non-positive norms, rates...)."""


SOFTMAX_REGRESSION = "softmax-regression"
MLP_1HIDDEN = "mlp-1hidden"


@dataclass(frozen=True)
class ParamVector:
    data: np.ndarray
    shapes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        shapes = tuple((int(r), int(c)) for r, c in self.shapes)
        if sum(r * c for r, c in shapes) != data.size:
            raise ShapeError(f"block sizes {shapes} do not cover {data.size} entries")
        if not np.all(np.isfinite(data)):
            raise NumericError("ParamVector entries must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shapes", shapes)

    def blocks(self) -> list[np.ndarray]:
        out, start = [], 0
        for r, c in self.shapes:
            out.append(self.data[start:start + r * c].reshape(r, c))
            start += r * c
        return out

    def __len__(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class ModelSpec:
    kind: str = SOFTMAX_REGRESSION
    input_dim: int = 8
    num_classes: int = 4
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in (SOFTMAX_REGRESSION, MLP_1HIDDEN):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ParameterError("input_dim must be >= 1 and num_classes >= 2")
        if self.kind == MLP_1HIDDEN:
            if self.hidden_dim < 1:
                raise ParameterError("mlp-1hidden needs hidden_dim >= 1")
            if self.activation not in ("tanh", "relu"):
                raise ParameterError(f"unknown activation {self.activation!r}")
        elif self.hidden_dim != 0:
            raise ParameterError("softmax-regression takes hidden_dim = 0")

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        m, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind == SOFTMAX_REGRESSION:
            return ((c, m),)
        # W1, b1, W2, b2
        return ((h, m), (h, 1), (c, h), (c, 1))

    @property
    def num_params(self) -> int:
        return sum(r * c for r, c in self.shapes)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.num_params)

    def init_params(self, rng: np.random.Generator, scale: float | None = None) -> np.ndarray:
        """Random initialization; Glorot-style uniform scale unless ``scale`` is given."""
        parts = []
        for i, (r, c) in enumerate(self.shapes):
            if self.kind == MLP_1HIDDEN and i % 2 == 1:
                parts.append(np.zeros(r))
                continue
            s = np.sqrt(6.0 / (r + c)) if scale is None else scale
            parts.append(rng.uniform(-s, s, size=r * c))
        return np.concatenate(parts)

    def pack(self, data: np.ndarray) -> ParamVector:
        return ParamVector(data, self.shapes)

    def unflatten(self, params: np.ndarray) -> list[np.ndarray]:
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1 or params.size != self.num_params:
            raise ShapeError(f"expected {self.num_params} parameters, got shape {params.shape}")
        out, start = [], 0
        for i, (r, c) in enumerate(self.shapes):
            block = params[start:start + r * c].reshape(r, c)
            # only the MLP bias blocks (b1, b2) become vectors; weight matrices may have one column
            out.append(block[:, 0] if self.kind == MLP_1HIDDEN and i % 2 == 1 else block)
            start += r * c
        return out


@dataclass(frozen=True)
class Batch:
    """Inputs (n x input_dim) with one-hot labels (n x num_classes)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not np.all((y == 0.0) | (y == 1.0)) or not np.all(y.sum(axis=1) == 1.0):
            raise ShapeError("labels must be one-hot rows")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_indices(cls, inputs, classes, num_classes: int) -> "Batch":
        classes = np.asarray(classes, dtype=np.int64)
        return cls(inputs, np.eye(num_classes)[classes])

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])

    def batches(self, size: int) -> list["Batch"]:
        if size < 1:
            raise ParameterError("batch size must be >= 1")
        return [self.subset(slice(i, i + size)) for i in range(0, len(self), size)]


def _check(spec: ModelSpec, params: np.ndarray, batch: Batch) -> list[np.ndarray]:
    blocks = spec.unflatten(params)
    if not np.all(np.isfinite(params)):
        raise NumericError("non-finite parameters")
    if batch.inputs.shape[1] != spec.input_dim or batch.labels.shape[1] != spec.num_classes:
        raise ShapeError(
            f"batch dims {batch.inputs.shape[1]}/{batch.labels.shape[1]} do not match "
            f"model {spec.input_dim}/{spec.num_classes}"
        )
    return blocks


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _act(spec: ModelSpec, a: np.ndarray) -> np.ndarray:
    return np.tanh(a) if spec.activation == "tanh" else np.maximum(a, 0.0)


def _act_grad(spec: ModelSpec, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    return 1.0 - h * h if spec.activation == "tanh" else (a > 0).astype(np.float64)


def logits(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    blocks = spec.unflatten(params)
    x = np.atleast_2d(x)
    if spec.kind == SOFTMAX_REGRESSION:
        return x @ blocks[0].T
    w1, b1, w2, b2 = blocks
    return _act(spec, x @ w1.T + b1) @ w2.T + b2


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    return logits(spec, params, x).argmax(axis=1)


def forward_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy of ``batch`` under the model."""
    _check(spec, params, batch)
    z = logits(spec, params, batch.inputs)
    loss = float(-(log_softmax(z) * batch.labels).sum(axis=1).mean())
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    return loss


def backward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Analytic gradient of :func:`forward_loss` with respect to the flat parameters."""
    blocks = _check(spec, params, batch)
    x, y = batch.inputs, batch.labels
    n = x.shape[0]
    if spec.kind == SOFTMAX_REGRESSION:
        r = (softmax(x @ blocks[0].T) - y) / n
        return (r.T @ x).reshape(-1)
    w1, b1, w2, b2 = blocks
    a = x @ w1.T + b1
    h = _act(spec, a)
    r = (softmax(h @ w2.T + b2) - y) / n
    g_w2 = r.T @ h
    g_b2 = r.sum(axis=0)
    dh = (r @ w2) * _act_grad(spec, a, h)
    g_w1 = dh.T @ x
    g_b1 = dh.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def per_sample_grads(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of each sample's own cross-entropy, one row per sample: (N, num_params)."""
    blocks = spec.unflatten(params)
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    n = x.shape[0]
    if spec.kind == SOFTMAX_REGRESSION:
        r = softmax(x @ blocks[0].T) - y
        return np.einsum("nc,nm->ncm", r, x).reshape(n, -1)
    w1, b1, w2, b2 = blocks
    a = x @ w1.T + b1
    h = _act(spec, a)
    r = softmax(h @ w2.T + b2) - y
    dh = (r @ w2) * _act_grad(spec, a, h)
    return np.concatenate([np.einsum("nh,nm->nhm", dh, x).reshape(n, -1), dh,
                           np.einsum("nc,nh->nch", r, h).reshape(n, -1), r], axis=1)


def batched_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Loss for many parameter vectors at once: ``params`` is (N, num_params), returns (N,)."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if params.shape[1] != spec.num_params:
        raise ShapeError(f"expected rows of {spec.num_params} parameters")
    x, y = batch.inputs, batch.labels
    m, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    N, S = params.shape[0], x.shape[0]
    # matmul layouts (rows x samples) keep the heavy products in BLAS
    if spec.kind == SOFTMAX_REGRESSION:
        z = (params.reshape(N * c, m) @ x.T).reshape(N, c, S)
    else:
        o = 0
        w1 = params[:, o:o + h * m].reshape(N * h, m); o += h * m
        b1 = params[:, o:o + h]; o += h
        w2 = params[:, o:o + c * h].reshape(N, c, h); o += c * h
        b2 = params[:, o:o + c]
        hid = _act(spec, (w1 @ x.T).reshape(N, h, S) + b1[:, :, None])
        z = np.matmul(w2, hid) + b2[:, :, None]
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    true = np.einsum("ncs,sc->ns", z, y)
    return (lse - true).mean(axis=1)


def stable_norm(x: np.ndarray) -> float:
    """L2 norm that neither underflows for subnormal entries nor overflows for huge ones."""
    x = np.asarray(x, dtype=np.float64)
    s = float(np.max(np.abs(x))) if x.size else 0.0
    if s == 0.0 or not np.isfinite(s):
        return s
    if 1e-150 < s < 1e150:
        # squares cannot under/overflow here; agree bit-for-bit with the plain norm
        return float(np.linalg.norm(x))
    return s * float(np.linalg.norm(x / s))


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Radially rescale ``g`` so that its L2 norm does not exceed ``clip_norm``."""
    if not clip_norm > 0:
        raise ParameterError(f"clip_norm must be positive, got {clip_norm}")
    g = np.asarray(g, dtype=np.float64)
    norm = stable_norm(g)
    if norm <= clip_norm:
        return g
    w = g / np.max(np.abs(g))
    out = clip_norm * (w / np.linalg.norm(w))
    # rounding can leave the norm one ulp above the threshold
    while stable_norm(out) > clip_norm:
        out = np.nextafter(out, 0.0)
    return out


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, **kw) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, **kw)


def adam_step(state: AdamState, g: np.ndarray, lr: float) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update. Returns the new state and the additive step."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ShapeError(f"gradient shape {g.shape} != state shape {state.m.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    step = -lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return replace(state, m=m, v=v, step_count=t), step


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise ParameterError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.size):
        e.flat[i] = h
        hi, lo = f(x + e), f(x - e)
        e.flat[i] = 0.0
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value along coordinate {i}")
        out.flat[i] = (hi - lo) / (2.0 * h)
    return out
