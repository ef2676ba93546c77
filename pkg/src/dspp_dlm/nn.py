"""Minimal feedforward network with exact gradients.

Small tanh MLPs play three roles in this package: the prior drift of the
latent intensity SDE, the deterministic variational control, and an
optional learned diffusion coefficient. They share one representation: a
flat float64 parameter vector with a frozen layout, so checkpoints and
optimizer state align index-wise.

Layout (per layer, in order): weight matrix of shape (fan_out, fan_in)
flattened row-major (C order), then the bias vector of length fan_out.
Hidden layers use tanh; the output layer is linear, so the output is
bounded by the L1 norm of the last layer. All operations are pure
functions of (params, input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeds


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of a fully connected tanh network with linear output."""

    input_dim: int = 2
    hidden_layers: int = 20
    hidden_width: int = 10
    output_dim: int = 1

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.output_dim != 1:
            raise ValueError("only scalar outputs are supported (output_dim == 1)")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_shapes())

    def param_offsets(self) -> list[tuple[int, int, int]]:
        """Per layer: (weight_start, bias_start, end) into the flat vector."""
        out = []
        pos = 0
        for fi, fo in self.layer_shapes():
            w0 = pos
            b0 = pos + fi * fo
            pos = b0 + fo
            out.append((w0, b0, pos))
        return out


@dataclass(frozen=True)
class MLPModel:
    """An architecture plus its flat parameter vector."""

    spec: MLPSpec
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.shape != (self.spec.n_params,):
            raise ValueError(
                f"params length {p.shape} does not match spec count ({self.spec.n_params},)"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("params must be finite")
        object.__setattr__(self, "params", p)

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(W, b) views for layer ``i``; W has shape (fan_out, fan_in)."""
        fi, fo = self.spec.layer_shapes()[i]
        w0, b0, end = self.spec.param_offsets()[i]
        return self.params[w0:b0].reshape(fo, fi), self.params[b0:end]

    def with_params(self, params: np.ndarray) -> "MLPModel":
        return MLPModel(self.spec, np.array(params, dtype=np.float64))


def init_params(spec: MLPSpec, seed: int) -> MLPModel:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    gen = seeds.rng(seed)
    params = np.zeros(spec.n_params)
    for (fi, fo), (w0, b0, _end) in zip(spec.layer_shapes(), spec.param_offsets()):
        bound = np.sqrt(6.0 / (fi + fo))
        params[w0:b0] = gen.uniform(-bound, bound, size=fi * fo)
    return MLPModel(spec, params)


def zero_model(spec: MLPSpec) -> MLPModel:
    return MLPModel(spec, np.zeros(spec.n_params))


def _check_input(model: MLPModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.spec.input_dim:
        raise ValueError(
            f"input dim {x.shape[-1]} does not match spec input_dim {model.spec.input_dim}"
        )
    return x


def _forward_batch(model: MLPModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass; returns (outputs (B,), activations per layer)."""
    acts = [x]
    a = x
    n_layers = model.spec.hidden_layers + 1
    for i in range(n_layers - 1):
        w, b = model.layer(i)
        a = np.tanh(a @ w.T + b)
        acts.append(a)
    w, b = model.layer(n_layers - 1)
    out = a @ w.T + b
    return out[:, 0], acts


def forward_batch(model: MLPModel, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of inputs, shape (B, input_dim) -> (B,)."""
    return _forward_batch(model, _check_input(model, x))[0]


def forward(model: MLPModel, x) -> float:
    """Evaluate the scalar network output at one input point."""
    x = _check_input(model, x)
    return float(forward_batch(model, x[None, :])[0])


def eval_with_grads(
    model: MLPModel,
    x: np.ndarray,
    need_params: bool = True,
    need_input: bool = True,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """One fused forward+backward pass on a batch.

    Returns (out (B,), dparams (B, n_params) or None, dinput (B, input_dim)
    or None). Reverse mode, exact to round-off.
    """
    x = _check_input(model, x)
    out, acts = _forward_batch(model, x)
    B = x.shape[0]
    spec = model.spec
    offsets = spec.param_offsets()
    shapes = spec.layer_shapes()
    gp = np.zeros((B, spec.n_params)) if need_params else None
    n_layers = spec.hidden_layers + 1

    # Output layer: d out / d W_L = a_{L-1}, d out / d b_L = 1.
    w_out, _ = model.layer(n_layers - 1)
    if need_params:
        w0, b0, end = offsets[-1]
        gp[:, w0:b0] = acts[-1]
        gp[:, b0:end] = 1.0
    delta = np.broadcast_to(w_out[0], (B, shapes[-1][0])) * (1.0 - acts[-1] ** 2)

    for i in range(n_layers - 2, -1, -1):
        w, _ = model.layer(i)
        if need_params:
            w0, b0, end = offsets[i]
            fi, fo = shapes[i]
            np.einsum("bo,bi->boi", delta, acts[i], out=gp[:, w0:b0].reshape(B, fo, fi))
            gp[:, b0:end] = delta
        if i > 0:
            delta = (delta @ w) * (1.0 - acts[i] ** 2)
        else:
            delta = delta @ w

    gx = delta if need_input else None
    return out, gp, gx


def grad_params_batch(model: MLPModel, x: np.ndarray) -> np.ndarray:
    return eval_with_grads(model, x, need_params=True, need_input=False)[1]


def grad_params(model: MLPModel, x) -> np.ndarray:
    """d output / d params at one input, laid out like ``model.params``."""
    x = _check_input(model, x)
    return grad_params_batch(model, x[None, :])[0]


def grad_input_batch(model: MLPModel, x: np.ndarray) -> np.ndarray:
    return eval_with_grads(model, x, need_params=False, need_input=True)[2]


def grad_input(model: MLPModel, x) -> np.ndarray:
    """d output / d input coordinates at one input point."""
    x = _check_input(model, x)
    return grad_input_batch(model, x[None, :])[0]


def output_bound(model: MLPModel) -> float:
    """Bound on |forward|: L1 norm of the output layer plus its bias."""
    w, b = model.layer(model.spec.hidden_layers)
    return float(np.abs(w).sum() + np.abs(b).sum())
