"""Fully connected networks with hand-written backpropagation.

Networks are small value objects (:class:`MlpParams`); every update returns
a new object.  Inputs may be a single vector ``(d,)`` or a batch ``(B, d)``;
gradients of a batch are summed over its rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ContractError, Rng

__all__ = [
    "DivergenceError",
    "MlpParams",
    "GradientSet",
    "init_mlp",
    "forward",
    "backward",
    "sgd_step",
    "soft_update",
    "clip_by_global_norm",
    "Adam",
    "params_to_dict",
    "params_from_dict",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = ("relu", "tanh", "linear")


class DivergenceError(ArithmeticError):
    """A loss or gradient became non-finite."""


@dataclass
class MlpParams:
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (layer_dims[l+1], layer_dims[l])
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        n = len(self.layer_dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n):
            raise ContractError("one weight, bias and activation per layer transition")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise ContractError(f"layer {l} parameter shapes do not match layer_dims")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r}")

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_dims), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], list(self.activations))

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "MlpParams":
        out = self.copy()
        i = 0
        for a in out.arrays():
            a[...] = theta[i:i + a.size].reshape(a.shape)
            i += a.size
        return out

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = field(default=None, repr=False)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def scale(self, c: float) -> "GradientSet":
        return GradientSet([c * w for w in self.weights], [c * b for b in self.biases],
                           None if self.input is None else c * self.input)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(layer_dims, rng: Rng, activations=None, final_bound: float | None = None) -> MlpParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for weights and biases.

    ``final_bound`` replaces the bound of the output layer (DDPG uses 3e-3
    so fresh networks start near zero output).  Default activations: relu
    on hidden layers, tanh on the output.
    """
    dims = [int(d) for d in layer_dims]
    if activations is None:
        activations = ["relu"] * (len(dims) - 2) + ["tanh"]
    weights, biases = [], []
    last = len(dims) - 2
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if l == last and final_bound is not None:
            bound = final_bound
        weights.append(rng.uniform((fan_out, fan_in), -bound, bound))
        biases.append(rng.uniform((fan_out,), -bound, bound))
    return MlpParams(dims, weights, biases, list(activations))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)  # subgradient 0 at the kink
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.layer_dims[0] or x.ndim > 2:
        raise ContractError(f"input shape {x.shape} does not match width {params.layer_dims[0]}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray):
    pre, post = [], [x]
    a = x
    for w, b, name in zip(params.weights, params.biases, params.activations):
        z = a @ w.T + b
        a = _act(name, z)
        pre.append(z)
        post.append(a)
    return pre, post


def forward(params: MlpParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return _forward_cache(params, x)[1][-1]


def backward(params: MlpParams, x, output_grad) -> GradientSet:
    """Reverse-mode gradient of ``<output_grad, forward(x)>``.

    The returned set also carries the gradient with respect to the input,
    which chains a critic's action-gradient into an actor.
    """
    x = _check_input(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    expected = x.shape[:-1] + (params.layer_dims[-1],)
    if g.shape != expected:
        raise ContractError(f"output_grad shape {g.shape} != {expected}")
    pre, post = _forward_cache(params, x)
    batched = x.ndim == 2
    gw: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for l in range(len(params.weights) - 1, -1, -1):
        dz = g * _act_grad(params.activations[l], pre[l], post[l + 1])
        if batched:
            gw[l] = dz.T @ post[l]
            gb[l] = dz.sum(axis=0)
        else:
            gw[l] = np.outer(dz, post[l])
            gb[l] = dz
        g = dz @ params.weights[l]
    return GradientSet(gw, gb, g)


def sgd_step(params: MlpParams, grads: GradientSet, lr: float) -> MlpParams:
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient")
    return MlpParams(list(params.layer_dims),
                     [w - lr * g for w, g in zip(params.weights, grads.weights)],
                     [b - lr * g for b, g in zip(params.biases, grads.biases)],
                     list(params.activations))


def clip_by_global_norm(grads: GradientSet, max_norm: float | None) -> GradientSet:
    if max_norm is None:
        return grads
    norm = grads.global_norm()
    if norm <= max_norm or norm == 0.0:
        return grads
    return grads.scale(max_norm / norm)


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Polyak average ``tau * online + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise ContractError("tau must lie in [0, 1]")
    if target.layer_dims != online.layer_dims:
        raise ContractError("target and online networks differ in shape")
    return MlpParams(list(target.layer_dims),
                     [tau * w + (1.0 - tau) * wt for w, wt in zip(online.weights, target.weights)],
                     [tau * b + (1.0 - tau) * bt for b, bt in zip(online.biases, target.biases)],
                     list(target.activations))


class Adam:
    """Adam state for one network; opt-in alternative to plain SGD."""

    def __init__(self, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: MlpParams, grads: GradientSet, lr: float) -> MlpParams:
        if not grads.is_finite():
            raise DivergenceError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = []
        for i, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            new.append(p - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        n = len(params.weights)
        return MlpParams(list(params.layer_dims), new[:n], new[n:], list(params.activations))


def params_to_dict(params: MlpParams) -> dict:
    return {
        "layer_dims": params.layer_dims,
        "activations": params.activations,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(d: dict) -> MlpParams:
    dims = [int(x) for x in d["layer_dims"]]
    weights = [np.asarray(w, dtype=np.float64).reshape(o, i)
               for w, i, o in zip(d["weights"], dims[:-1], dims[1:])]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return MlpParams(dims, weights, biases, list(d["activations"]))


def save_checkpoint(path, nets: dict[str, MlpParams], seed: int, step: int) -> None:
    payload = {"seed": seed, "step": step, "networks": {k: params_to_dict(v) for k, v in nets.items()}}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[dict[str, MlpParams], int, int]:
    payload = json.loads(Path(path).read_text())
    nets = {k: params_from_dict(v) for k, v in payload["networks"].items()}
    return nets, int(payload["seed"]), int(payload["step"])
