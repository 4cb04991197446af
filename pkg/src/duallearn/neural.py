"""Fully-connected networks in numpy with hand-written backpropagation.

Weights are stored ``(out, in)``; inputs are batches ``(B, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy.special import expit

CHECKPOINT_FORMAT = "duallearn/mlp/1"


class TrainingError(RuntimeError):
    pass


class ModelError(ValueError):
    pass


def _softplus(z):
    return np.logaddexp(0.0, z)


ACTIVATIONS = {
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
    "sigmoid": (expit, lambda z: expit(z) * (1.0 - expit(z))),
    "softplus": (_softplus, expit),
    "negated_softplus": (lambda z: -_softplus(z), lambda z: -expit(z)),
}


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ModelError("layer weight/bias shapes disagree")

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (self.activation == other.activation and np.array_equal(self.W, other.W)
                and np.array_equal(self.b, other.b))


@dataclass
class MlpModel:
    """Layer stack with an optional fixed positive scale on the output."""

    layers: list[Layer]
    output_scale: float = 1.0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ModelError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ModelError("consecutive layer dimensions do not chain")
        if not self.output_scale > 0:
            raise ModelError("output_scale must be positive")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.W, layer.b)]

    def zeros_like(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params()]

    def to_dict(self) -> dict:
        return {
            "output_scale": self.output_scale,
            "layers": [
                {"in": int(l.W.shape[1]), "out": int(l.W.shape[0]), "activation": l.activation,
                 "W": l.W.ravel().tolist(), "b": l.b.tolist()}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        layers = [
            Layer(np.asarray(l["W"], dtype=np.float64).reshape(l["out"], l["in"]), l["b"], l["activation"])
            for l in d["layers"]
        ]
        return cls(layers, output_scale=float(d.get("output_scale", 1.0)))


def init_mlp(sizes: list[int], activations: list[str], seed: int, output_scale: float = 1.0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ModelError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-lim, lim, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return MlpModel(layers, output_scale=output_scale)


def mlp_forward(model: MlpModel, x: np.ndarray):
    """Returns ``(output, cache)``; ``x`` is ``(B, in)`` or ``(in,)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != model.input_dim:
        raise ModelError(f"input has dimension {h.shape[1]}, model expects {model.input_dim}")
    inputs, pre = [], []
    for layer in model.layers:
        inputs.append(h)
        z = h @ layer.W.T + layer.b
        pre.append(z)
        h = ACTIVATIONS[layer.activation][0](z)
    out = model.output_scale * h
    cache = {"inputs": inputs, "pre": pre, "version": model.version, "single": single}
    return (out[0] if single else out), cache


def mlp_backward(model: MlpModel, cache: dict, cotangent: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients ``[dW0, db0, dW1, db1, ...]`` of ``sum(cotangent * output)``."""
    if cache.get("version") != model.version or len(cache.get("pre", ())) != len(model.layers):
        raise ModelError("forward cache does not belong to the current model parameters")
    g = np.asarray(cotangent, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    if g.shape != cache["pre"][-1].shape:
        raise ModelError("cotangent shape does not match the forward output")
    g = g * model.output_scale
    grads: list[np.ndarray] = []
    for layer, h, z in zip(reversed(model.layers), reversed(cache["inputs"]), reversed(cache["pre"])):
        dz = g * ACTIVATIONS[layer.activation][1](z)
        grads.append(dz.sum(axis=0))
        grads.append(dz.T @ h)
        g = dz @ layer.W
    grads.reverse()
    return grads


def mlp_input_grad(model: MlpModel, cache: dict, cotangent: np.ndarray) -> np.ndarray:
    """Gradient with respect to the network input (used in tests)."""
    g = np.asarray(cotangent, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    g = g * model.output_scale
    for layer, z in zip(reversed(model.layers), reversed(cache["pre"])):
        g = (g * ACTIVATIONS[layer.activation][1](z)) @ layer.W
    return g[0] if cache["single"] else g


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpModel) -> "AdamState":
        return cls(model.zeros_like(), model.zeros_like())

    def to_dict(self) -> dict:
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": [a.ravel().tolist() for a in self.m], "v": [a.ravel().tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d: dict, model: MlpModel) -> "AdamState":
        shapes = [p.shape for p in model.params()]
        m = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["m"], shapes)]
        v = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["v"], shapes)]
        return cls(m, v, d["step"], d["beta1"], d["beta2"], d["eps"])


def adam_step(model: MlpModel, grads: list[np.ndarray], state: AdamState, lr: float,
              where: str = "") -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update, in place. ``where`` labels errors."""
    params = model.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ModelError("gradient shapes do not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient{' at ' + where if where else ''}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    model.version += 1
    return model, state


# ---------------------------------------------------------------- schedule

@dataclass
class LrSchedule:
    """Halve the learning rate after ``patience`` epochs without improvement."""

    lr: float = 1e-4
    lr_min: float = 1e-7
    factor: float = 2.0
    patience: int = 32
    max_epochs: int = 1024
    warmup: int = 0
    best: float = math.inf
    since_best: int = 0
    rel_improvement: float = 1e-8

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["best"] = None if math.isinf(self.best) else self.best
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LrSchedule":
        d = dict(d)
        d["best"] = math.inf if d.get("best") is None else d["best"]
        return cls(**d)


def schedule_update(schedule: LrSchedule, val_loss: float, epoch: int) -> tuple[LrSchedule, bool]:
    """Record the validation loss of 1-based ``epoch``; returns ``(schedule, stop)``."""
    if val_loss < schedule.best - schedule.rel_improvement * abs(schedule.best if math.isfinite(schedule.best) else 0.0):
        schedule.best = val_loss
        schedule.since_best = 0
    else:
        schedule.since_best += 1
        if epoch > schedule.warmup and schedule.since_best >= schedule.patience:
            schedule.lr /= schedule.factor
            schedule.since_best = 0
    stop = schedule.lr <= schedule.lr_min or epoch >= schedule.max_epochs
    return schedule, stop


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(model: MlpModel, adam: AdamState | None = None, schedule: LrSchedule | None = None,
                    **extra) -> dict:
    d = {"format": CHECKPOINT_FORMAT, "model": model.to_dict()}
    if adam is not None:
        d["adam"] = adam.to_dict()
    if schedule is not None:
        d["schedule"] = schedule.to_dict()
    d.update(extra)
    return d


def save_checkpoint(path, model, adam=None, schedule=None, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, adam, schedule, **extra), fh)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ModelError(f"{path}: unsupported checkpoint format {d.get('format')!r}")
    model = MlpModel.from_dict(d["model"])
    out = dict(d)
    out["model"] = model
    if "adam" in d:
        out["adam"] = AdamState.from_dict(d["adam"], model)
    if "schedule" in d:
        out["schedule"] = LrSchedule.from_dict(d["schedule"])
    return out
