"""Self-supervised dual training, the DC3 baseline, and evaluation.

DLL trains a network whose output layer already lands in the dual cone
(negated softplus gives ``y <= 0``); the optimal completion turns each
prediction into a certified bound and the loss is the negated mean bound.

DC3 predicts ``(y, z_l)`` (knapsack) or ``(y, sigma)`` (production planning)
with a linear head, completes the equality constraints, takes a fixed number
of gradient steps on a squared-violation penalty and is trained on
``-objective + rho * penalty``. At evaluation its ``y`` is clipped to
``y <= 0`` and passed through the optimal completion so that every reported
bound is valid.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import asdict, dataclass, field
import io
import json
import math
import time

import numpy as np

from . import completion, problems
from .neural import (AdamState, LrSchedule, MlpModel, ModelError, TrainingError, adam_step,
                     checkpoint_dict, init_mlp, load_checkpoint, mlp_backward, mlp_forward,
                     schedule_update)
from .refsolve import optimality_gap

METHODS = ("dll", "dc3")
SQRT2 = math.sqrt(2.0)

_FAMILY_DEFAULTS = {
    # output_scale multiplies the network output. Production-planning
    # multipliers are in the hundreds while a softplus head starts near 1;
    # DC3 keeps an unscaled linear head since larger outputs make its cubic
    # correction steps diverge.
    "knapsack": {"output_scale": {"dll": 1.0, "dc3": 1.0}, "correction_rate": 1e-4},
    "prodplan": {"output_scale": {"dll": 500.0, "dc3": 1.0}, "correction_rate": 1e-5},
}


@dataclass
class TrainConfig:
    family: str = "prodplan"
    method: str = "dll"
    hidden: list[int] | None = None
    lr: float = 1e-4
    patience: int = 32
    max_epochs: int = 1024
    warmup: int = 0
    batch_size: int = 128
    seed: int = 0
    output_scale: float | None = None
    correction_steps: int = 10
    correction_rate: float | None = None
    penalty: float = 10.0

    def __post_init__(self):
        if self.family not in _FAMILY_DEFAULTS:
            raise ValueError(f"family must be one of {sorted(_FAMILY_DEFAULTS)}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        defaults = _FAMILY_DEFAULTS[self.family]
        if self.output_scale is None:
            self.output_scale = defaults["output_scale"][self.method]
        if self.correction_rate is None:
            self.correction_rate = defaults["correction_rate"]
        if self.hidden is not None:
            self.hidden = [int(h) for h in self.hidden]
        for name in ("lr", "output_scale", "correction_rate", "penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("patience", "max_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup < 0 or self.correction_steps < 0:
            raise ValueError("warmup and correction_steps must be >= 0")
        if self.hidden is not None and (not self.hidden or min(self.hidden) < 1):
            raise ValueError("hidden sizes must be positive")

    def hidden_sizes(self, m: int, n: int) -> list[int]:
        if self.hidden is not None:
            return list(self.hidden)
        width = 2 * (m + n) if self.family == "knapsack" else max(128, 4 * n)
        return [width, width]

    def output_dim(self, m: int, n: int) -> int:
        if self.method == "dll":
            return m
        return m + n  # (y, z_l) or (y, sigma)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


@dataclass
class Normalizer:
    """Per-feature min-max scaling fitted on the training split."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalizer":
        return cls(X.min(axis=0), X.max(axis=0))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        return (X - self.lo) / np.where(span > 0, span, 1.0)


@dataclass
class TrainedModel:
    config: TrainConfig
    model: MlpModel
    normalizer: Normalizer
    m: int
    n: int

    def forward(self, X: np.ndarray):
        return mlp_forward(self.model, self.normalizer(X))

    def predict_y(self, stacked) -> np.ndarray:
        """Dual-feasible ``y`` (shape ``(B, m)``) for a stack of instances."""
        out, _ = self.forward(features(stacked))
        y = out[:, : self.m]
        if self.config.method == "dc3":
            y = dc3_corrected(self.config, stacked, out)[:, : self.m]
            y = np.minimum(y, 0.0)
        return y

    def to_dict(self) -> dict:
        return checkpoint_dict(
            self.model, family=self.config.family, method=self.config.method, m=self.m, n=self.n,
            config=asdict(self.config),
            normalization={"lo": self.normalizer.lo.tolist(), "hi": self.normalizer.hi.tolist()},
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        d = load_checkpoint(path)
        try:
            config = TrainConfig.from_dict(d["config"])
            norm = Normalizer(np.asarray(d["normalization"]["lo"]), np.asarray(d["normalization"]["hi"]))
            return cls(config, d["model"], norm, int(d["m"]), int(d["n"]))
        except KeyError as exc:
            raise ModelError(f"{path}: checkpoint lacks field {exc.args[0]!r}") from None


def features(stacked) -> np.ndarray:
    if stacked.family == "knapsack":
        B = len(stacked)
        return np.concatenate([stacked.b, stacked.p, stacked.W.reshape(B, -1)], axis=1)
    return np.concatenate([stacked.d, stacked.f, stacked.r, stacked.b[:, None]], axis=1)


def _subset(stacked, idx) -> problems.InstanceStack:
    return problems.InstanceStack(stacked.family, {k: v[idx] for k, v in stacked.arrays.items()})


# ---------------------------------------------------------------- DLL

def dual_bound(stacked, y: np.ndarray) -> np.ndarray:
    """Completed bound per instance; ``y`` has shape ``(B, m)``."""
    if stacked.family == "knapsack":
        return completion.knapsack_bound(stacked, y)
    return completion.prodplan_bound(stacked, y[:, 0])


def dual_bound_grad(stacked, y: np.ndarray) -> np.ndarray:
    if stacked.family == "knapsack":
        return completion.completion_vjp("knapsack", {"inst": stacked, "y": y})
    return completion.completion_vjp("prodplan", {"inst": stacked, "y": y[:, 0]})[:, None]


def dll_loss_and_grads(tm: TrainedModel, stacked):
    """Negated mean bound over the batch and its parameter gradients."""
    out, cache = tm.forward(features(stacked))
    bounds = dual_bound(stacked, out)
    B = out.shape[0]
    cot = -dual_bound_grad(stacked, out) / B
    return -float(bounds.mean()), mlp_backward(tm.model, cache, cot)


def dll_infer(tm: TrainedModel, inst) -> completion.DualSolution:
    y = tm.predict_y(problems.stack([inst]))[0]
    if inst.family == "knapsack":
        return completion.knapsack_dual(inst, y)
    return completion.prodplan_dual(inst, y[0])


# ---------------------------------------------------------------- DC3

def dc3_penalty(stacked, u: np.ndarray) -> np.ndarray:
    """Squared violation per instance for DC3 outputs ``u``."""
    if stacked.family == "knapsack":
        m = stacked.m
        y, zl = u[:, :m], u[:, m:]
        zu = stacked.p + np.einsum("bm,bmn->bn", y, stacked.W) + zl
        return (np.sum(np.maximum(y, 0.0) ** 2, 1) + np.sum(np.minimum(zl, 0.0) ** 2, 1)
                + np.sum(np.minimum(zu, 0.0) ** 2, 1))
    y, sigma = u[:, 0], u[:, 1:]
    pi = stacked.d - y[:, None] * stacked.r
    q = sigma ** 2 - 2.0 * pi * stacked.f
    return (np.maximum(y, 0.0) ** 2 + np.sum(np.minimum(pi, 0.0) ** 2, 1)
            + np.sum(np.maximum(q, 0.0) ** 2, 1))


def dc3_penalty_grad(stacked, u: np.ndarray) -> np.ndarray:
    if stacked.family == "knapsack":
        m = stacked.m
        y, zl = u[:, :m], u[:, m:]
        zu = stacked.p + np.einsum("bm,bmn->bn", y, stacked.W) + zl
        nu = 2.0 * np.minimum(zu, 0.0)
        gy = 2.0 * np.maximum(y, 0.0) + np.einsum("bmn,bn->bm", stacked.W, nu)
        gz = 2.0 * np.minimum(zl, 0.0) + nu
        return np.concatenate([gy, gz], axis=1)
    y, sigma = u[:, 0], u[:, 1:]
    r, f = stacked.r, stacked.f
    pi = stacked.d - y[:, None] * r
    qp = np.maximum(sigma ** 2 - 2.0 * pi * f, 0.0)
    gy = 2.0 * np.maximum(y, 0.0) - np.sum(2.0 * np.minimum(pi, 0.0) * r, 1) + np.sum(4.0 * qp * r * f, 1)
    gs = 4.0 * qp * sigma
    return np.concatenate([gy[:, None], gs], axis=1)


def dc3_penalty_hvp(stacked, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian of :func:`dc3_penalty` at ``u`` applied to ``v`` (piecewise-quadratic pieces)."""
    if stacked.family == "knapsack":
        m = stacked.m
        y, zl = u[:, :m], u[:, m:]
        vy, vz = v[:, :m], v[:, m:]
        W = stacked.W
        zu = stacked.p + np.einsum("bm,bmn->bn", y, W) + zl
        dzu = 2.0 * (zu < 0) * (np.einsum("bm,bmn->bn", vy, W) + vz)
        hy = 2.0 * (y > 0) * vy + np.einsum("bmn,bn->bm", W, dzu)
        hz = 2.0 * (zl < 0) * vz + dzu
        return np.concatenate([hy, hz], axis=1)
    y, sigma = u[:, 0], u[:, 1:]
    vy, vs = v[:, 0], v[:, 1:]
    r, f = stacked.r, stacked.f
    pi = stacked.d - y[:, None] * r
    q = sigma ** 2 - 2.0 * pi * f
    act = (q > 0).astype(np.float64)
    dq_y = 2.0 * r * f  # dq/dy
    dq_s = 2.0 * sigma  # dq/dsigma
    h_yy = 2.0 * (y > 0) + np.sum(2.0 * r * r * (pi < 0), 1) + np.sum(2.0 * act * dq_y ** 2, 1)
    h_ys = 2.0 * act * dq_y * dq_s
    h_ss = act * (2.0 * dq_s ** 2 + 4.0 * q)
    hy = h_yy * vy + np.sum(h_ys * vs, 1)
    hs = h_ys * vy[:, None] + h_ss * vs
    return np.concatenate([hy[:, None], hs], axis=1)


def dc3_corrected(cfg: TrainConfig, stacked, u0: np.ndarray, trace: list | None = None) -> np.ndarray:
    u = u0
    for _ in range(cfg.correction_steps):
        if trace is not None:
            trace.append(u)
        u = u - cfg.correction_rate * dc3_penalty_grad(stacked, u)
    return u


def dc3_objective(stacked, u: np.ndarray) -> np.ndarray:
    """Dual objective of (possibly infeasible) DC3 outputs, before repair."""
    if stacked.family == "knapsack":
        m = stacked.m
        y, zl = u[:, :m], u[:, m:]
        zu = stacked.p + np.einsum("bm,bmn->bn", y, stacked.W) + zl
        return np.sum(stacked.b * y, 1) - zu.sum(1)
    return stacked.b * u[:, 0] - SQRT2 * u[:, 1:].sum(1)


def dc3_objective_grad(stacked, u: np.ndarray) -> np.ndarray:
    if stacked.family == "knapsack":
        gy = stacked.b - stacked.W.sum(axis=2)
        gz = -np.ones((u.shape[0], stacked.n))
        return np.concatenate([gy, gz], axis=1)
    return np.concatenate([stacked.b[:, None], np.full((u.shape[0], stacked.n), -SQRT2)], axis=1)


def dc3_soft_loss(cfg: TrainConfig, stacked, u0: np.ndarray):
    """Mean of ``-objective + rho * penalty`` after corrections, and its gradient in ``u0``."""
    trace: list = []
    u = dc3_corrected(cfg, stacked, u0, trace)
    B = u.shape[0]
    per = -dc3_objective(stacked, u) + cfg.penalty * dc3_penalty(stacked, u)
    g = (-dc3_objective_grad(stacked, u) + cfg.penalty * dc3_penalty_grad(stacked, u)) / B
    for uk in reversed(trace):
        g = g - cfg.correction_rate * dc3_penalty_hvp(stacked, uk, g)
    return float(per.mean()), g


def dc3_loss_and_grads(tm: TrainedModel, stacked):
    out, cache = tm.forward(features(stacked))
    loss, g = dc3_soft_loss(tm.config, stacked, out)
    return loss, mlp_backward(tm.model, cache, g)


def dc3_infer(tm: TrainedModel, inst) -> completion.DualSolution:
    return dll_infer(tm, inst)


# ---------------------------------------------------------------- training loop

def new_model(cfg: TrainConfig, train_stack) -> TrainedModel:
    m, n = train_stack.m, train_stack.n
    X = features(train_stack)
    sizes = [X.shape[1], *cfg.hidden_sizes(m, n), cfg.output_dim(m, n)]
    head = "negated_softplus" if cfg.method == "dll" else "linear"
    acts = ["sigmoid"] * (len(sizes) - 2) + [head]
    model = init_mlp(sizes, acts, cfg.seed, output_scale=cfg.output_scale)
    return TrainedModel(cfg, model, Normalizer.fit(X), m, n)


def _loss_fn(cfg):
    return dll_loss_and_grads if cfg.method == "dll" else dc3_loss_and_grads


def validation_loss(tm: TrainedModel, stacked) -> float:
    out, _ = tm.forward(features(stacked))
    if tm.config.method == "dll":
        return -float(dual_bound(stacked, out).mean())
    loss, _ = dc3_soft_loss(tm.config, stacked, out)
    return loss


def train(dataset: problems.Dataset, cfg: TrainConfig, log=None):
    """Mini-batch Adam with the patience schedule; returns the best-validation model and history."""
    if dataset.family != cfg.family:
        raise ValueError(f"dataset family {dataset.family!r} does not match config {cfg.family!r}")
    train_inst, _ = dataset.split("train")
    val_inst, _ = dataset.split("validation")
    tr = problems.stack(train_inst)
    va = problems.stack(val_inst)
    tm = new_model(cfg, tr)
    adam = AdamState.for_model(tm.model)
    sched = LrSchedule(lr=cfg.lr, patience=cfg.patience, max_epochs=cfg.max_epochs, warmup=cfg.warmup)
    rng = np.random.default_rng([cfg.seed, 1])
    step_fn = _loss_fn(cfg)
    N = len(tr)
    history = []
    best_val, best_model = math.inf, copy.deepcopy(tm.model)
    epoch = 0
    while True:
        epoch += 1
        order = rng.permutation(N)
        losses = []
        for k, start in enumerate(range(0, N, cfg.batch_size)):
            batch = _subset(tr, order[start:start + cfg.batch_size])
            loss, grads = step_fn(tm, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {k}")
            adam_step(tm.model, grads, adam, sched.lr, where=f"epoch {epoch}, batch {k}")
            losses.append(loss)
        val = validation_loss(tm, va)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        lr_used = sched.lr
        if val < best_val:
            best_val, best_model = val, copy.deepcopy(tm.model)
        sched, stop = schedule_update(sched, val, epoch)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val, "lr": lr_used}
        history.append(row)
        if log is not None:
            log(row)
        if stop:
            break
    tm.model = best_model
    return tm, history


def dll_train(dataset, cfg: TrainConfig, log=None):
    if cfg.method != "dll":
        raise ValueError("dll_train needs method='dll'")
    return train(dataset, cfg, log)


def dc3_train(dataset, cfg: TrainConfig, log=None):
    if cfg.method != "dc3":
        raise ValueError("dc3_train needs method='dc3'")
    return train(dataset, cfg, log)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["epoch", "train_loss", "val_loss", "lr"], lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- evaluation

WEAK_DUALITY_TOL = 1e-7


def weak_duality_ok(L_star: float, L_hat: float) -> bool:
    return L_hat <= L_star + WEAK_DUALITY_TOL * (1.0 + abs(L_star))


@dataclass
class EvalReport:
    family: str
    m: int
    n: int
    method: str
    opt_values: np.ndarray
    bounds: np.ndarray
    infer_seconds: float
    config: dict = field(default_factory=dict)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([optimality_gap(a, b) for a, b in zip(self.opt_values, self.bounds)])

    @property
    def violations(self) -> list[int]:
        return [i for i, (a, b) in enumerate(zip(self.opt_values, self.bounds)) if not weak_duality_ok(a, b)]

    def summary(self) -> dict:
        g = 100.0 * self.gaps
        return {
            "family": self.family, "m": self.m, "n": self.n, "method": self.method,
            "avg_gap_pct": float(g.mean()), "std_gap_pct": float(g.std()), "max_gap_pct": float(g.max()),
            "opt_val_mean": float(np.mean(self.opt_values)), "infer_seconds": self.infer_seconds,
        }

    def rows(self) -> list[dict]:
        return [{"instance": i, "opt_value": float(a), "bound": float(b), "gap": float(g)}
                for i, (a, b, g) in enumerate(zip(self.opt_values, self.bounds, self.gaps))]

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "config": self.config,
                           "weak_duality_violations": self.violations, "instances": self.rows()}, indent=1)

    def summary_csv(self) -> str:
        s = self.summary()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(s), lineterminator="\n")
        w.writeheader()
        w.writerow(s)
        return buf.getvalue()


def evaluate(predictor, instances, oracles, method: str = "dll", config: dict | None = None) -> EvalReport:
    """Certified bounds for ``instances`` against stored oracle values.

    ``predictor`` is a :class:`TrainedModel` or a callable mapping an
    :class:`~duallearn.problems.InstanceStack` to ``y`` of shape ``(B, m)``;
    callables have their output clipped to ``y <= 0`` before completion.
    """
    missing = [i for i, o in enumerate(oracles) if o is None or "value" not in o]
    if missing:
        raise ValueError(f"oracle value missing for {len(missing)} instance(s), first at position {missing[0]}")
    stacked = problems.stack(instances)
    t0 = time.perf_counter()
    if isinstance(predictor, TrainedModel):
        y = predictor.predict_y(stacked)
        if config is None:
            config = asdict(predictor.config)
    else:
        y = np.minimum(np.asarray(predictor(stacked), dtype=np.float64).reshape(len(stacked), -1), 0.0)
    bounds = dual_bound(stacked, y)
    elapsed = time.perf_counter() - t0
    return EvalReport(stacked.family, stacked.m, stacked.n, method,
                      np.array([o["value"] for o in oracles], dtype=np.float64), np.asarray(bounds),
                      elapsed, config or {})
