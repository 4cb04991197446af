"""Instance families, seeded generators and the JSONL dataset format.

Random numbers
--------------
Every value is drawn from a counter-based stream so that datasets are
bit-reproducible in any language::

    mix(z)   = splitmix64 finaliser of (z + 0x9E3779B97F4A7C15) mod 2^64
    key      = mix(mix(mix(seed) ^ index) ^ tag)
    word_k   = mix(key + k * 0x9E3779B97F4A7C15)        k = 0, 1, ...
    u_k      = (word_k >> 11) * 2^-53                    in [0, 1)

``index`` is the instance index in the pool and ``tag`` a small integer per
field (see ``_TAGS``). Uniform ``U[a, b]`` is ``a + (b - a) u``; the integer
uniform on ``[lo, hi]`` is ``lo + floor(u (hi - lo + 1))``.

File format
-----------
One JSON object per line::

    {"schema": "duallearn/instance/1", "family": "knapsack", "index": 0,
     "split": "train", "seed": 7, "data": {...}, "oracle": {...}}

``oracle`` is optional and holds ``value`` plus the dual solution.
Files ending in ``.gz`` are gzip-compressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import gzip
import io
import json
import math
from pathlib import Path

import numpy as np

SCHEMA = "duallearn/instance/1"
SPLITS = ("train", "validation", "test")
FAMILIES = ("knapsack", "prodplan")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TAGS = {"W": 1, "u": 2, "D": 3, "cp": 4, "cr": 5, "alpha": 6, "beta": 7, "eta": 8}


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- RNG

def _mix_int(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, index: int, tag: str) -> int:
    return _mix_int(_mix_int(_mix_int(seed & _MASK) ^ (index & _MASK)) ^ _TAGS[tag])


def uniforms(seed: int, index: int, tag: str, count: int) -> np.ndarray:
    """``count`` uniforms in [0, 1) from the ``(seed, index, tag)`` stream."""
    key = np.uint64(stream_key(seed, index, tag))
    k = np.arange(count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        words = _mix_array(key + k * np.uint64(_GOLDEN))
    return (words >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _uniform(seed, index, tag, count, lo, hi):
    return lo + (hi - lo) * uniforms(seed, index, tag, count)


def _randint(seed, index, tag, count, lo, hi):
    return lo + np.floor(uniforms(seed, index, tag, count) * (hi - lo + 1))


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5)


# ---------------------------------------------------------------- instances

@dataclass
class KnapsackInstance:
    """``min -p.x  s.t.  W x <= b,  0 <= x <= 1``."""

    p: np.ndarray
    W: np.ndarray
    b: np.ndarray

    family = "knapsack"

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.shape != (self.b.shape[0], self.p.shape[0]):
            raise DatasetError(f"knapsack dimensions disagree: W {self.W.shape}, b {self.b.shape}, p {self.p.shape}")
        for name in ("p", "W", "b"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise DatasetError(f"knapsack field {name} must be finite and nonnegative")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def features(self) -> np.ndarray:
        return np.concatenate([self.b, self.p, self.W.ravel()])

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "p": self.p.tolist(), "W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnapsackInstance":
        return cls(p=_field(d, "p"), W=_field(d, "W"), b=_field(d, "b"))


@dataclass
class ProdPlanInstance:
    """``min d.x + f.t  s.t.  r.x <= b,  x_j t_j >= 1,  x, t >= 0``."""

    d: np.ndarray
    f: np.ndarray
    r: np.ndarray
    b: float

    family = "prodplan"

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        self.f = np.asarray(self.f, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.b = float(self.b)
        if not (self.d.shape == self.f.shape == self.r.shape) or self.d.ndim != 1:
            raise DatasetError("prodplan vectors d, f, r must have equal length")
        for name in ("d", "f", "r"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise DatasetError(f"prodplan field {name} must be finite and positive")
        if not (math.isfinite(self.b) and self.b > 0):
            raise DatasetError("prodplan field b must be finite and positive")

    @property
    def m(self) -> int:
        return 1

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def features(self) -> np.ndarray:
        return np.concatenate([self.d, self.f, self.r, [self.b]])

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d.tolist(), "f": self.f.tolist(), "r": self.r.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> "ProdPlanInstance":
        return cls(d=_field(d, "d"), f=_field(d, "f"), r=_field(d, "r"), b=_field(d, "b"))


@dataclass
class InstanceStack:
    """Same-sized instances with their arrays stacked along a leading axis.

    Attribute names match the single-instance classes, so the completion
    formulas accept either.
    """

    family: str
    arrays: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["arrays"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __len__(self) -> int:
        return next(iter(self.arrays.values())).shape[0]

    @property
    def m(self) -> int:
        return self.arrays["b"].shape[1] if self.family == "knapsack" else 1

    @property
    def n(self) -> int:
        return self.arrays["p" if self.family == "knapsack" else "d"].shape[1]


def stack(instances) -> InstanceStack:
    if not instances:
        raise DatasetError("cannot stack an empty instance list")
    family = instances[0].family
    if any(i.family != family or (i.m, i.n) != (instances[0].m, instances[0].n) for i in instances):
        raise DatasetError("stacked instances must share family and size")
    names = ("p", "W", "b") if family == "knapsack" else ("d", "f", "r", "b")
    return InstanceStack(family, {k: np.stack([np.asarray(getattr(i, k)) for i in instances]) for k in names})


def _field(d: dict, name: str):
    if name not in d:
        raise DatasetError(f"missing field {name!r}")
    return d[name]


_CLASSES = {"knapsack": KnapsackInstance, "prodplan": ProdPlanInstance}


# ---------------------------------------------------------------- generators

def knapsack_instance(m: int, n: int, seed: int, index: int) -> KnapsackInstance:
    """Correlated multi-dimensional knapsack.

    ``W_ij ~ U{1..1000}``, ``b_i = round(0.25 sum_j W_ij)``,
    ``p_j = round(sum_i W_ij / m + 500 u_j)``.
    """
    W = _randint(seed, index, "W", m * n, 1, 1000).reshape(m, n)
    u = uniforms(seed, index, "u", n)
    b = _round_half_up(0.25 * W.sum(axis=1))
    p = _round_half_up(W.sum(axis=0) / m + 500.0 * u)
    return KnapsackInstance(p=p, W=W, b=b)


def prodplan_instance(n: int, seed: int, index: int) -> ProdPlanInstance:
    D = _uniform(seed, index, "D", n, 1.0, 100.0)
    cp = _uniform(seed, index, "cp", n, 1.0, 10.0)
    cr = _uniform(seed, index, "cr", n, 0.05, 0.2)
    alpha = _uniform(seed, index, "alpha", n, 0.1, 1.5)
    beta = _uniform(seed, index, "beta", n, 0.1, 2.0)
    eta = _uniform(seed, index, "eta", 1, 0.25, 0.75)[0]
    co = alpha * cp
    r = beta * cp
    return ProdPlanInstance(d=0.5 * cp * cr, f=co * D, r=r, b=float(eta * r.sum()))


@dataclass
class Dataset:
    family: str
    seed: int
    instances: list
    splits: list[str]
    oracles: list[dict | None] = field(default_factory=list)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DatasetError(f"unknown family {self.family!r}")
        if len(self.splits) != len(self.instances):
            raise DatasetError("one split label per instance required")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise DatasetError(f"unknown split labels {sorted(bad)}")
        if not self.oracles:
            self.oracles = [None] * len(self.instances)

    @property
    def sizes(self) -> dict[str, int]:
        return {s: self.splits.count(s) for s in SPLITS}

    @property
    def m(self) -> int:
        return self.instances[0].m

    @property
    def n(self) -> int:
        return self.instances[0].n

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def split(self, name: str) -> tuple[list, list]:
        idx = self.indices(name)
        if not idx:
            raise DatasetError(f"dataset has no {name!r} split")
        return [self.instances[i] for i in idx], [self.oracles[i] for i in idx]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return dumps(self) == dumps(other)


def split_sizes(count: int, sizes: tuple[int, int, int] | None = None) -> tuple[int, int, int]:
    """Explicit ``(train, validation, test)`` sizes, or a 4:1:1 partition of ``count``."""
    if sizes is not None:
        if sum(sizes) != count or min(sizes) < 0:
            raise DatasetError(f"split sizes {sizes} do not partition {count} instances")
        return tuple(sizes)
    val = count // 6
    test = count // 6
    return count - val - test, val, test


def _labels(count, sizes):
    tr, va, te = split_sizes(count, sizes)
    return ["train"] * tr + ["validation"] * va + ["test"] * te


def gen_knapsack(m: int, n: int, count: int, seed: int, sizes=None) -> Dataset:
    if min(m, n, count) < 1:
        raise DatasetError("m, n and count must be >= 1")
    inst = [knapsack_instance(m, n, seed, i) for i in range(count)]
    return Dataset("knapsack", seed, inst, _labels(count, sizes))


def gen_prodplan(n: int, count: int, seed: int, sizes=None) -> Dataset:
    if min(n, count) < 1:
        raise DatasetError("n and count must be >= 1")
    inst = [prodplan_instance(n, seed, i) for i in range(count)]
    return Dataset("prodplan", seed, inst, _labels(count, sizes))


# ---------------------------------------------------------------- primal side

def primal_objective(inst, x, t=None) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (inst.n,):
        raise DatasetError(f"x must have length {inst.n}")
    if isinstance(inst, KnapsackInstance):
        return float(-inst.p @ x)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (inst.n,):
        raise DatasetError(f"t must have length {inst.n}")
    return float(inst.d @ x + inst.f @ t)


def primal_violations(inst, x, t=None, tol: float = 1e-9) -> list[str]:
    """Names of violated primal constraints (empty when feasible)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (inst.n,):
        raise DatasetError(f"x must have length {inst.n}")
    out = []
    if isinstance(inst, KnapsackInstance):
        for i in np.flatnonzero(inst.W @ x > inst.b + tol * (1 + inst.b)):
            out.append(f"resource[{i}]")
        for j in np.flatnonzero(x < -tol):
            out.append(f"lower[{j}]")
        for j in np.flatnonzero(x > 1 + tol):
            out.append(f"upper[{j}]")
        return out
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (inst.n,):
        raise DatasetError(f"t must have length {inst.n}")
    if inst.r @ x > inst.b + tol * (1 + inst.b):
        out.append("resource")
    for j in range(inst.n):
        if x[j] < -tol or t[j] < -tol or x[j] * t[j] < 1 - tol:
            out.append(f"rsoc[{j}]")
    return out


def primal_feasible(inst, x, t=None, tol: float = 1e-9) -> bool:
    return not primal_violations(inst, x, t, tol)


# ---------------------------------------------------------------- serialization

def _record(ds: Dataset, i: int) -> dict:
    rec = {
        "schema": SCHEMA,
        "family": ds.family,
        "index": i,
        "split": ds.splits[i],
        "seed": ds.seed,
        "data": ds.instances[i].to_dict(),
    }
    if ds.oracles[i] is not None:
        rec["oracle"] = ds.oracles[i]
    return rec


def dumps(ds: Dataset) -> bytes:
    lines = [json.dumps(_record(ds, i), sort_keys=True, separators=(",", ":")) for i in range(len(ds.instances))]
    return ("\n".join(lines) + "\n").encode() if lines else b""


def loads(raw: bytes | str) -> Dataset:
    text = raw.decode() if isinstance(raw, bytes) else raw
    family = seed = None
    instances, splits, oracles = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        try:
            if not isinstance(rec, dict):
                raise DatasetError("record is not an object")
            if _field(rec, "schema") != SCHEMA:
                raise DatasetError(f"unsupported schema {rec['schema']!r}")
            fam = _field(rec, "family")
            if fam not in _CLASSES:
                raise DatasetError(f"unknown family {fam!r}")
            if family is None:
                family, seed = fam, _field(rec, "seed")
            elif fam != family:
                raise DatasetError("mixed families in one file")
            instances.append(_CLASSES[fam].from_dict(_field(rec, "data")))
            splits.append(_field(rec, "split"))
            oracles.append(rec.get("oracle"))
        except DatasetError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
    if family is None:
        raise DatasetError("empty dataset")
    return Dataset(family, seed, instances, splits, oracles)


def save(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    raw = dumps(ds)
    if path.suffix == ".gz":
        # fixed mtime keeps compressed output byte-identical
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as fh:
            fh.write(raw)
        raw = buf.getvalue()
    path.write_bytes(raw)


def load(path: str | Path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return loads(raw)
