"""Command-line interface: ``duallearn {gen,train,eval,project}``.

Relative dataset and checkpoint paths that do not exist in the working
directory are looked up under ``$DUALLEARN_DATA_DIR``; ``gen`` writes there
by default.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps float reductions in a fixed order
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
from dataclasses import asdict
import json
from pathlib import Path
import sys

import numpy as np

from . import cones, problems, refsolve, training

DATA_DIR_ENV = "DUALLEARN_DATA_DIR"


class CliError(Exception):
    pass


def _data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    alt = _data_dir() / p
    return alt if alt.exists() else p


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    if args.family == "knapsack" and args.m is None:
        raise CliError("knapsack needs --m")
    if args.family == "knapsack":
        ds = problems.gen_knapsack(args.m, args.n, args.count, args.seed, args.splits)
        stem = f"knapsack-m{args.m}-n{args.n}-s{args.seed}"
    else:
        ds = problems.gen_prodplan(args.n, args.count, args.seed, args.splits)
        stem = f"prodplan-n{args.n}-s{args.seed}"
    if not args.no_oracle:
        refsolve.attach_oracles(ds, jobs=args.jobs)
    out = Path(args.out) if args.out else _data_dir() / f"{stem}.jsonl"
    try:
        problems.save(ds, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}") from None
    sizes = ds.sizes
    msg = f"wrote {len(ds.instances)} instances to {out} (train {sizes['train']}, validation {sizes['validation']}, test {sizes['test']})"
    if not args.no_oracle:
        msg += f"; mean optimum {np.mean([o['value'] for o in ds.oracles]):.6g}"
    print(msg)
    return 0


# ---------------------------------------------------------------- train

_TRAIN_FLAGS = {
    "seed": "seed", "epochs": "max_epochs", "patience": "patience", "warmup": "warmup",
    "batch_size": "batch_size", "hidden": "hidden", "lr": "lr", "output_scale": "output_scale",
    "corrections": "correction_steps", "correction_rate": "correction_rate", "penalty": "penalty",
}


def _load_dataset(path: str) -> problems.Dataset:
    p = _resolve(path)
    try:
        return problems.load(p)
    except OSError as exc:
        raise CliError(f"cannot read {p}: {exc.strerror}") from None


def train_config(args, family: str) -> training.TrainConfig:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    opts: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                opts.update(json.load(fh))
        except OSError as exc:
            raise CliError(f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            opts[key] = v
    opts["family"] = family
    opts["method"] = args.method
    try:
        return training.TrainConfig.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training configuration: {exc}") from None


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    cfg = train_config(args, ds.family)
    ds.split("train")
    ds.split("validation")

    def log(row):
        if args.verbose:
            print(f"epoch {row['epoch']:5d}  train {row['train_loss']:.6g}  val {row['val_loss']:.6g}  lr {row['lr']:.3g}",
                  file=sys.stderr)

    tm, history = training.train(ds, cfg, log)
    out = Path(args.out)
    hist = Path(args.history) if args.history else out.with_suffix(".history.csv")
    tm.save(out)
    hist.write_text(training.history_csv(history))
    best = min(r["val_loss"] for r in history)
    print(f"trained {cfg.method} on {ds.family} for {len(history)} epochs; best validation loss {best:.6g}")
    print(f"checkpoint {out}; history {hist}")
    return 0


# ---------------------------------------------------------------- eval

def _oracle_predictor(oracles):
    Y = np.array([o["y_star"] for o in oracles], dtype=np.float64)
    return lambda stacked: Y


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    instances, oracles = ds.split(args.split)
    if any(o is None for o in oracles):
        raise CliError(f"{args.data}: the {args.split!r} split has no oracle values; regenerate without --no-oracle")
    reports = []
    if args.checkpoint:
        for path in args.checkpoint:
            tm = training.TrainedModel.load(_resolve(path))
            if tm.config.family != ds.family or (tm.m, tm.n) != (ds.m, ds.n):
                raise CliError(f"checkpoint {path} is for {tm.config.family} m={tm.m} n={tm.n}; "
                               f"dataset is {ds.family} m={ds.m} n={ds.n}")
            reports.append(training.evaluate(tm, instances, oracles, tm.config.method))
    if args.oracle_predictor:
        reports.append(training.evaluate(_oracle_predictor(oracles), instances, oracles, "oracle"))
    if not reports:
        raise CliError("nothing to evaluate: give --checkpoint or --oracle-predictor")

    rows = [r.summary() for r in reports]
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in rows]
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    if args.report:
        Path(args.report).write_text(table)
    if args.json:
        Path(args.json).write_text(json.dumps([json.loads(r.to_json()) for r in reports], indent=1))
    bad = sum(len(r.violations) for r in reports)
    if bad:
        print(f"weak duality violated on {bad} instance(s)", file=sys.stderr)
        return 1
    return 0


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------- project

def cmd_project(args) -> int:
    K = cones.parse_cone(args.cone)
    x = np.array(args.point, dtype=np.float64)
    if x.shape != (K.dim,):
        raise CliError(f"{K.name} needs {K.dim} coordinates, got {x.shape[0]}")
    try:
        if args.mode == "euclidean":
            p = cones.project_euclidean(K, x)
            lam = None
        else:
            p = cones.project_radial(K, x)
            lam = cones.radial_step(K, x)
    except cones.UnsupportedProjection as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return 1
    print(" ".join(_fmt_num(v) for v in p))
    print(f"slack {_fmt_num(float(cones.slack(K, p)))}")
    if lam is not None:
        print("lambda " + " ".join(_fmt_num(v) for v in np.atleast_1d(lam)))
    return 0


def _fmt_num(v: float) -> str:
    v = float(v)
    return "0" if v == 0 else f"{v:.10g}"


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duallearn", description="Learning certified dual bounds for conic problems.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset with oracle optima")
    g.add_argument("--family", choices=problems.FAMILIES, required=True)
    g.add_argument("--m", type=_positive_int, help="resource constraints (knapsack)")
    g.add_argument("--n", type=_positive_int, required=True, help="items")
    g.add_argument("--count", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--splits", type=_int_list, help="train,validation,test sizes (default 4:1:1)")
    g.add_argument("--out", help=f"output JSONL path (default under ${DATA_DIR_ENV})")
    g.add_argument("--jobs", type=_positive_int, default=1)
    g.add_argument("--no-oracle", action="store_true", help="skip the reference solves")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a DLL or DC3 model")
    t.add_argument("--data", required=True)
    t.add_argument("--method", choices=training.METHODS, default="dll")
    t.add_argument("--out", required=True, help="checkpoint JSON path")
    t.add_argument("--history", help="history CSV path (default next to the checkpoint)")
    t.add_argument("--config", help="JSON file of training options; flags take precedence")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--patience", type=_positive_int)
    t.add_argument("--warmup", type=int)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--hidden", type=_int_list, help="comma-separated hidden widths")
    t.add_argument("--lr", type=float)
    t.add_argument("--output-scale", type=float)
    t.add_argument("--corrections", type=int, help="DC3 correction steps")
    t.add_argument("--correction-rate", type=float, help="DC3 correction step size")
    t.add_argument("--penalty", type=float, help="DC3 soft-loss penalty weight")
    t.add_argument("--jobs", type=_positive_int, default=1, help="accepted for symmetry; training is single-threaded")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="certified gaps on a dataset split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", action="append", help="may be repeated")
    e.add_argument("--oracle-predictor", action="store_true", help="also evaluate the stored optimal duals")
    e.add_argument("--split", choices=problems.SPLITS, default="test")
    e.add_argument("--report", help="summary CSV path")
    e.add_argument("--json", help="per-instance JSON path")
    e.add_argument("--jobs", type=_positive_int, default=1)
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="project a point onto a cone")
    p.add_argument("--cone", required=True, help="e.g. soc3, rsoc4, psd2, orthant5, exp, dexp, pow0.5")
    p.add_argument("--mode", choices=("euclidean", "radial"), default="radial")
    p.add_argument("point", nargs="+", type=float)
    p.set_defaults(func=cmd_project)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "splits", None) is not None and len(args.splits) != 3:
        ap.error("--splits needs three sizes")
    try:
        return args.func(args)
    except (CliError, problems.DatasetError, cones.ConeError, training.ModelError, ValueError) as exc:
        print(f"duallearn: error: {exc}", file=sys.stderr)
        return 1
    except training.TrainingError as exc:
        print(f"duallearn: training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
