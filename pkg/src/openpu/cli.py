"""Command-line entry point: ``openpu {gen,train,eval,check-bounds,sweep}``.

Every command writes its outputs and a ``manifest.txt`` under ``--out-dir``.
Manifests use the same flat ``key=value`` format as ``--config`` files, so
``--config <out-dir>/manifest.txt`` replays a run.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    AUX_SOURCES, UNLABELED_CODE, LabeledSet, TestSet, WildSet, make_split, read_csv_arrays, read_manifest,
    synthetic_spec, write_csv, write_manifest,
)
from .evaluate import (
    DiscreteToySpace, check_bounds_discrete, compute_metrics, gradient_weight_sweep, mean_stderr,
    quantized_levels, write_metrics_csv,
)
from .experiments import SYNTHETIC_LR, SYNTHETIC_SPEC, SYNTHETIC_SPLIT, run_seed
from .numerics import TrainingError
from .trainer import CheckpointError, TrainConfig, load_checkpoint, predict, save_checkpoint, train, write_history_csv

log = logging.getLogger("openpu")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


SPEC_KEYS = {"n_known": int, "n_unknown": int, "dim": int, "pi": float, "separation": float,
             "overlap": float, "sigma": float, "spec_seed": int}
SPLIT_KEYS = {"per_class_labeled": int, "n_wild": int, "n_test": int, "aux_source": str}
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


# ---------------------------------------------------------------- config plumbing

def _parse_value(key: str, raw: str, typ):
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key == "hidden":
        return tuple(int(h) for h in raw.replace("(", "").replace(")", "").split(",") if h.strip())
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _field_type(name):
    default = TRAIN_FIELDS[name].default
    return type(default) if not isinstance(default, tuple) else tuple


def load_config_file(path) -> dict:
    """Flat ``key=value`` file; keys may be snake_case or kebab-case, ``meta.*`` keys are ignored."""
    try:
        raw = read_manifest(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = {}
    for k, v in raw.items():
        k = k.replace("-", "_")
        if k.startswith("meta."):
            continue
        if k in TRAIN_FIELDS:
            out[k] = _parse_value(k, v, _field_type(k))
        elif k in SPEC_KEYS:
            out[k] = _parse_value(k, v, SPEC_KEYS[k])
        elif k in SPLIT_KEYS:
            out[k] = _parse_value(k, v, SPLIT_KEYS[k])
        elif k in ("seeds", "axis", "values", "data_dir", "trials", "max_atoms", "levels", "orders"):
            out[k] = v
        else:
            raise ConfigError(f"unknown config key {k!r}")
    return out


def resolve(args, keys) -> dict:
    """Config-file values overridden by explicitly given flags."""
    conf = load_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
        elif k in conf:
            out[k] = conf[k]
    return out


def build_train_config(values: dict) -> TrainConfig:
    kw = {k: v for k, v in values.items() if k in TRAIN_FIELDS}
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def build_spec(values: dict):
    kw = {k: values[k] for k in SPEC_KEYS if k in values and k != "spec_seed"}
    kw["seed"] = values.get("spec_seed", SYNTHETIC_SPEC["seed"])
    merged = {**SYNTHETIC_SPEC, **kw}
    try:
        return synthetic_spec(**merged), merged
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def manifest_entries(command: str, resolved: dict) -> dict:
    entries = {"meta.command": command, "meta.package_version": __version__,
               "meta.numpy_version": np.__version__, "meta.python_version": platform.python_version()}
    for k, v in resolved.items():
        entries[k] = ",".join(map(str, v)) if isinstance(v, (tuple, list)) else v
    return entries


def out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {p} is not writable: {exc}") from exc
    return p


# ---------------------------------------------------------------- argument parser

def _add_train_flags(p):
    for name, f in TRAIN_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if name == "seed":
            continue
        typ = _field_type(name)
        if typ is bool:
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif typ is tuple:
            p.add_argument(flag, dest=name, type=lambda s: tuple(int(h) for h in s.split(",")), default=None,
                           help="comma-separated hidden widths")
        else:
            p.add_argument(flag, dest=name, type=typ, default=None)


def _add_spec_flags(p):
    for name, typ in SPEC_KEYS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    for name, typ in SPLIT_KEYS.items():
        if name == "aux_source":
            p.add_argument("--aux-source", dest=name, choices=AUX_SOURCES, default=None)
        else:
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def _default_out(command: str) -> str:
    return str(Path(os.environ.get("OPENPU_OUT_DIR", "runs")) / command)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="openpu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write synthetic labeled/wild/test CSVs")
    g.add_argument("--config")
    g.add_argument("--out-dir", default=_default_out("data"))
    g.add_argument("--seed", type=int, default=None)
    _add_spec_flags(g)

    t = sub.add_parser("train", parents=[common], help="train on a generated or exported dataset")
    t.add_argument("--config")
    t.add_argument("--data-dir", default=None, help="directory with labeled.csv, wild.csv and optional test.csv")
    t.add_argument("--out-dir", default=_default_out("train"))
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--seeds", type=int, default=None, help="number of consecutive seeds to run")
    _add_train_flags(t)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a labeled CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="CSV of test pixels (0 = unknown)")
    e.add_argument("--out-dir", default=_default_out("eval"))
    e.add_argument("--deploy-net", choices=("c", "e", "mean"), default=None)
    e.add_argument("--threshold", type=float, default=None)
    e.add_argument("--score", choices=("pu", "mixpro"), default="pu")
    e.add_argument("--unknown-label-code", type=int, default=0)

    b = sub.add_parser("check-bounds", parents=[common], help="exact risk-bound checks on random discrete spaces")
    b.add_argument("--config")
    b.add_argument("--out-dir", default=_default_out("bounds"))
    b.add_argument("--trials", type=int, default=None)
    b.add_argument("--max-atoms", type=int, default=None)
    b.add_argument("--levels", type=int, default=None)
    b.add_argument("--orders", default=None, help="comma-separated Taylor orders")
    b.add_argument("--pi", type=float, default=None, help="fix the known mass (random if omitted)")
    b.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("sweep", parents=[common], help="one-axis ablation over seeds on the synthetic protocol")
    s.add_argument("--config")
    s.add_argument("--out-dir", default=_default_out("sweep"))
    s.add_argument("--axis", choices=("t", "beta", "tau", "updating", "weighting", "aux_source"), default=None)
    s.add_argument("--values", default=None, help="comma-separated values (axis default if omitted)")
    s.add_argument("--seeds", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--weights-csv", action="store_true", help="also write the gradient-weight table")
    _add_train_flags(s)
    _add_spec_flags(s)
    return parser


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    vals = resolve(args, [*SPEC_KEYS, *SPLIT_KEYS, "seed"])
    spec, spec_kw = build_spec(vals)
    split = {k: vals.get(k, SYNTHETIC_SPLIT.get(k, "wild")) for k in SPLIT_KEYS}
    seed = vals.get("seed", 0)
    d = out_dir(args.out_dir)
    try:
        Dk, Dw, Dt = make_split(spec, split["per_class_labeled"], split["n_wild"], split["n_test"], seed,
                                split["aux_source"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(d / "labeled.csv", Dk.X, Dk.y)
    write_csv(d / "wild.csv", Dw.X, np.full(len(Dw), UNLABELED_CODE))
    with open(d / "wild_audit.csv", "w", encoding="utf-8") as fh:
        fh.write("row,label\n")
        fh.writelines(f"{i},{c}\n" for i, c in enumerate(Dw.audit_labels()))
    write_csv(d / "test.csv", Dt.X, Dt.y)
    resolved = {**{("spec_seed" if k == "seed" else k): v for k, v in spec_kw.items()}, **split, "seed": seed}
    write_manifest(d / "manifest.txt", manifest_entries("gen", resolved))
    log.info("wrote %d labeled, %d wild, %d test rows to %s", len(Dk), len(Dw), len(Dt), d)
    return EXIT_OK


def load_dataset_dir(path):
    d = Path(path)
    if not (d / "labeled.csv").exists() or not (d / "wild.csv").exists():
        raise ConfigError(f"dataset directory {d} needs labeled.csv and wild.csv")
    with open(d / "labeled.csv", encoding="utf-8") as fh:
        first = fh.readline()
    bands = len(first.split(",")) - 1
    Xk, yk = read_csv_arrays(d / "labeled.csv", bands, unknown_label_code=-999)
    Xw, _ = read_csv_arrays(d / "wild.csv", bands, unknown_label_code=-999)
    test = None
    if (d / "test.csv").exists():
        Xt, yt = read_csv_arrays(d / "test.csv", bands)
        test = TestSet(Xt, yt)
    return LabeledSet(Xk, yk), WildSet(Xw), test


def cmd_train(args) -> int:
    vals = resolve(args, [*TRAIN_FIELDS, "seeds", "data_dir"])
    if not vals.get("data_dir"):
        raise ConfigError("train needs --data-dir (see `openpu gen`)")
    Dk, Dw, Dt = load_dataset_dir(vals["data_dir"])
    n_seeds = int(vals.get("seeds", 1))
    base = build_train_config(vals)
    d = out_dir(args.out_dir)
    rows = []
    for seed in range(base.seed, base.seed + n_seeds):
        cfg = dataclasses.replace(base, seed=seed)
        sd = d / f"seed_{seed}" if n_seeds > 1 else d
        sd.mkdir(parents=True, exist_ok=True)
        result = train(cfg, Dk, Dw)
        save_checkpoint(sd / "checkpoint.npz", cfg, result.state)
        write_history_csv(sd / "history.csv", result.history)
        if Dt is not None and len(Dt):
            preds = predict(result.net_c, result.net_e, Dt.X, cfg.deploy, cfg.threshold)
            rep = compute_metrics(preds, Dt.y, Dk.n_classes)
            _write_report(sd, rep)
            rows.append({"seed": seed, **rep.summary()})
        log.info("seed %d done: final R_all=%.6f", seed, result.history[-1]["R_all"])
    if rows:
        _write_summary(d / "summary.csv", rows)
    resolved = {**base.to_dict(), "seeds": n_seeds, "data_dir": vals["data_dir"]}
    write_manifest(d / "manifest.txt", manifest_entries("train", resolved))
    return EXIT_OK


def _write_report(d: Path, rep) -> None:
    write_metrics_csv(d / "metrics.csv", [rep.summary()])
    (d / "metrics.txt").write_text(rep.to_text(), encoding="utf-8")
    np.savetxt(d / "confusion.csv", rep.confusion, fmt="%d", delimiter=",")


def _write_summary(path, rows: list[dict]) -> None:
    keys = ("open_oa", "closed_oa", "f1_u", "auc_u")
    out = list(rows)
    for label, fn in (("mean", lambda v: mean_stderr(v)[0]), ("stderr", lambda v: mean_stderr(v)[1])):
        out.append({"seed": label, **{k: fn([r[k] for r in rows]) for k in keys}})
    write_metrics_csv(path, out)


def cmd_eval(args) -> int:
    try:
        cfg, state = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise OSError(str(exc)) from exc
    X, y = read_csv_arrays(args.data, state.net_c.d_in, unknown_label_code=args.unknown_label_code)
    if len(y) == 0:
        raise ConfigError(f"{args.data} holds no samples")
    mode = args.deploy_net or cfg.deploy
    thr = args.threshold if args.threshold is not None else cfg.threshold
    preds = predict(state.net_c, state.net_e, X, mode, thr)
    rep = compute_metrics(preds, y, state.net_c.n_classes, score=args.score)
    d = out_dir(args.out_dir)
    _write_report(d, rep)
    write_manifest(d / "manifest.txt", manifest_entries("eval", {
        "checkpoint": args.checkpoint, "data": args.data, "deploy": mode, "threshold": thr, "score": args.score}))
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_check_bounds(args) -> int:
    vals = resolve(args, ["trials", "max_atoms", "levels", "orders", "pi", "seed"])
    trials = int(vals.get("trials", 1000))
    max_atoms = int(vals.get("max_atoms", 12))
    n_levels = int(vals.get("levels", 21))
    orders = [int(o) for o in str(vals.get("orders", "1,2,3")).split(",")]
    seed = int(vals.get("seed", 0))
    pi = vals.get("pi")
    if max_atoms < 1 or n_levels < 2 or trials < 1:
        raise ConfigError("trials >= 1, max-atoms >= 1 and levels >= 2 required")
    rng = np.random.default_rng(seed)
    levels = quantized_levels(n_levels)
    rows = []
    for i in range(trials):
        K = int(rng.integers(1, max_atoms + 1))
        space = DiscreteToySpace.random(K, rng, pi=None if pi is None else float(pi))
        t = orders[i % len(orders)]
        rep = check_bounds_discrete(space, rng.choice(levels, size=K), t, n_levels)
        rows.append({"trial": i, "atoms": K, **rep.to_dict()})
    d = out_dir(args.out_dir)
    write_metrics_csv(d / "bounds.csv", rows)
    violations = sum(not r["holds"] for r in rows)
    text = (f"trials {trials}\nviolations {violations}\n"
            f"max gap/bound ratio {max((r['observed_gap'] / r['bound']) if r['bound'] else 0.0 for r in rows):.6f}\n")
    (d / "bounds.txt").write_text(text, encoding="utf-8")
    write_manifest(d / "manifest.txt", manifest_entries("check-bounds", {
        "trials": trials, "max_atoms": max_atoms, "levels": n_levels, "orders": orders, "seed": seed,
        **({"pi": pi} if pi is not None else {})}))
    sys.stdout.write(text)
    return EXIT_OK if violations == 0 else EXIT_NUMERIC


AXIS_DEFAULTS = {
    "t": "1,2,3,4,5,6",
    "beta": "0,0.5,1,2",
    "tau": "0.5,0.7,0.9,0.95,0.99",
    "updating": "continuous/continuous,discrete/discrete,discrete/continuous,continuous/discrete",
    "weighting": "pro,mixpro",
    "aux_source": ",".join(AUX_SOURCES),
}


def _axis_override(axis: str, value: str) -> dict:
    if axis == "t":
        return {"taylor_order": int(value)}
    if axis == "beta":
        return {"beta": float(value)}
    if axis == "tau":
        return {"tau": float(value)}
    if axis == "updating":
        mc, me = value.split("/")
        return {"mode_c": mc, "mode_e": me}
    if axis == "weighting":
        return {"weighting": value}
    return {}


def cmd_sweep(args) -> int:
    vals = resolve(args, [*TRAIN_FIELDS, *SPEC_KEYS, *SPLIT_KEYS, "axis", "values", "seeds"])
    axis = vals.get("axis")
    if axis is None:
        raise ConfigError("sweep needs --axis")
    values = [v.strip() for v in str(vals.get("values", AXIS_DEFAULTS[axis])).split(",") if v.strip()]
    n_seeds = int(vals.get("seeds", 5))
    vals.setdefault("base_lr", SYNTHETIC_LR)
    spec, spec_kw = build_spec(vals)
    split = {k: vals.get(k, SYNTHETIC_SPLIT[k]) for k in SYNTHETIC_SPLIT}
    base = build_train_config(vals)
    d = out_dir(args.out_dir)
    rows = []
    for value in values:
        try:
            cfg = dataclasses.replace(base, **_axis_override(axis, value))
        except ValueError as exc:
            raise ConfigError(f"{axis}={value}: {exc}") from exc
        aux = value if axis == "aux_source" else vals.get("aux_source", "wild")
        if aux not in AUX_SOURCES:
            raise ConfigError(f"unknown aux source {aux!r}")
        results = [run_seed(cfg, base.seed + i, spec=spec, split=split, aux_source=aux) for i in range(n_seeds)]
        row = {"axis": axis, "value": value}
        for key in ("open_oa", "closed_oa", "f1_u", "auc_u"):
            m, se = mean_stderr([getattr(r.report, key) for r in results])
            row[key] = m
            row[key + "_se"] = se
        rows.append(row)
        log.info("%s=%s: F1u %.2f", axis, value, 100 * row["f1_u"])
    write_metrics_csv(d / "sweep.csv", rows)
    if args.weights_csv:
        write_metrics_csv(d / "gradient_weights.csv", gradient_weight_sweep(range(1, 7), np.linspace(0.01, 0.99, 99)))
    resolved = {**base.to_dict(), **{("spec_seed" if k == "seed" else k): v for k, v in spec_kw.items()},
                **split, "axis": axis, "values": values, "seeds": n_seeds}
    write_manifest(d / "manifest.txt", manifest_entries("sweep", resolved))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "check-bounds": cmd_check_bounds,
            "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (TrainingError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
