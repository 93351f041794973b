"""Command-line entry point: ``mixcast <command> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import dataset as ds
from ._io import atomic_write_text, derive_seed
from .evalcast import (clusters_csv, evaluate, forecast_batch, forecast_csv, metrics_csv,
                       robustness_sweep)
from .trainer import (GATE, CheckpointError, DivergenceError, TrainConfig, checkpoint_dict,
                      checkpoint_load, infer_marginals, log_to_csv, train)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class UsageError(Exception):
    pass


# flag name -> config key; every key has a default below or in TrainConfig
TRAIN_FLAGS = {
    "k": "k", "gamma": "gamma", "sigma": "sigma", "hidden_dim": "hidden_dim",
    "window": "window", "horizon": "horizon", "epochs": "epochs",
    "batch_size": "batch_size", "lr": "learning_rate", "seed": "seed",
    "temperature_start": "temperature_start", "temperature_end": "temperature_end",
    "patience": "patience", "samples_S": "samples",
}
EXTRA_DEFAULTS = {
    "data": None, "out": None, "delta": 0.0, "model": None, "d": 2, "w": 30, "n": 500,
    "normalize": True, "split_seed": 0, "deltas": [0.0, 0.2, 0.4, 0.6], "seeds": [0],
    "dataset_name": "data", "cell": "gru", "infer_input": "aligned",
}
SYNTH_DEFAULTS = {"sigma": 100.0, "gamma": 0.01, "k": None}  # k has no default here
FLAG_OF = {v: "--" + k.replace("_", "-") for k, v in TRAIN_FLAGS.items()}


def _gamma(text):
    if text == GATE:
        return GATE
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1] or '{GATE}'") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("gamma must lie in [0, 1]")
    return value


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_train_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--k", type=int, default=S, help="number of clusters")
    p.add_argument("--gamma", type=_gamma, default=S, help="mixing weight in [0, 1] or 'gate'")
    p.add_argument("--sigma", type=float, default=S, help="emission precision")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--temperature-start", dest="temperature_start", type=float, default=S)
    p.add_argument("--temperature-end", dest="temperature_end", type=float, default=S)
    p.add_argument("--patience", type=int, default=S)
    p.add_argument("--samples-S", dest="samples_S", type=int, default=S)


def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="mixcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=S, help="JSON or TOML file of defaults")
        p.add_argument("--data", default=S, help="long-format CSV")
        p.add_argument("--out", default=S, help="output path or directory")

    p = sub.add_parser("synthesize", help="draw a synthetic dataset")
    _add_train_flags(p)
    common(p)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--w", type=int, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--delta", type=float, default=S)

    p = sub.add_parser("train", help="fit a model")
    _add_train_flags(p)
    common(p)
    p.add_argument("--delta", type=float, default=S, help="corrupt train/valid before fitting")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=S)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=S)

    for name, text in (("forecast", "forecast horizons of the test split"),
                       ("evaluate", "score the test split"),
                       ("export-clusters", "export per-step cluster memberships")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--model", default=S, help="checkpoint written by train")
        p.add_argument("--horizon", type=int, default=S)
        p.add_argument("--window", type=int, default=S)
        p.add_argument("--delta", type=float, default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--dataset-name", dest="dataset_name", default=S)

    p = sub.add_parser("sweep", help="retrain and score across corruption levels")
    _add_train_flags(p)
    common(p)
    p.add_argument("--delta", dest="deltas", type=_float_list, default=S,
                   help="comma-separated corruption levels")
    p.add_argument("--seeds", type=_int_list, default=S)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=S)
    p.add_argument("--dataset-name", dest="dataset_name", default=S)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=S)
    return parser


# ---------------------------------------------------------------------------
# Option resolution
# ---------------------------------------------------------------------------

def load_config_file(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    try:
        if path.endswith(".toml"):
            obj = tomllib.loads(raw.decode("utf-8"))
        else:
            obj = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise UsageError(f"--config: cannot parse {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError("--config: top level must be a table/object")
    return obj


def resolve(args, command):
    """Merge defaults < config file < flags into one option dict."""
    train_keys = {f.name for f in fields(TrainConfig)}
    opts = {f.name: f.default for f in fields(TrainConfig)}
    opts.update(EXTRA_DEFAULTS)
    if command == "synthesize":
        opts.update(SYNTH_DEFAULTS)
    flags = dict(vars(args))
    flags.pop("command", None)
    config_path = flags.pop("config", None)
    given = set()
    if config_path is not None:
        file_opts = load_config_file(config_path)
        alias = dict(TRAIN_FLAGS)
        for key, value in file_opts.items():
            name = alias.get(key, key).replace("-", "_")
            name = alias.get(name, name)
            if name not in opts:
                raise UsageError(f"--config: unknown key {key!r}")
            opts[name] = value
            given.add(name)
    for key, value in flags.items():
        opts[TRAIN_FLAGS.get(key, key)] = value
        given.add(TRAIN_FLAGS.get(key, key))
    opts["_train_keys"] = train_keys
    opts["_given"] = given
    return opts


def train_config(opts):
    values = {k: opts[k] for k in opts["_train_keys"]}
    if isinstance(values["gamma"], str) and values["gamma"] != GATE:
        try:
            values["gamma"] = float(values["gamma"])
        except ValueError:
            raise UsageError("--gamma: expected a number in [0, 1] or 'gate'") from None
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        field = msg.split()[0] if msg else ""
        raise UsageError(f"{FLAG_OF.get(field, '--' + field)}: {msg}") from None


def _need(opts, key):
    if opts.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return opts[key]


def _write(path, text):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    atomic_write_text(path, text)


# ---------------------------------------------------------------------------
# Data preparation shared by commands
# ---------------------------------------------------------------------------

def _load_cropped(opts, length):
    samples = ds.load_long_csv(_need(opts, "data"))
    short = [s.id for s in samples if s.w < length]
    if short:
        raise ds.DatasetError(f"{len(short)} samples shorter than window + horizon = {length} "
                              f"(first: {short[0]!r})")
    return [s if s.w == length else s.window(0, length) for s in samples]


def _prepare(opts, config):
    samples = _load_cropped(opts, config.window + config.horizon)
    train_s, valid_s, test_s = ds.split(samples, ds.SplitSpec(seed=opts["split_seed"]))
    if not train_s or not valid_s:
        raise ds.DatasetError("need at least one train and one valid sample; add more data")
    stats = ds.NormStats.from_samples(train_s) if opts["normalize"] else None
    if stats is not None:
        train_s, valid_s, test_s = (ds.normalize(x, stats) for x in (train_s, valid_s, test_s))
    return (train_s, valid_s, test_s), stats


def _load_model(opts):
    params, extra = checkpoint_load(_need(opts, "model"))
    return params, extra


def _test_split(opts, params, extra):
    cfg = params.config
    window = opts["window"] if "window" in opts["_given"] else cfg.window
    horizon = opts["horizon"] if "horizon" in opts["_given"] else cfg.horizon
    if window < 1:
        raise UsageError("--window must be >= 1")
    if horizon < 1:
        raise UsageError("--horizon must be >= 1")
    samples = _load_cropped(opts, window + horizon)
    _, _, test_s = ds.split(samples, ds.SplitSpec(seed=extra.get("split_seed", 0)))
    if not test_s:
        raise ds.EmptyDatasetError("test split is empty")
    stats = ds.NormStats.from_dict(extra["norm"]) if extra.get("norm") else None
    if stats is not None:
        test_s = ds.normalize(test_s, stats)
    return test_s, ds.ForecastTask(window, horizon), stats


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synthesize(opts):
    _need(opts, "k")
    if not opts["sigma"] > 0:
        raise UsageError("--sigma must be positive")
    gamma = opts["gamma"]
    if gamma == GATE:
        raise UsageError("--gamma: synthesize needs a number in [0, 1]")
    for key in ("k", "d", "w", "n"):
        if int(opts[key]) < 1:
            raise UsageError(f"--{key} must be >= 1")
    if not 0.0 <= opts["delta"] <= 1.0:
        raise UsageError("--delta must lie in [0, 1]")
    samples, truth = ds.synthesize(int(opts["k"]), int(opts["d"]), int(opts["w"]), int(opts["n"]),
                                   float(opts["sigma"]), float(gamma),
                                   derive_seed(opts["seed"], "synthesize"), delta=opts["delta"])
    out = opts["out"] or "."
    os.makedirs(out, exist_ok=True)
    tmp = os.path.join(out, ".data.csv.partial")
    ds.write_long_csv(samples, tmp)
    os.replace(tmp, os.path.join(out, "data.csv"))
    _write(os.path.join(out, "truth.json"), json.dumps(truth.to_json()))
    return 0


def cmd_train(opts):
    config = train_config(opts)
    if not 0.0 <= opts["delta"] < 1.0:
        raise UsageError("--delta must lie in [0, 1)")
    (train_s, valid_s, _), stats = _prepare(opts, config)
    if opts["delta"] > 0:
        train_s = ds.corrupt_all(train_s, opts["delta"], derive_seed(config.seed, "corrupt-train"))
        valid_s = ds.corrupt_all(valid_s, opts["delta"], derive_seed(config.seed, "corrupt-valid"))
    params, log = train(train_s, valid_s, config,
                        callback=lambda e: print(f"epoch {e.epoch} train {e.train_neg_elbo:.4f} "
                                                 f"valid {e.valid_neg_elbo:.4f}", file=sys.stderr))
    out = opts["out"] or "."
    os.makedirs(out, exist_ok=True)
    extra = {"split_seed": opts["split_seed"], "delta": opts["delta"],
             "norm": stats.to_dict() if stats else None}
    _write(os.path.join(out, "checkpoint.json"), json.dumps(checkpoint_dict(params, extra)))
    _write(os.path.join(out, "train_log.csv"), log_to_csv(log))
    return 0


def cmd_forecast(opts):
    params, extra = _load_model(opts)
    test_s, task, stats = _test_split(opts, params, extra)
    prefixes = [task.split_sample(s)[0] for s in test_s]
    preds, _ = forecast_batch(params, prefixes, task.horizon)
    if stats is not None:
        preds = np.stack([ds.denormalize_values(p, stats) for p in preds])
    starts = [s.ref_times[task.window] for s in test_s]
    text = forecast_csv([s.id for s in test_s], preds,
                        [int(t) if float(t).is_integer() else t for t in starts])
    _write(opts["out"] or "forecast.csv", text)
    return 0


def cmd_evaluate(opts):
    params, extra = _load_model(opts)
    test_s, task, _ = _test_split(opts, params, extra)
    reports = evaluate(params, test_s, task)
    delta = opts["delta"] if "delta" in opts["_given"] else extra.get("delta", 0.0)
    rows = [{"dataset": opts["dataset_name"], "model": name, "delta": delta,
             "seed": params.config.seed, "rmse": rep.rmse, "mae": rep.mae,
             "n_scored": rep.n_scored}
            for name, rep in (("mixcast", reports["model"]), ("mean", reports["mean"]),
                              ("locf", reports["locf"]))]
    _write(opts["out"] or "metrics.csv", metrics_csv(rows))
    return 0


def cmd_sweep(opts):
    config = train_config(opts)
    if any(not 0.0 <= d < 1.0 for d in opts["deltas"]):
        raise UsageError("--delta values must lie in [0, 1)")
    splits, _ = _prepare(opts, config)
    rows = robustness_sweep(config, splits, opts["deltas"], opts["seeds"],
                            ds.ForecastTask(config.window, config.horizon),
                            dataset=opts["dataset_name"], with_baseline=True)
    _write(opts["out"] or "sweep.csv", metrics_csv(rows))
    return 0


def cmd_export_clusters(opts):
    params, extra = _load_model(opts)
    samples = ds.load_long_csv(_need(opts, "data"))
    w = params.config.window + params.config.horizon
    samples = [s.window(0, w) if s.w > w else s for s in samples]
    if extra.get("norm"):
        samples = ds.normalize(samples, ds.NormStats.from_dict(extra["norm"]))
    by_len = {}
    for s in samples:
        by_len.setdefault(s.w, []).append(s)
    ids, margs = [], []
    for group in by_len.values():
        M, _ = infer_marginals(params, group)
        ids.extend(s.id for s in group)
        margs.extend(M)
    _write(opts["out"] or "clusters.csv", clusters_csv(ids, margs))
    means = {"means": params.gen.mu.data.tolist(), "basis_probs": params.basis_probs.tolist()}
    base = os.path.splitext(opts["out"] or "clusters.csv")[0]
    _write(base + ".means.json", json.dumps(means))
    return 0


COMMANDS = {
    "synthesize": cmd_synthesize,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "export-clusters": cmd_export_clusters,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve(args, args.command)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"mixcast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ds.DatasetError, CheckpointError, DivergenceError, ValueError) as exc:
        print(f"mixcast {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
