"""Command-line front end: datagen -> train -> infer -> eval, plus sweep.

Every run reads one JSON or YAML config file with up to three sections::

    datagen:  {generator: monodomain, seed: 0, n_samples: 50, ...}
    train:    {preset: small, max_epochs: 2000, ...}     # TrainConfig keys
    search:   {space: {n_frequencies: [8, 16]}, trials: 20, epochs_per_trial: 500, seed: 0}

Unknown keys are rejected.  Each command prints the fully resolved config
(all defaults filled in) and writes it next to its outputs.

Exit codes: 0 success, 2 configuration, 3 data generation, 4 training
divergence, 5 checkpoint/dataset incompatibility.
"""

from __future__ import annotations

import argparse
import inspect
import json
import shutil
import sys
import warnings
from pathlib import Path

import yaml

from . import datagen
from .config import TrainConfig
from .errors import ConfigError, FormatError, IncompatibleError, LFLDError, TrainingDivergence
from .model import load_checkpoint, save_checkpoint, write_states_csv
from .training import evaluate, random_search, train

EXIT_OK, EXIT_CONFIG, EXIT_DATAGEN, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 0, 2, 3, 4, 5
SECTIONS = ("datagen", "train", "search")
SEARCH_DEFAULTS = {"space": {}, "trials": 20, "epochs_per_trial": 500, "seed": 0}


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -- config handling -------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise CLIError(f"cannot read config {p}: {exc}", EXIT_CONFIG) from None
    try:
        cfg = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise CLIError(f"cannot parse config {p}: {exc}", EXIT_CONFIG) from None
    cfg = cfg or {}
    if not isinstance(cfg, dict):
        raise CLIError("config must be a mapping", EXIT_CONFIG)
    unknown = sorted(set(cfg) - set(SECTIONS))
    if unknown:
        raise CLIError(f"unknown config sections {unknown}; allowed {list(SECTIONS)}", EXIT_CONFIG)
    return cfg


def resolve_datagen(section: dict | None) -> dict:
    section = dict(section or {})
    name = section.pop("generator", "monodomain")
    if name not in datagen.GENERATORS:
        raise CLIError(f"unknown generator {name!r}; choose from {sorted(datagen.GENERATORS)}", EXIT_CONFIG)
    sig = inspect.signature(datagen.GENERATORS[name])
    unknown = sorted(set(section) - set(sig.parameters))
    if unknown:
        raise CLIError(f"unknown datagen keys {unknown} for generator {name}", EXIT_CONFIG)
    resolved = {"generator": name}
    for k, prm in sig.parameters.items():
        resolved[k] = section.get(k, prm.default)
    return resolved


def resolve_train(section: dict | None, max_epochs: int | None = None) -> TrainConfig:
    try:
        cfg = TrainConfig.from_dict(section or {})
        if max_epochs is not None:
            cfg = cfg.replace(max_epochs=max_epochs)
    except (ConfigError, TypeError) as exc:
        raise CLIError(f"train config: {exc}", EXIT_CONFIG) from None
    return cfg


def resolve_search(section: dict | None) -> dict:
    section = dict(section or {})
    unknown = sorted(set(section) - set(SEARCH_DEFAULTS))
    if unknown:
        raise CLIError(f"unknown search keys {unknown}", EXIT_CONFIG)
    out = {**SEARCH_DEFAULTS, **section}
    space = out["space"]
    if not isinstance(space, dict) or not space or any(not isinstance(v, list) or not v for v in space.values()):
        raise CLIError("search.space must map hyperparameters to nonempty lists", EXIT_CONFIG)
    bad = sorted(set(space) - set(TrainConfig().to_dict()))
    if bad:
        raise CLIError(f"search.space names unknown training keys {bad}", EXIT_CONFIG)
    return out


def echo(resolved: dict, out_dir: Path | None) -> None:
    text = json.dumps(resolved, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        (out_dir / "resolved_config.json").write_text(text + "\n")


def prepare_output(path, force: bool) -> Path:
    out = Path(path)
    occupied = any(out.iterdir()) if out.is_dir() else out.exists()
    if occupied:
        if not force:
            raise CLIError(f"output {out} already exists; pass --force to overwrite", EXIT_CONFIG)
        shutil.rmtree(out) if out.is_dir() else out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def open_dataset(path):
    try:
        return datagen.read_dataset(path)
    except (FormatError, OSError) as exc:
        raise CLIError(f"dataset {path}: {exc}", EXIT_CONFIG) from None


def open_checkpoint(path):
    try:
        return load_checkpoint(path)
    except (FormatError, OSError) as exc:
        raise CLIError(f"checkpoint {path}: {exc}", EXIT_INCOMPATIBLE) from None


def check_compatible(model, dataset) -> None:
    pairs = [("input signal count", model.n_inputs, dataset.n_inputs),
             ("output channel count", model.n_outputs, dataset.n_outputs),
             ("spatial dimension", model.n_dims, dataset.n_dims),
             ("input channel names", model.input_channels, list(dataset.input_channels)),
             ("output channel names", model.output_channels, list(dataset.output_channels))]
    for what, a, b in pairs:
        if a != b:
            raise CLIError(f"incompatible {what}: checkpoint has {a}, dataset has {b}", EXIT_INCOMPATIBLE)


# -- commands ------------------------------------------------------------------------

def cmd_datagen(args) -> int:
    cfg = load_config(args.config)
    resolved = resolve_datagen(cfg.get("datagen"))
    out = prepare_output(args.out, args.force)
    kwargs = {k: v for k, v in resolved.items() if k != "generator"}
    try:
        ds = datagen.generate(resolved["generator"], **kwargs)
        datagen.write_dataset(ds, out)
        datagen.read_dataset(out)
    except (LFLDError, ValueError, FloatingPointError) as exc:
        raise CLIError(f"data generation failed: {exc}", EXIT_DATAGEN) from None
    echo({"datagen": resolved}, out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = resolve_train(cfg.get("train"), args.max_epochs)
    ds = open_dataset(args.data)
    out = prepare_output(args.out, args.force)
    echo({"train": tc.to_dict()}, out)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model, history = train(ds, tc)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except TrainingDivergence as exc:
        if exc.model is not None:
            save_checkpoint(exc.model, out / "checkpoint.lfld")
        if exc.history is not None:
            exc.history.to_csv(out / "history.csv")
        raise CLIError(f"training diverged at epoch {exc.epoch}: {exc}", EXIT_DIVERGED) from None
    except ConfigError as exc:
        raise CLIError(f"train config: {exc}", EXIT_CONFIG) from None
    save_checkpoint(model, out / "checkpoint.lfld")
    history.to_csv(out / "history.csv")
    print(f"epochs {len(history)}  final train loss {history.train_loss[-1]:.6e}  "
          f"best val loss {history.best_val:.6e} (epoch {history.best_epoch})")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = open_checkpoint(args.checkpoint)
    ds = open_dataset(args.data)
    check_compatible(model, ds)
    k = args.sample
    if not 0 <= k < len(ds):
        raise CLIError(f"sample index {k} out of range for {len(ds)} samples", EXIT_INCOMPATIBLE)
    if args.chunks < 1:
        raise CLIError("--chunks must be >= 1", EXIT_CONFIG)
    out = prepare_output(args.out, args.force)
    u = model.predict(ds.inputs[k], ds.times, ds.coords, chunks=args.chunks)
    datagen.write_field_blob(out / f"pred_{k}.bin", u)
    write_states_csv(out / f"states_{k}.csv", ds.times, model.export_states(ds.inputs[k], ds.times))
    echo({"infer": {"checkpoint": str(args.checkpoint), "data": str(args.data), "sample": k,
                    "chunks": args.chunks, "shape": list(u.shape)}}, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = open_checkpoint(args.checkpoint)
    ds = open_dataset(args.data)
    check_compatible(model, ds)
    out = prepare_output(args.out, args.force)
    res = evaluate(model, ds, error_fields=args.error_fields, chunks=args.chunks)
    metrics = {"aggregate_normalized_mse": res["aggregate"],
               "samples": [{"sample": i, "normalized_mse": v} for i, v in zip(res["indices"], res["per_sample"])]}
    if args.error_fields:
        for i, e in zip(res["indices"], res["error_fields"]):
            datagen.write_field_blob(out / f"error_{i}.bin", e)
    text = json.dumps(metrics, indent=2)
    (out / "metrics.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    search = resolve_search(cfg.get("search"))
    base = resolve_train(cfg.get("train"))
    ds = open_dataset(args.data)
    out = prepare_output(args.out, args.force)
    echo({"train": base.to_dict(), "search": search}, out)
    result = random_search(ds, search["space"], int(search["trials"]), int(search["epochs_per_trial"]),
                           int(search["seed"]), base)
    for k, hist in result.histories.items():
        hist.to_csv(out / f"history_trial{k}.csv")
    result.to_json(out / "ranking.json")
    for row in result.rows:
        tail = f"val {row['val_loss']:.4e}" if row["status"] == "ok" else f"{row['status']}: {row['reason']}"
        print(f"trial {row['trial']}: {json.dumps(row['config'], sort_keys=True)}  {tail}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfldnet", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON or YAML run config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite an existing output directory")

    sp = sub.add_parser("datagen", help="generate a trajectory dataset")
    common(sp)
    sp.set_defaults(fn=cmd_datagen)

    sp = sub.add_parser("train", help="train a model on a dataset")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--max-epochs", type=int, default=None)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("infer", help="predict one sample's fields and export its latent states")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--sample", type=int, default=0)
    sp.add_argument("--chunks", type=int, default=1)
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("eval", help="normalized MSE per sample, optional error fields")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--chunks", type=int, default=1)
    sp.add_argument("--error-fields", action="store_true")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sweep", help="seeded random hyperparameter search")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except IncompatibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
