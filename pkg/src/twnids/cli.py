"""Command-line front end: ``twnids <command> [options]``.

Every command writes its outputs under ``--out`` together with a
``manifest.json`` that holds the fully resolved configuration. Passing
that manifest back through ``--config`` replays the run; flags given on
the command line still win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from . import synth
from .errors import ConfigError, TWNidsError
from .evaluation import (
    confusion,
    evaluate,
    metric_report,
    render_confusion,
    report_rows,
    run_generalization,
    run_retraining,
    write_rows,
)
from .features import FeatureSet
from .ingest import DatasetSchema, class_table, iter_flows, load_dataset, write_records
from .model import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETAS,
    DEFAULT_EPS,
    DEFAULT_LR,
    DEFAULT_WEIGHT_DECAY,
    TWNET_NAMES,
    ModelSpec,
    TrainConfig,
    TWNet,
    dump_activation_curves,
    load_checkpoint,
    parse_hidden,
    save_checkpoint,
    split_indices,
    train,
    twnet_spec,
)
from .window import DEFAULT_WINDOW_SECONDS, WindowConfig, WindowEngine, read_meta, read_samples, write_samples

logger = logging.getLogger("twnids")

# Defaults chosen here because the method description leaves them open.
UNSPECIFIED_DEFAULTS = ("window_seconds", "batch_size", "betas", "eps", "seeds", "host_capacity")

CHECKPOINT = "checkpoint.npz"
MANIFEST = "manifest.json"


def _resolve_spec(name: str, hidden: str | None, n_classes: int) -> ModelSpec:
    if name in TWNET_NAMES:
        spec = twnet_spec(name, parse_hidden(hidden) if hidden is not None else None, n_classes)
    else:
        path = Path(name)
        if not path.is_file():
            raise ConfigError(f"--spec must be one of {', '.join(TWNET_NAMES)} or a JSON spec file, got {name!r}")
        spec = ModelSpec.from_file(path)
        if hidden is not None:
            spec = replace(spec, hidden=parse_hidden(hidden))
    if spec.n_classes != n_classes:
        spec = replace(spec, n_classes=n_classes)
    return spec


def _train_config(args, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        betas=tuple(args.betas),
        eps=args.eps,
        seed=args.seed if seed is None else seed,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, outputs: dict, extra: dict | None = None) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": config,
        "unspecified_defaults": [k for k in UNSPECIFIED_DEFAULTS if k in config],
        "outputs": outputs,
        **(extra or {}),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")


def _require(args, *names: str) -> None:
    for n in names:
        if getattr(args, n, None) in (None, ""):
            raise ConfigError(f"--{n.replace('_', '-')} is required")


def _load_features(path: str, classes=None) -> FeatureSet:
    if not Path(path).is_file():
        raise ConfigError(f"no such file: {path}")
    return FeatureSet.load(path, classes)


# ---- commands ---------------------------------------------------------------------


def cmd_window(args) -> int:
    _require(args, "input")
    out = _out_dir(args)
    schema = DatasetSchema.from_file(args.schema) if args.schema else DatasetSchema.canonical()
    engine = WindowEngine(WindowConfig(args.window_seconds, args.host_capacity))
    rejected: list = []
    if args.sort:
        records = load_dataset(args.input, schema, on_error=args.on_error, sort=True)
    else:
        # already ordered input is streamed, so memory is bounded by the host table
        records = iter_flows(args.input, schema, on_error=args.on_error, rejected=rejected)
    hosts: set[str] = set()
    classes: Counter = Counter()

    def tally(stream):
        for r in stream:
            hosts.add(r.src_ip)
            hosts.add(r.dst_ip)
            classes[r.label] += 1
            yield r

    try:
        n = write_samples(out / "samples.csv", engine.run(tally(records)), args.window_seconds)
    except Exception:
        (out / "samples.csv").unlink(missing_ok=True)
        raise
    if rejected:
        logger.warning("%s: skipped %d malformed row(s), first: %s", args.input, len(rejected), rejected[0])
    print(f"hosts: {len(hosts)}")
    print(f"samples: {n}")
    for label, count in sorted(classes.items()):
        print(f"  {label}: {count}")
    if engine.lossy_spills:
        print(f"warning: {engine.lossy_spills} host(s) with in-window flows were dropped by --host-capacity")
    extra = {"hosts": len(hosts), "samples": n, "spilled_hosts": engine.spilled}
    _write_manifest(out, args, {"samples": "samples.csv"}, extra)
    return 0


def cmd_featurize(args) -> int:
    _require(args, "input")
    out = _out_dir(args)
    frame = read_samples(args.input)
    meta = read_meta(args.input)
    data = FeatureSet.from_samples(frame, None, {"window_length": meta.get("window_length")})
    data.save(out / "features.csv")
    print(f"rows: {len(data)}")
    _write_manifest(out, args, {"features": "features.csv"})
    return 0


def cmd_train(args) -> int:
    _require(args, "input")
    out = _out_dir(args)
    data = _load_features(args.input)
    spec = _resolve_spec(args.spec, args.hidden, len(data.classes))
    tr, va = split_indices(len(data), args.seed)
    model = TWNet.build(spec, args.seed, data.features[tr])
    model, history = train(model, data.subset(tr), _train_config(args), data.subset(va))
    window_length = data.meta.get("window_length")
    save_checkpoint(model, out / CHECKPOINT, data.classes, window_length, args.seed)
    load_checkpoint(out / CHECKPOINT, data.classes)
    write_rows(out / "metrics.csv", [vars(h) for h in history])
    held_out = data.subset(va)
    cm = confusion(model.predict(held_out.features, held_out.protocol), held_out.labels, data.classes)
    (out / "confusion.txt").write_text(render_confusion(cm))
    outputs = {"checkpoint": CHECKPOINT, "metrics": "metrics.csv", "confusion": "confusion.txt"}
    if args.curves:
        dump_activation_curves(model, out / "activation_curves.csv", data.features[tr])
        outputs["curves"] = "activation_curves.csv"
    full = evaluate(model, data)
    print(f"model: {spec.label}  train accuracy (entire set): {full.accuracy:.4f}  held-out: {metric_report(cm).accuracy:.4f}")
    _write_manifest(
        out,
        args,
        outputs,
        {"spec": spec.to_dict(), "window_length": window_length},
    )
    return 0


def cmd_eval(args) -> int:
    _require(args, "input", "checkpoint")
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    data = _load_features(args.input, ckpt.classes)
    if ckpt.classes is not None:
        data = data.with_classes(ckpt.classes)
    report = evaluate(ckpt.model, data, {"checkpoint": str(args.checkpoint)})
    write_rows(out / "report.csv", report_rows(report))
    (out / "confusion.txt").write_text(render_confusion(report.confusion))
    print(render_confusion(report.confusion), end="")
    _write_manifest(out, args, {"report": "report.csv", "confusion": "confusion.txt"})
    return 0


def cmd_generalize(args) -> int:
    _require(args, "train", "test")
    out = _out_dir(args)
    first = _load_features(args.train)
    second = _load_features(args.test)
    spec = _resolve_spec(args.spec, args.hidden, len(first.classes))
    result = run_generalization(first, second, spec, args.seeds, _train_config(args), args.shared)
    rows = result.rows()
    write_rows(out / "report.csv", rows)
    write_rows(out / "summary.csv", result.summary())
    for r in rows:
        print(f"run {r['run']}: train {r['train_accuracy']:.4f}  test {r['test_accuracy']:.4f}")
    _write_manifest(out, args, {"report": "report.csv", "summary": "summary.csv"}, {"shared_classes": list(result.shared)})
    return 0


def cmd_retrain(args) -> int:
    _require(args, "first", "second")
    out = _out_dir(args)
    first = _load_features(args.first)
    second = _load_features(args.second)
    spec = _resolve_spec(args.spec, args.hidden, len(first.classes))
    result = run_retraining(
        first, second, spec, args.epochs_first, args.epochs_second, args.seeds, _train_config(args), args.shared
    )
    rows = result.rows()
    write_rows(out / "report.csv", rows)
    write_rows(out / "summary.csv", result.summary())
    for r in rows:
        print(f"run {r['run']}: first {r['phase1_first_accuracy']:.4f} -> {r['phase2_first_accuracy']:.4f}")
    _write_manifest(out, args, {"report": "report.csv", "summary": "summary.csv"}, {"shared_classes": list(result.shared)})
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    if args.profiles:
        profiles = synth.load_profiles(args.profiles)
    else:
        if args.preset not in synth.PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {', '.join(synth.PRESETS)}")
        profiles = synth.PRESETS[args.preset]()
    if args.scale != 1.0:
        profiles = synth.scaled(profiles, args.scale)
    synth.save_profiles(out / "profiles.ini", profiles)
    records = synth.generate(profiles, args.duration, args.seed)
    write_records(out / "flows.csv", records)
    outputs = {"flows": "flows.csv", "profiles": "profiles.ini"}
    print(f"flows: {len(records)}")
    if args.featurize:
        engine = WindowEngine(WindowConfig(args.window_seconds))
        samples = list(engine.run(records))
        write_samples(out / "samples.csv", samples, args.window_seconds)
        data = FeatureSet.from_samples(samples, None, {"window_length": args.window_seconds, "seed": args.seed})
        data.save(out / "features.csv")
        outputs.update(samples="samples.csv", features="features.csv")
    _write_manifest(out, args, outputs, {"classes": class_table(records)})
    return 0


# ---- parser -----------------------------------------------------------------------


def _training_flags(p: argparse.ArgumentParser, seeds: bool = False) -> None:
    p.add_argument("--spec", default="TWNet5", help="TWNet1..TWNet5 or a JSON spec file")
    p.add_argument("--hidden", default=None, help='hidden sizes, e.g. "32,16"; "0" for none')
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--weight-decay", type=float, default=DEFAULT_WEIGHT_DECAY)
    p.add_argument("--betas", type=float, nargs=2, default=list(DEFAULT_BETAS))
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--seed", type=int, default=0)
    if seeds:
        p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
        p.add_argument("--shared", nargs="+", default=None, help="attack classes to compare (default: present in both)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twnids", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--config", default=None, help="JSON config or a previous manifest.json")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("window", cmd_window, "window a flow CSV into per-flow host-count samples")
    p.add_argument("input", nargs="?")
    p.add_argument("--schema", default=None, help="INI schema mapping a raw CSV onto the canonical fields")
    p.add_argument("--window-seconds", type=float, default=DEFAULT_WINDOW_SECONDS)
    p.add_argument("--host-capacity", type=int, default=None)
    p.add_argument("--sort", action="store_true", help="sort by timestamp instead of rejecting unordered input")
    p.add_argument("--on-error", choices=("skip", "abort"), default="skip")

    p = command("featurize", cmd_featurize, "turn windowed samples into the 20-feature table")
    p.add_argument("input", nargs="?")

    p = command("train", cmd_train, "train a model on an 80/20 split of a feature file")
    p.add_argument("input", nargs="?")
    p.add_argument("--curves", action="store_true", help="also dump activation curves as CSV")
    _training_flags(p)

    p = command("eval", cmd_eval, "score a checkpoint on a feature file")
    p.add_argument("input", nargs="?")
    p.add_argument("--checkpoint", default=None)

    p = command("generalize", cmd_generalize, "train on one dataset, test on another")
    p.add_argument("--train", default=None)
    p.add_argument("--test", default=None)
    _training_flags(p, seeds=True)

    p = command("retrain", cmd_retrain, "train on a first dataset, then on a second, and re-score the first")
    p.add_argument("--first", default=None)
    p.add_argument("--second", default=None)
    p.add_argument("--epochs-first", type=int, default=8)
    p.add_argument("--epochs-second", type=int, default=4)
    _training_flags(p, seeds=True)

    p = command("synth", cmd_synth, "generate a labeled synthetic flow stream")
    p.add_argument("--preset", default="three_class", help=", ".join(synth.PRESETS))
    p.add_argument("--profiles", default=None, help="INI profile file (overrides --preset)")
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--scale", type=float, default=1.0, help="multiply every rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--featurize", action="store_true", help="also write samples.csv and features.csv")
    p.add_argument("--window-seconds", type=float, default=DEFAULT_WINDOW_SECONDS)
    return parser


def _load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    data.pop("command", None)
    data.pop("out", None)
    return data


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse with precedence defaults < --config file < explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError(f"{args.config}: unknown option {unknown[0]!r} for {args.command}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def _validate(args) -> None:
    for name in ("epochs", "epochs_first", "epochs_second"):
        if getattr(args, name, 0) < 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be >= 0")
    for name in ("batch_size", "lr", "window_seconds", "duration"):
        value = getattr(args, name, None)
        if value is not None and not value > 0 and not (name == "duration" and value == 0):
            raise ConfigError(f"--{name.replace('_', '-')} must be positive")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        _validate(args)
        return args.func(args)
    except (TWNidsError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
