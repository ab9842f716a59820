"""Command-line entry point: ``mvkt <subcommand> ...``.

Configuration precedence is flag > JSON config file > built-in default. The
config file is a flat JSON object whose keys are the synthetic-data,
backbone and training settings listed in ``CONFIG_KEYS``. Each subcommand
writes the effective config next to its outputs.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import types
import typing
from dataclasses import MISSING, dataclass, fields
from pathlib import Path

import numpy as np

from . import diff, evaluation, gradcheck, signal, synth, trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .models import BackboneConfig
from .synth import SynthConfig
from .trainer import TrainConfig

logger = logging.getLogger("mvkt")

BACKBONE_KEYS = ("stem_channels", "n_blocks", "proj_dim")
PATH_KEYS = ("data", "teacher", "ckpt", "out", "config")


class ConfigError(ValueError):
    pass


def _field_types(cls) -> dict[str, tuple[type, object]]:
    hints = typing.get_type_hints(cls)
    out = {}
    for f in fields(cls):
        default = f.default if f.default is not MISSING else f.default_factory()
        out[f.name] = (hints[f.name], default)
    return out


def _config_schema() -> dict[str, tuple[type, object]]:
    schema = {}
    schema.update(_field_types(SynthConfig))
    schema.update({k: v for k, v in _field_types(BackboneConfig).items() if k in BACKBONE_KEYS})
    schema.update(_field_types(TrainConfig))
    return schema


CONFIG_KEYS = _config_schema()


def _check_type(key: str, value, typ):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        errors = []
        for arg in typing.get_args(typ):
            if arg is type(None):
                if value is None:
                    return None
                continue
            try:
                return _check_type(key, value, arg)
            except ConfigError as e:
                errors.append(e)
        raise ConfigError(f"{key}: expected {typ}, got {value!r}")
    if origin is list:
        (item,) = typing.get_args(typ)
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_check_type(f"{key}[{i}]", v, item) for i, v in enumerate(value)]
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected str, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported type {typ}")


@dataclass
class RunConfig:
    command: str
    values: dict
    paths: dict

    @property
    def synth(self) -> SynthConfig:
        return SynthConfig(**{k: self.values[k] for k in _field_types(SynthConfig)})

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(**{k: self.values[k] for k in BACKBONE_KEYS})

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in _field_types(TrainConfig)})

    def effective(self) -> dict:
        return {"command": self.command, "paths": self.paths, "config": self.values}

    def dumps(self) -> str:
        return json.dumps(self.effective(), indent=2, sort_keys=True) + "\n"


def parse_config(path, overrides: dict | None = None, command: str = "", paths: dict | None = None) -> RunConfig:
    """Merge defaults, the JSON file at ``path`` (optional) and ``overrides``."""
    values = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            loaded = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON in {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        for key, value in loaded.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _check_type(key, value, CONFIG_KEYS[key][0])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _check_type(key, value, CONFIG_KEYS[key][0])
    run = RunConfig(command, values, dict(paths or {}))
    try:
        run.synth, run.backbone, run.train  # noqa: B018 - validate
        run.synth.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return run


# -- argument parsing --------------------------------------------------------


def _flag_type(typ):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        return str
    if origin is list:
        return lambda s: [float(v) for v in s.split(",")]
    return typ


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("config overrides")
    for key, (typ, _) in CONFIG_KEYS.items():
        if key in skip:
            continue
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", type=_flag_type(typ), default=None)


def parse_leads(text: str) -> list[int]:
    """``0..11`` (inclusive range) or ``0,3,5``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvkt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON config file")
        return p

    p = cmd("synth", "generate a synthetic ECGPACK")
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = cmd("train-teacher", "stage 1: train the 12-lead teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = cmd("distill", "stage 2: distill a single-lead student")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--lead", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p, skip=("student_lead",))

    p = cmd("eval", "evaluate a checkpoint on one fold")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fold", type=int, default=trainer.TEST_FOLD)
    p.add_argument("--lead", type=int, default=None)
    p.add_argument("--out", required=True)

    p = cmd("lead-sweep", "baseline vs MVKT student for each lead")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--leads", type=parse_leads, default=list(range(12)))
    p.add_argument("--out", required=True)
    _add_config_flags(p, skip=("student_lead",))

    p = cmd("ablation", "BCE / +MKD / +CLT / +MKD+CLT grid")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--lead", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p, skip=("student_lead",))

    sub.add_parser("gradcheck", help="finite-difference check of every op and loss")

    p = cmd("export-embeddings", "write projection embeddings as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lead", type=int, default=None)
    p.add_argument("--out", required=True)
    return parser


def run_config_from_args(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    if args.command in ("distill", "ablation") and args.lead is not None:
        overrides["student_lead"] = args.lead
    paths = {k: getattr(args, k) for k in PATH_KEYS if getattr(args, k, None) is not None}
    for key in ("data", "teacher", "ckpt"):
        if key in paths and not Path(paths[key]).exists():
            raise ConfigError(f"{key}: path does not exist: {paths[key]}")
    return parse_config(getattr(args, "config", None), overrides, args.command, paths)


# -- subcommands -------------------------------------------------------------


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _jsonl_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", encoding="utf-8")

    def log(record):
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        logger.info(json.dumps(record, sort_keys=True))

    return fh, log


def _cmd_synth(run: RunConfig) -> None:
    out = Path(run.paths["out"])
    manifest, records = synth.synth_generate(run.synth)
    signal.save_pack(manifest, records, out)
    (out / "effective_config.json").write_text(run.dumps(), encoding="utf-8")


def _train(run: RunConfig, fn) -> None:
    out = Path(run.paths["out"])
    dataset = signal.load_pack(run.paths["data"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _sidecar(out, ".config.json").write_text(run.dumps(), encoding="utf-8")
    fh, log = _jsonl_logger(_sidecar(out, ".log.jsonl"))
    with fh:
        ckpt = fn(dataset, log)
    save_checkpoint(ckpt, out)


def _cmd_train_teacher(run: RunConfig) -> None:
    _train(run, lambda ds, log: trainer.train_teacher(ds, run.train, run.backbone, log=log))


def _cmd_distill(run: RunConfig) -> None:
    teacher = load_checkpoint(run.paths["teacher"])
    _train(run, lambda ds, log: trainer.distill_student(ds, teacher, run.train, run.backbone, log=log))


def _cmd_eval(run: RunConfig, args) -> None:
    ckpt = load_checkpoint(run.paths["ckpt"])
    dataset = signal.load_pack(run.paths["data"])
    report = evaluation.evaluate(ckpt, dataset, args.fold, args.lead)
    out = Path(run.paths["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.dumps(), encoding="utf-8")
    _sidecar(out, ".config.json").write_text(run.dumps(), encoding="utf-8")


def _experiment(run: RunConfig, fn) -> None:
    out = Path(run.paths["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(run.dumps(), encoding="utf-8")
    teacher = load_checkpoint(run.paths["teacher"])
    dataset = signal.load_pack(run.paths["data"])
    fh, log = _jsonl_logger(out / "train_log.jsonl")
    with fh:
        fn(dataset, teacher, log)


def _cmd_lead_sweep(run: RunConfig, args) -> None:
    if not args.leads:
        raise ConfigError("--leads is empty")
    run.paths["leads"] = args.leads
    _experiment(run, lambda ds, t, log: evaluation.lead_sweep(
        ds, t, run.train, run.backbone, args.leads, out_dir=run.paths["out"], log=log))


def _cmd_ablation(run: RunConfig) -> None:
    _experiment(run, lambda ds, t, log: evaluation.ablation_grid(
        ds, t, run.train, run.backbone, out_dir=run.paths["out"], log=log))


def _cmd_export_embeddings(run: RunConfig, args) -> None:
    ckpt = load_checkpoint(run.paths["ckpt"])
    dataset = signal.load_pack(run.paths["data"])
    lead = None
    if ckpt.backbone.in_leads == 1:
        lead = args.lead if args.lead is not None else ckpt.meta.get("lead")
        if lead is None:
            raise ConfigError("--lead is required for a single-lead checkpoint")
    idx = list(range(len(dataset.records)))
    _, emb = trainer.predict(ckpt.model, trainer._inputs(dataset, idx, lead), with_embeddings=True)
    out = Path(run.paths["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "fold"] + [f"e{j}" for j in range(emb.shape[1])])
        for entry, row in zip(dataset.manifest.records, emb):
            w.writerow([entry.id, entry.fold] + [repr(float(v)) for v in row])
    _sidecar(out, ".config.json").write_text(run.dumps(), encoding="utf-8")


def dispatch(run: RunConfig, args=None) -> int:
    diff.configure_determinism()
    try:
        if run.command == "synth":
            _cmd_synth(run)
        elif run.command == "train-teacher":
            _cmd_train_teacher(run)
        elif run.command == "distill":
            _cmd_distill(run)
        elif run.command == "eval":
            _cmd_eval(run, args)
        elif run.command == "lead-sweep":
            _cmd_lead_sweep(run, args)
        elif run.command == "ablation":
            _cmd_ablation(run)
        elif run.command == "export-embeddings":
            _cmd_export_embeddings(run, args)
        else:
            raise ConfigError(f"unknown command {run.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level diagnostic
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "gradcheck":
        diff.configure_determinism()
        return gradcheck.main()
    try:
        run = run_config_from_args(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    print(run.dumps(), end="")
    return dispatch(run, args)


if __name__ == "__main__":
    sys.exit(main())
