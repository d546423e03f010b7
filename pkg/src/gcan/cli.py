"""Command-line entry point: ``gcan synth|train|eval|sweep|ablate|explain``.

Every subcommand reads an optional JSON run config with four sections::

    {"model": {...}, "generator": {...}, "harness": {...}, "paths": {...}}

Unknown keys anywhere are rejected, and command-line flags override the file.
Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .datamodel import DatasetError, load_jsonl, split, write_jsonl
from .explain import explain_story, render_report
from .harness import (
    ablation_suite,
    early_detection_sweep,
    evaluate,
    format_table,
    run_experiment,
    text_chart,
)
from .model import GcanConfig, Variant, fit, load_checkpoint, save_checkpoint
from .synthgen import GeneratorConfig, generate

logger = logging.getLogger("gcan")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class InvalidInput(Exception):
    """Bad flags, config, or input files; maps to exit code 2."""


@dataclass(frozen=True)
class HarnessOptions:
    repeats: int = 20
    base_seed: int = 0
    train_fraction: float = 0.7
    workers: int = 1
    n_values: tuple[int, ...] = (10, 20, 30, 40, 50)

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not self.n_values or min(self.n_values) < 1:
            raise ValueError("n_values must be a non-empty list of positive integers")


@dataclass(frozen=True)
class Paths:
    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: GcanConfig = field(default_factory=GcanConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    harness: HarnessOptions = field(default_factory=HarnessOptions)
    paths: Paths = field(default_factory=Paths)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValueError("run config must be a JSON object")
        unknown = sorted(set(data) - {"model", "generator", "harness", "paths"})
        if unknown:
            raise ValueError(f"unknown run config sections: {unknown}")
        for key, value in data.items():
            if not isinstance(value, dict):
                raise ValueError(f"run config section {key!r} must be an object")
        return cls(
            model=GcanConfig.from_dict(data.get("model", {})),
            generator=GeneratorConfig.from_dict(data.get("generator", {})),
            harness=_strict(HarnessOptions, data.get("harness", {}), "harness"),
            paths=_strict(Paths, data.get("paths", {}), "paths"),
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "generator": self.generator.to_dict(),
            "harness": {**self.harness.__dict__, "n_values": list(self.harness.n_values)},
            "paths": dict(self.paths.__dict__),
        }


def _strict(cls, data: dict, section: str):
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ValueError(f"unknown {section} config keys: {unknown}")
    return cls(**data)


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    try:
        return RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"invalid config {path}: {exc}") from None


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Fold command-line overrides into the run config; flags win."""
    model, gen, harness, paths = cfg.model, cfg.generator, cfg.harness, cfg.paths
    try:
        if getattr(args, "seed", None) is not None:
            model = replace(model, seed=args.seed)
            gen = replace(gen, seed=args.seed)
            harness = replace(harness, base_seed=args.seed)
        if getattr(args, "variant", None) is not None:
            model = replace(model, variant=Variant.parse(args.variant))
        if getattr(args, "epochs", None) is not None:
            model = replace(model, epochs=args.epochs)
        if getattr(args, "repeats", None) is not None:
            harness = replace(harness, repeats=args.repeats)
        if getattr(args, "n", None) is not None:
            values = _parse_n(args.n)
            if args.command == "sweep":
                harness = replace(harness, n_values=values)
            else:
                if len(values) != 1:
                    raise ValueError("--n takes a single value outside of sweep")
                model = replace(model, n=values[0])
        for name in ("data", "out", "checkpoint"):
            if getattr(args, name, None) is not None:
                paths = replace(paths, **{name: getattr(args, name)})
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None
    return RunConfig(model, gen, harness, paths)


def _parse_n(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"--n expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ValueError("--n needs at least one value")
    return values


# -- helpers ---------------------------------------------------------------


def _need(value, flag: str):
    if value is None:
        raise InvalidInput(f"missing required {flag} (flag or config paths section)")
    return value


def _load_data(path: str):
    try:
        return load_jsonl(path)
    except FileNotFoundError:
        raise InvalidInput(f"data file not found: {path}") from None
    except DatasetError as exc:
        raise InvalidInput(f"invalid dataset: {exc}") from None


def _load_model(path: str):
    if not Path(path).is_file():
        raise InvalidInput(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidInput(f"invalid checkpoint {path}: {exc}") from None


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: str | None, doc: dict) -> None:
    if path is None:
        return
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %s", target)


def _metrics_table(rows: list[tuple[str, dict]]) -> str:
    headers = ("split", "accuracy", "precision", "recall", "f1", "fake_f1")
    return format_table(
        headers, [(name, m["accuracy"], m["precision"], m["recall"], m["f1"], m["fake_f1"]) for name, m in rows]
    )


# -- subcommands -------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    out = _need(cfg.paths.out, "--out")
    dataset = generate(cfg.generator)
    write_jsonl(dataset, out)
    labels = dataset.labels()
    print(f"wrote {len(dataset)} stories to {out}: {int((labels == 1).sum())} fake, {int((labels == 0).sum())} true")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    data_path = _need(cfg.paths.data, "--data")
    ckpt = _need(cfg.paths.checkpoint, "--checkpoint")
    dataset = _load_data(data_path)
    seed, fraction = cfg.model.seed, cfg.harness.train_fraction
    train, test = split(dataset, fraction, seed)
    trained = fit(train, cfg.model)
    extra = {"split_seed": seed, "train_fraction": fraction, "data_sha256": _sha256(data_path)}
    save_checkpoint(trained, ckpt, extra)
    report = {
        "config": cfg.model.to_dict(),
        "split": {**extra, "train_size": len(train), "test_size": len(test)},
        "losses": trained.losses,
        "train": evaluate(trained, train).to_dict(),
    }
    if len(test):
        report["test"] = evaluate(trained, test).to_dict()
    _write_json(cfg.paths.out, report)
    print(f"trained {cfg.model.variant.label} on {len(train)} stories; checkpoint {ckpt}")
    print(_metrics_table([(k, report[k]) for k in ("train", "test") if k in report]))
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    data_path = _need(cfg.paths.data, "--data")
    trained, extra = _load_model(_need(cfg.paths.checkpoint, "--checkpoint"))
    dataset = _load_data(data_path)
    if "split_seed" in extra:
        if extra.get("data_sha256") not in (None, _sha256(data_path)):
            logger.warning("data file differs from the one used for training; split is not the training split")
        _, test = split(dataset, extra["train_fraction"], extra["split_seed"])
        scope = "held-out test split"
    else:
        test = dataset
        scope = "whole file"
    metrics = evaluate(trained, test).to_dict()
    _write_json(cfg.paths.out, {"scope": scope, "size": len(test), "metrics": metrics})
    print(f"evaluated on {scope} ({len(test)} stories)")
    print(_metrics_table([("test", metrics)]))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    dataset = _load_data(_need(cfg.paths.data, "--data"))
    h = cfg.harness
    rows = early_detection_sweep(dataset, cfg.model, h.n_values, h.repeats, h.base_seed, h.train_fraction, h.workers)
    _write_json(cfg.paths.out, {"rows": [{"n": r.n, "report": r.report.to_dict()} for r in rows]})
    print(format_table(
        ("n", "accuracy", "std", "precision", "recall", "f1"),
        [(r.n, r.accuracy, r.report.std["accuracy"], r.report.mean["precision"], r.report.mean["recall"],
          r.report.mean["f1"]) for r in rows],
    ))
    print(text_chart([(f"n={r.n}", r.accuracy) for r in rows]))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    dataset = _load_data(_need(cfg.paths.data, "--data"))
    h = cfg.harness
    rows = ablation_suite(dataset, cfg.model, h.repeats, h.base_seed, h.train_fraction, h.workers)
    _write_json(cfg.paths.out, {"rows": [{"variant": r.variant, "label": r.label, "report": r.report.to_dict()}
                                         for r in rows]})
    print(format_table(
        ("variant", "label", "accuracy", "std", "f1"),
        [(r.variant, r.label, r.accuracy, r.report.std["accuracy"], r.report.mean["f1"]) for r in rows],
    ))
    print(text_chart([(r.label, r.accuracy) for r in rows]))
    return EXIT_OK


def cmd_explain(cfg: RunConfig, args) -> int:
    trained, _ = _load_model(_need(cfg.paths.checkpoint, "--checkpoint"))
    dataset = _load_data(_need(cfg.paths.data, "--data"))
    story_id = _need(args.story_id, "--story-id")
    try:
        story = dataset.by_id(story_id)
    except KeyError:
        raise InvalidInput(f"story {story_id!r} not found in {cfg.paths.data}") from None
    try:
        report = explain_story(trained, story)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None
    if cfg.paths.out is not None:
        Path(cfg.paths.out).write_text(render_report(report, "json") + "\n", encoding="utf-8")
    print(render_report(report, args.format))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcan", description="Graph-aware co-attention fake news detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str, *flags: str):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON run config (model/generator/harness/paths)")
        p.add_argument("--out", help="output path")
        if "data" in flags:
            p.add_argument("--data", help="dataset JSONL")
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", help="model checkpoint path")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="seed for generation, splitting and initialisation")
        if "model" in flags:
            p.add_argument("--variant", help="FULL, NO_GRAPH, NO_COATT, NO_GRU, NO_GCN, NO_CNN, NO_SOURCE_AND_COATT")
            p.add_argument("--epochs", type=int, help="training epochs")
            p.add_argument("--n", help="retweeters observed (comma-separated list for sweep)")
        if "repeats" in flags:
            p.add_argument("--repeats", type=int, help="train/test repeats")
        return p

    command("synth", "generate a synthetic dataset", "seed")
    command("train", "train one model on a single split", "data", "checkpoint", "seed", "model")
    command("eval", "evaluate a checkpoint", "data", "checkpoint")
    command("sweep", "early-detection sweep over n", "data", "seed", "model", "repeats")
    command("ablate", "ablation suite over all variants", "data", "seed", "model", "repeats")
    p = command("explain", "attention report for one story", "data", "checkpoint")
    p.add_argument("--story-id", dest="story_id", help="story to explain")
    p.add_argument("--format", choices=("json", "text"), default="text", help="report format")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = apply_flags(load_run_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level guard
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
