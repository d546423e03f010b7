"""Repeated train/test experiments, early-detection sweeps and ablations."""

from __future__ import annotations

import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .datamodel import Dataset, split

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class Metrics:
    """Accuracy plus macro-averaged precision/recall/F1 over the two classes.

    ``confusion[t][p]`` counts stories with true label ``t`` predicted as ``p``.
    The fake-class (label 1) scores are kept alongside for reference.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[tuple[int, int], tuple[int, int]]
    fake_precision: float
    fake_recall: float
    fake_f1: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["confusion"] = [list(row) for row in self.confusion]
        return out


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _class_scores(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def compute_metrics(predicted, labels) -> Metrics:
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.shape != labels.shape or predicted.size == 0:
        raise ValueError("need equally sized, non-empty prediction and label arrays")
    conf = [[int(np.sum((labels == t) & (predicted == p))) for p in (0, 1)] for t in (0, 1)]
    per_class = []
    for c in (0, 1):
        tp = conf[c][c]
        fp = conf[1 - c][c]
        fn = conf[c][1 - c]
        per_class.append(_class_scores(tp, fp, fn))
    macro = [sum(s[i] for s in per_class) / 2 for i in range(3)]
    return Metrics(
        accuracy=(conf[0][0] + conf[1][1]) / labels.size,
        precision=macro[0],
        recall=macro[1],
        f1=macro[2],
        confusion=(tuple(conf[0]), tuple(conf[1])),
        fake_precision=per_class[1][0],
        fake_recall=per_class[1][1],
        fake_f1=per_class[1][2],
    )


def evaluate(trained, test: Dataset) -> Metrics:
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = trained.predict(test)
    return compute_metrics(pred.labels, test.labels())


# -- repeated experiments -----------------------------------------------------


@dataclass
class RepeatResult:
    repeat: int
    seed: int
    train_size: int
    test_size: int
    test: Metrics
    train: Metrics
    final_loss: float
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["test"] = self.test.to_dict()
        out["train"] = self.train.to_dict()
        return out


@dataclass
class ExperimentReport:
    config: dict
    repeats: list[RepeatResult]
    base_seed: int
    train_fraction: float
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def __post_init__(self):
        if not self.mean and self.repeats:
            for name in METRIC_NAMES:
                values = [getattr(r.test, name) for r in self.repeats]
                self.mean[name] = float(np.mean(values))
                self.std[name] = statistics.pstdev(values) if len(values) > 1 else 0.0
            self.mean["train_accuracy"] = float(np.mean([r.train.accuracy for r in self.repeats]))

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.repeats]

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "config": self.config,
            "base_seed": self.base_seed,
            "train_fraction": self.train_fraction,
            "seeds": self.seeds,
            "repeats": [r.to_dict() for r in self.repeats],
            "mean": self.mean,
            "std": self.std,
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        if not timings:
            out.pop("wall_clock_seconds")
            for r in out["repeats"]:
                r.pop("wall_clock_seconds")
        return out


def run_repeat(
    dataset: Dataset, config, repeat: int, base_seed: int, train_fraction: float, return_model: bool = False
):
    """One split/train/evaluate cycle; with ``return_model`` also returns ``(trained, test)``."""
    from .model import fit

    start = time.perf_counter()
    seed = base_seed + repeat
    train, test = split(dataset, train_fraction, seed)
    trained = fit(train, replace(config, seed=seed))
    result = RepeatResult(
        repeat=repeat,
        seed=seed,
        train_size=len(train),
        test_size=len(test),
        test=evaluate(trained, test),
        train=evaluate(trained, train),
        final_loss=trained.losses[-1] if trained.losses else float("nan"),
        wall_clock_seconds=time.perf_counter() - start,
    )
    logger.info(
        "repeat %d (seed %d, %s): test acc %.4f, train acc %.4f, %.1fs",
        repeat, seed, config.variant.value, result.test.accuracy, result.train.accuracy,
        result.wall_clock_seconds,
    )
    if return_model:
        return result, trained, test
    return result


def run_experiment(
    dataset: Dataset,
    config,
    repeats: int = 20,
    base_seed: int = 0,
    train_fraction: float = 0.7,
    workers: int = 1,
) -> ExperimentReport:
    """Train and evaluate ``repeats`` times on fresh random splits."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    start = time.perf_counter()
    args = [(dataset, config, r, base_seed, train_fraction) for r in range(repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_repeat, *zip(*args)))
    else:
        results = [run_repeat(*a) for a in args]
    results.sort(key=lambda r: r.repeat)
    return ExperimentReport(
        config=config.to_dict(),
        repeats=results,
        base_seed=base_seed,
        train_fraction=train_fraction,
        wall_clock_seconds=time.perf_counter() - start,
    )


@dataclass
class SweepRow:
    n: int
    report: ExperimentReport

    @property
    def accuracy(self) -> float:
        return self.report.mean["accuracy"]


def early_detection_sweep(
    dataset: Dataset,
    config,
    n_values: Sequence[int] = (10, 20, 30, 40, 50),
    repeats: int = 20,
    base_seed: int = 0,
    train_fraction: float = 0.7,
    workers: int = 1,
) -> list[SweepRow]:
    """Retrain at each observation budget ``n`` and record mean accuracy."""
    rows = []
    for n in n_values:
        cfg = replace(config, n=int(n))
        rows.append(SweepRow(int(n), run_experiment(dataset, cfg, repeats, base_seed, train_fraction, workers)))
    return rows


@dataclass
class AblationRow:
    variant: str
    label: str
    report: ExperimentReport

    @property
    def accuracy(self) -> float:
        return self.report.mean["accuracy"]


def ablation_suite(
    dataset: Dataset,
    config,
    repeats: int = 20,
    base_seed: int = 0,
    train_fraction: float = 0.7,
    workers: int = 1,
    variants: Sequence | None = None,
) -> list[AblationRow]:
    from .model import Variant

    rows = []
    for v in variants or list(Variant):
        v = Variant.parse(v) if isinstance(v, str) else v
        report = run_experiment(dataset, replace(config, variant=v), repeats, base_seed, train_fraction, workers)
        rows.append(AblationRow(v.value, v.label, report))
    return rows


# -- plain-text rendering -----------------------------------------------------


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in headers]] + [
        [f"{c:.4f}" if isinstance(c, float) else str(c) for c in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def text_chart(points: Sequence[tuple[object, float]], width: int = 40) -> str:
    """Horizontal bar chart for values in [0, 1]."""
    label_w = max(len(str(k)) for k, _ in points)
    return "\n".join(
        f"{str(k).rjust(label_w)} | {'#' * int(round(max(0.0, min(1.0, v)) * width)):<{width}} {v:.4f}"
        for k, v in points
    )
