"""Graph-aware co-attention fake news detection in plain numpy."""

from .datamodel import Dataset, Story, UserRecord, load_jsonl, split, write_jsonl
from .explain import AttentionReport, explain_story, render_report
from .harness import Metrics, ablation_suite, compute_metrics, early_detection_sweep, evaluate, run_experiment
from .model import Gcan, GcanConfig, TrainedModel, Variant, fit, load_checkpoint, save_checkpoint
from .synthgen import GeneratorConfig, generate, oracle_baseline

__all__ = [
    "AttentionReport", "Dataset", "Gcan", "GcanConfig", "GeneratorConfig", "Metrics", "Story",
    "TrainedModel", "UserRecord", "Variant", "ablation_suite", "compute_metrics", "early_detection_sweep",
    "evaluate", "explain_story", "fit", "generate", "load_checkpoint", "load_jsonl", "oracle_baseline",
    "render_report", "run_experiment", "save_checkpoint", "split", "write_jsonl",
]
