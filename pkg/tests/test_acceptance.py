"""End-to-end acceptance criteria.

Each test appends one ``PASS``/``FAIL`` line to the acceptance summary that is
printed at the end of the pytest run.  The quantitative criteria train full
models on the default synthetic data: 700 stories split 500/200, 20 repeats
with seeds 0..19.  On one CPU core the whole module takes roughly 20 minutes.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gcan import numerics as nx
from gcan.datamodel import split, write_jsonl
from gcan.encoders import build_graph, windows
from gcan.explain import explain_story
from gcan.harness import ExperimentReport, ablation_suite, run_experiment, run_repeat
from gcan.model import Gcan, GcanConfig, Preprocessor, Variant, fit, save_checkpoint
from gcan.synthgen import GeneratorConfig, generate, oracle_baseline

import equivalence
from conftest import TINY

pytestmark = pytest.mark.slow

REPEATS = 20
ABLATION_REPEATS = 5
TRAIN_FRACTION = 5 / 7  # 700 stories -> 500 train / 200 test
GENERATOR = GeneratorConfig(n_stories=700)
MODEL = GcanConfig()
OUT = os.environ.get("GCAN_ACCEPTANCE_OUT")


def verdict(log, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    log.append(line)
    print(line)


def dump(name: str, doc) -> None:
    if OUT:
        Path(OUT).mkdir(parents=True, exist_ok=True)
        (Path(OUT) / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


@pytest.fixture(scope="module")
def dataset():
    return generate(GENERATOR)


@pytest.fixture(scope="module")
def full_runs(dataset):
    """Twenty FULL repeats at n=40, keeping each trained model and its test split."""
    runs = [run_repeat(dataset, MODEL, r, 0, TRAIN_FRACTION, return_model=True) for r in range(REPEATS)]
    report = ExperimentReport(MODEL.to_dict(), [r[0] for r in runs], 0, TRAIN_FRACTION)
    dump("full_n40", report.to_dict())
    return report, [(trained, test) for _, trained, test in runs]


@pytest.fixture(scope="module")
def oracle_accuracy(dataset):
    accs = []
    for r in range(REPEATS):
        train, test = split(dataset, TRAIN_FRACTION, r)
        accs.append(oracle_baseline(train, test, n=MODEL.n).accuracy)
    return float(np.mean(accs))


def test_gradient_check(acceptance_log):
    ds = generate(GeneratorConfig(n_stories=8, min_retweets=2, max_retweets=8, seed=3))
    cfg = GcanConfig(**TINY)
    pre = Preprocessor.fit(ds, cfg)
    batch = pre.encode(ds, cfg.lam)
    model = Gcan(cfg, len(pre.vocab))
    start = time.perf_counter()
    report = nx.grad_check(lambda: model.loss(batch), model.parameters(), step=(1e-4, 3e-5), order=4)
    elapsed = time.perf_counter() - start
    checked = {name for name, *_ in report.entries}
    ok = report.max_rel_error < 1e-4 and elapsed < 60 and checked == set(model.params)
    verdict(acceptance_log, "gradient check", ok,
            f"max rel error {report.max_rel_error:.2e} over {len(report.entries)} entries "
            f"in {len(checked)} tensors, {elapsed:.1f}s (need < 1e-4, < 60s)")
    assert ok, report.worst()


def test_overfit_sixteen_stories(acceptance_log):
    ds = generate(GeneratorConfig(n_stories=16, seed=11))
    trained = fit(ds, MODEL, epochs=200)
    acc = float(np.mean(trained.predict(ds).labels == ds.labels()))
    verdict(acceptance_log, "overfit 16 stories", acc == 1.0,
            f"train accuracy {acc:.4f} after 200 epochs, final loss {trained.losses[-1]:.2e}")
    assert acc == 1.0


def test_planted_signal_detection(acceptance_log, full_runs, oracle_accuracy):
    report, _ = full_runs
    acc = report.mean["accuracy"]
    ok = acc >= 0.90 and acc >= oracle_accuracy - 0.02
    verdict(acceptance_log, "planted-signal detection", ok,
            f"mean test accuracy {acc:.4f} (std {report.std['accuracy']:.4f}) over {REPEATS} repeats; "
            f"oracle {oracle_accuracy:.4f} (need >= 0.90 and >= oracle - 0.02)")
    assert ok


def test_ablation_ordering(acceptance_log, dataset, full_runs):
    report, _ = full_runs
    full = float(np.mean([r.test.accuracy for r in report.repeats[:ABLATION_REPEATS]]))
    variants = [v for v in Variant if v is not Variant.FULL]
    rows = ablation_suite(dataset, MODEL, ABLATION_REPEATS, 0, TRAIN_FRACTION, variants=variants)
    dump("ablation", {r.label: r.report.to_dict() for r in rows})
    best = max(rows, key=lambda r: r.accuracy)
    ok = full >= best.accuracy - 0.02
    table = ", ".join(f"{r.label} {r.accuracy:.4f}" for r in rows)
    verdict(acceptance_log, "ablation ordering", ok,
            f"GCAN {full:.4f} vs best variant {best.label} {best.accuracy:.4f} "
            f"({ABLATION_REPEATS} shared seeds; {table})")
    assert ok


def test_early_detection(acceptance_log, dataset, full_runs):
    report40, _ = full_runs
    report10 = run_experiment(dataset, replace(MODEL, n=10), REPEATS, 0, TRAIN_FRACTION)
    dump("full_n10", report10.to_dict())
    a10, a40 = report10.mean["accuracy"], report40.mean["accuracy"]
    ok = abs(a10 - a40) <= 0.10
    verdict(acceptance_log, "early detection", ok, f"accuracy n=10 {a10:.4f} vs n=40 {a40:.4f} (need gap <= 0.10)")
    assert ok


def _random_story_batch(rng, cfg):
    X = rng.uniform(size=(3, cfg.n, 10)) * (rng.random((3, cfg.n, 10)) < 0.8)
    tokens = rng.integers(0, 12, size=(3, cfg.m))
    tokens[:, 0] = np.maximum(tokens[:, 0], 2)
    return tokens, X


def _batch(cfg, tokens, X):
    from gcan.model import EncodedBatch

    return EncodedBatch(tuple(f"r{i}" for i in range(len(X))), tokens, X, build_graph(X),
                        np.swapaxes(windows(X, cfg.lam), -1, -2), np.zeros(len(X), dtype=np.int64))


def test_attention_invariants(acceptance_log):
    rng = np.random.default_rng(0)
    worst_sum = 0.0
    vectors = 0
    for i in range(1000):
        variant = list(Variant)[i % len(Variant)]
        n = int(rng.integers(3, 9))
        cfg = GcanConfig(m=int(rng.integers(2, 9)), n=n, d=int(rng.integers(2, 6)), g=int(rng.integers(2, 6)),
                         lam=int(rng.integers(1, 4)), k=int(rng.integers(1, 5)), hidden=4, seed=i, variant=variant)
        model = Gcan(cfg, 12)
        for p in model.parameters():
            p.value *= rng.uniform(0.5, 3.0)
        res = model.forward(_batch(cfg, *_random_story_batch(rng, cfg)))
        for a in res.attention.values():
            worst_sum = max(worst_sum, float(np.abs(a.value.sum(axis=-1) - 1.0).max()))
            vectors += a.value.shape[0]

    worst_perm = 0.0
    for i in range(100):
        cfg = GcanConfig(m=6, n=int(rng.integers(3, 12)), d=4, g=5, lam=2, k=3, hidden=4, seed=i)
        model = Gcan(cfg, 12)
        tokens, X = _random_story_batch(rng, cfg)
        perm = rng.permutation(cfg.n)
        a = model.forward(_batch(cfg, tokens, X)).features.value[..., : cfg.d + cfg.g]
        b = model.forward(_batch(cfg, tokens, X[:, perm])).features.value[..., : cfg.d + cfg.g]
        worst_perm = max(worst_perm, float(np.abs(a - b).max()))
    ok = worst_sum <= 1e-6 and worst_perm <= 1e-9
    verdict(acceptance_log, "attention invariants", ok,
            f"{vectors} attention vectors from 1000 passes, max |sum - 1| {worst_sum:.1e}; "
            f"graph branch permutation deviation {worst_perm:.1e}")
    assert ok


def test_explainability(acceptance_log, full_runs):
    _, models = full_runs
    hits = total = 0
    for trained, test in models:
        pred = trained.predict(test).labels
        evidence = set(GENERATOR.evidence_tokens)
        for story, p in zip(test, pred):
            if story.label != 1 or p != 1 or not evidence & set(story.tokens[: trained.config.m]):
                continue
            report = explain_story(trained, story, top_k=3)
            total += 1
            hits += any(w.token in evidence for w in report.top_words)
    rate = hits / total if total else 0.0
    ok = rate >= 0.80
    verdict(acceptance_log, "explainability", ok,
            f"evidence token in top-3 for {hits}/{total} = {rate:.3f} of correctly classified planted fake "
            f"test stories over {len(models)} models (need >= 0.80)")
    assert ok


def test_unit_oracle_equivalence(acceptance_log):
    worst = {name: equivalence.worst_over(check, 100, seed=42) for name, check in equivalence.CHECKS.items()}
    ok = all(v < 1e-9 for v in worst.values())
    verdict(acceptance_log, "unit oracle equivalence", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (100 instances each, need < 1e-9)")
    assert ok


def test_determinism(acceptance_log, tmp_path):
    ds = generate(replace(GENERATOR, n_stories=120))
    write_jsonl(ds, tmp_path / "a.jsonl")
    write_jsonl(generate(replace(GENERATOR, n_stories=120)), tmp_path / "b.jsonl")
    same_data = (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    cfg = replace(MODEL, epochs=3)
    train, _ = split(ds, TRAIN_FRACTION, 4)
    for name in ("a", "b"):
        save_checkpoint(fit(train, cfg), tmp_path / f"{name}.ckpt", {"split_seed": 4})
    same_ckpt = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    reports = [json.dumps(run_experiment(ds, cfg, 2, 7, TRAIN_FRACTION).to_dict(timings=False), sort_keys=True)
               for _ in range(2)]
    ok = same_data and same_ckpt and reports[0] == reports[1]
    verdict(acceptance_log, "determinism", ok,
            f"data identical {same_data}, checkpoints identical {same_ckpt}, reports identical {reports[0] == reports[1]}")
    assert ok
