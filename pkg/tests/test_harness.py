import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcan.harness import (
    ablation_suite,
    compute_metrics,
    early_detection_sweep,
    format_table,
    run_experiment,
    text_chart,
)
from gcan.model import Variant

labels_and_preds = st.integers(1, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n))
)


def direct_counts(pred, true):
    out = {}
    for c in (0, 1):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1)
    return out


class TestMetrics:
    def test_hand_worked_example(self):
        m = compute_metrics([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert m.confusion == ((1, 1), (1, 2))
        assert m.accuracy == pytest.approx(0.6)
        assert m.fake_precision == pytest.approx(2 / 3) and m.fake_recall == pytest.approx(2 / 3)
        assert m.precision == pytest.approx((2 / 3 + 1 / 2) / 2)

    @given(labels_and_preds)
    def test_matches_direct_count_oracle(self, pair):
        pred, true = pair
        m = compute_metrics(pred, true)
        ref = direct_counts(pred, true)
        assert m.accuracy == pytest.approx(np.mean(np.array(pred) == np.array(true)), abs=1e-12)
        assert m.precision == pytest.approx((ref[0][0] + ref[1][0]) / 2, abs=1e-12)
        assert m.recall == pytest.approx((ref[0][1] + ref[1][1]) / 2, abs=1e-12)
        assert m.f1 == pytest.approx((ref[0][2] + ref[1][2]) / 2, abs=1e-12)
        assert m.fake_f1 == pytest.approx(ref[1][2], abs=1e-12)
        assert sum(map(sum, m.confusion)) == len(pred)

    def test_single_class_does_not_divide_by_zero(self):
        m = compute_metrics([1, 1, 1], [1, 1, 1])
        assert m.accuracy == 1.0 and m.fake_f1 == 1.0
        assert m.precision == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics([1, 0], [1])


class TestExperiments:
    def test_aggregates_and_determinism(self, small_dataset, tiny_config):
        a = run_experiment(small_dataset, tiny_config, repeats=3, base_seed=5)
        b = run_experiment(small_dataset, tiny_config, repeats=3, base_seed=5)
        assert a.seeds == [5, 6, 7]
        assert a.to_dict(timings=False) == b.to_dict(timings=False)
        for name in ("accuracy", "precision", "recall", "f1"):
            assert a.mean[name] == pytest.approx(np.mean([getattr(r.test, name) for r in a.repeats]), abs=1e-12)
        assert a.repeats[0].train_size + a.repeats[0].test_size == len(small_dataset)
        json.dumps(a.to_dict())

    def test_parallel_matches_serial(self, small_dataset, tiny_config):
        serial = run_experiment(small_dataset, tiny_config, repeats=2)
        parallel = run_experiment(small_dataset, tiny_config, repeats=2, workers=2)
        assert serial.to_dict(timings=False) == parallel.to_dict(timings=False)

    def test_invalid_repeats(self, small_dataset, tiny_config):
        with pytest.raises(ValueError):
            run_experiment(small_dataset, tiny_config, repeats=0)

    def test_sweep_rows_and_resampling(self, small_dataset, tiny_config):
        rows = early_detection_sweep(small_dataset, tiny_config, n_values=(3, 50), repeats=1)
        assert [r.n for r in rows] == [3, 50]
        assert rows[1].report.config["n"] == 50  # beyond every cascade: cyclic resampling path

    def test_ablation_has_every_variant(self, small_dataset, tiny_config):
        rows = ablation_suite(small_dataset, replace(tiny_config, epochs=1), repeats=1)
        assert [r.label for r in rows] == ["GCAN", "GCAN-G", "-A", "-R", "-G", "-C", "-S-A"]
        assert {r.variant for r in rows} == {v.value for v in Variant}


@pytest.mark.slow
def test_users_only_variant_is_weak_on_text_only_signal():
    from gcan.model import GcanConfig
    from gcan.synthgen import GeneratorConfig, generate

    ds = generate(GeneratorConfig(n_stories=300, user_signal=0.0, seed=5))
    rows = ablation_suite(ds, GcanConfig(epochs=20), repeats=2,
                          variants=[Variant.FULL, Variant.NO_SOURCE_AND_COATT])
    full, users_only = (r.accuracy for r in rows)
    assert users_only < 0.65 < full


class TestRendering:
    def test_table_alignment(self):
        text = format_table(("a", "value"), [("x", 0.5), ("long", 1.0)])
        lines = text.splitlines()
        assert len(lines) == 4 and len({len(line) for line in lines}) == 1
        assert "0.5000" in text

    def test_chart_scales_bars(self):
        lines = text_chart([("a", 1.0), ("b", 0.5)], width=10).splitlines()
        assert lines[0].count("#") == 10 and lines[1].count("#") == 5
