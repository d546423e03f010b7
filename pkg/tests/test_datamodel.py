import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcan.datamodel import (
    FEATURE_NAMES,
    PAD,
    UNKNOWN,
    Dataset,
    DatasetError,
    Story,
    UserRecord,
    build_vocab,
    dumps_jsonl,
    encode_tokens,
    fit_scaler,
    fix_length,
    load_jsonl,
    parse_story,
    split,
    train_size,
    write_jsonl,
)


def user(uid="u", **overrides):
    values = dict(
        desc_word_count=3.0, screen_name_word_count=1.0, follower_count=10.0, following_count=5.0,
        story_count=100.0, account_age=50.0, is_verified=0.0, geo_enabled=1.0, retweet_delay=2.0,
    )
    values.update(overrides)
    return UserRecord(user_id=uid, **values)


def story(sid="s1", tokens=("a", "b"), label=1, n_users=3):
    return Story(sid, tuple(tokens), label, tuple(user(f"{sid}u{i}", retweet_delay=float(i)) for i in range(n_users)))


class TestRecords:
    def test_feature_order(self):
        u = user(path_length=2.0)
        assert dict(zip(FEATURE_NAMES, u.features()))["path_length"] == 2.0
        assert len(u.features()) == 10

    def test_path_length_defaults_to_direct_retweet(self):
        assert user().path_length == 1.0

    @pytest.mark.parametrize("field,value", [("follower_count", -1.0), ("is_verified", 0.5), ("account_age", float("nan"))])
    def test_invalid_features_rejected(self, field, value):
        with pytest.raises(ValueError, match=field):
            user(**{field: value})

    def test_story_needs_tokens_and_retweets(self):
        with pytest.raises(ValueError):
            Story("s", (), 0, (user(),))
        with pytest.raises(ValueError):
            Story("s", ("a",), 0, ())
        with pytest.raises(ValueError):
            Story("s", ("a",), 2, (user(),))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Dataset((story("x"), story("x")))


class TestJsonl:
    def test_round_trip(self, tmp_path, small_dataset):
        path = tmp_path / "d.jsonl"
        write_jsonl(small_dataset, path)
        loaded = load_jsonl(path)
        assert loaded.stories == small_dataset.stories
        assert dumps_jsonl(loaded) == path.read_text(encoding="utf-8")

    def test_missing_path_length_gets_default(self):
        obj = story().to_dict()
        for u in obj["retweets"]:
            del u["path_length"]
        assert all(u.path_length == 1.0 for u in parse_story(obj).retweets)

    def test_errors_report_line_numbers(self, tmp_path):
        good = json.dumps(story("a").to_dict())
        bad = story("b").to_dict()
        bad["retweets"][0]["follower_count"] = "many"
        path = tmp_path / "d.jsonl"
        path.write_text("\n".join([good, json.dumps(bad), "{not json", good.replace('"a"', '"c"')]) + "\n")
        with pytest.raises(DatasetError) as info:
            load_jsonl(path)
        lines = [n for n, _ in info.value.problems]
        assert lines == [2, 3]
        assert "follower_count" in info.value.problems[0][1]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n")
        with pytest.raises(DatasetError):
            load_jsonl(path)

    @pytest.mark.parametrize("key", ["story_id", "label", "tokens", "retweets"])
    def test_missing_top_level_field(self, key):
        obj = story().to_dict()
        del obj[key]
        with pytest.raises(ValueError, match=key):
            parse_story(obj)

    def test_boolean_label_rejected(self):
        obj = story().to_dict()
        obj["label"] = True
        with pytest.raises(ValueError, match="label"):
            parse_story(obj)


class TestVocabulary:
    def test_indices_start_after_reserved(self):
        ds = Dataset((story("a", ("x", "y", "x")), story("b", ("y", "x", "z"))))
        vocab = build_vocab(ds)
        assert vocab.tokens == ("x", "y", "z")
        assert vocab.lookup("x") == 2 and vocab.lookup("nope") == UNKNOWN
        assert len(vocab) == 5
        assert vocab.token(PAD) == "<pad>" and vocab.token(4) == "z"

    def test_min_count(self):
        ds = Dataset((story("a", ("x", "y", "x")),))
        assert build_vocab(ds, min_count=2).tokens == ("x",)

    def test_encode_pads_and_truncates(self):
        vocab = build_vocab(Dataset((story("a", ("x", "y")),)))
        np.testing.assert_array_equal(encode_tokens(story("b", ("y", "q")), vocab, 4), [3, UNKNOWN, PAD, PAD])
        np.testing.assert_array_equal(encode_tokens(story("b", ("x", "y", "x")), vocab, 2), [2, 3])


class TestFixLength:
    def test_truncates_in_order(self):
        users = [user(str(i)) for i in range(5)]
        assert [u.user_id for u in fix_length(users, 3)] == ["0", "1", "2"]

    def test_cycles_short_sequences(self):
        users = [user(str(i)) for i in range(2)]
        assert [u.user_id for u in fix_length(users, 5)] == ["0", "1", "0", "1", "0"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fix_length([], 3)

    @given(st.integers(1, 30), st.integers(1, 60))
    def test_length_and_prefix(self, k, n):
        users = [user(str(i)) for i in range(k)]
        out = fix_length(users, n)
        assert len(out) == n
        assert out[: min(k, n)] == users[: min(k, n)]


class TestScaler:
    def test_train_range_maps_to_unit_interval(self, small_dataset):
        scaler = fit_scaler(small_dataset)
        X = scaler.transform([u for s in small_dataset for u in s.retweets])
        assert X.min() >= 0.0 and X.max() <= 1.0
        np.testing.assert_allclose(X.max(axis=0)[X.max(axis=0) > 0], 1.0)

    def test_out_of_range_is_clipped_and_constant_is_zero(self):
        scaler = fit_scaler(Dataset((story(n_users=3),)))
        X = scaler.transform([user(retweet_delay=100.0, follower_count=99.0)])
        assert X[0, FEATURE_NAMES.index("retweet_delay")] == 1.0
        assert X[0, FEATURE_NAMES.index("follower_count")] == 0.0


class TestSplit:
    def test_counts(self):
        assert train_size(700, 5 / 7) == 500
        assert train_size(10, 0.7) == 7

    def test_deterministic_and_disjoint(self, small_dataset):
        a_train, a_test = split(small_dataset, 0.7, 3)
        b_train, b_test = split(small_dataset, 0.7, 3)
        assert a_train.stories == b_train.stories and a_test.stories == b_test.stories
        ids_train = {s.story_id for s in a_train}
        ids_test = {s.story_id for s in a_test}
        assert not ids_train & ids_test
        assert len(ids_train | ids_test) == len(small_dataset)

    @settings(max_examples=40)
    @given(st.integers(2, 80), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_partition_property(self, n, fraction, seed):
        ds = Dataset(tuple(story(f"s{i}") for i in range(n)))
        train, test = split(ds, fraction, seed)
        assert len(train) + len(test) == n
        assert len(train) == train_size(n, fraction)
        assert sorted(s.story_id for s in list(train) + list(test)) == sorted(s.story_id for s in ds)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, small_dataset, fraction):
        with pytest.raises(ValueError):
            split(small_dataset, fraction, 0)
