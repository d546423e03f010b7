"""Stories, retweeters, and the preprocessing that turns them into arrays."""

from __future__ import annotations

import json
import math
import operator
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURE_NAMES = (
    "desc_word_count",
    "screen_name_word_count",
    "follower_count",
    "following_count",
    "story_count",
    "account_age",
    "is_verified",
    "geo_enabled",
    "retweet_delay",
    "path_length",
)
NUM_FEATURES = len(FEATURE_NAMES)
_get_features = operator.attrgetter(*FEATURE_NAMES)
_BINARY = {"is_verified", "geo_enabled"}
_DEFAULTS = {"path_length": 1.0}

PAD = 0
UNKNOWN = 1


class DatasetError(ValueError):
    """Raised for malformed dataset files; ``problems`` lists (line, message)."""

    def __init__(self, problems: list[tuple[int, str]], path=None):
        self.problems = problems
        where = f"{path}: " if path else ""
        lines = "; ".join(f"line {n}: {msg}" for n, msg in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"{where}{lines}{more}")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    desc_word_count: float
    screen_name_word_count: float
    follower_count: float
    following_count: float
    story_count: float
    account_age: float
    is_verified: float
    geo_enabled: float
    retweet_delay: float
    path_length: float = 1.0

    def __post_init__(self):
        for name in FEATURE_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")
            if name in _BINARY and value not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {value!r}")
        if self.path_length < 1:
            raise ValueError(f"path_length must be >= 1, got {self.path_length!r}")

    def features(self) -> tuple[float, ...]:
        return _get_features(self)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Story:
    story_id: str
    tokens: tuple[str, ...]
    label: int
    retweets: tuple[UserRecord, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("tokens must be non-empty")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.retweets:
            raise ValueError("retweets must be non-empty")

    def to_dict(self) -> dict:
        return {
            "story_id": self.story_id,
            "label": self.label,
            "tokens": list(self.tokens),
            "retweets": [u.to_dict() for u in self.retweets],
        }


@dataclass(frozen=True)
class Dataset:
    stories: tuple[Story, ...]
    source: str | None = None
    seed: int | None = None

    def __post_init__(self):
        ids = [s.story_id for s in self.stories]
        if len(set(ids)) != len(ids):
            dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
            raise ValueError(f"duplicate story_id values: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.stories)

    def __iter__(self):
        return iter(self.stories)

    def __getitem__(self, i):
        return self.stories[i]

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.stories], dtype=np.int64)

    def by_id(self, story_id: str) -> Story:
        for s in self.stories:
            if s.story_id == story_id:
                return s
        raise KeyError(story_id)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.stories[i] for i in indices), self.source, self.seed)


# -- JSONL ingestion ----------------------------------------------------------


def _number(obj: dict, key: str, where: str):
    if key not in obj:
        if key in _DEFAULTS:
            return _DEFAULTS[key]
        raise ValueError(f"{where} missing field {key!r}")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{where} field {key!r} must be a number, got {type(value).__name__}")
    return float(value)


def _parse_user(obj, where: str) -> UserRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"{where} must be an object")
    user_id = obj.get("user_id")
    if not isinstance(user_id, str):
        raise ValueError(f"{where} field 'user_id' must be a string")
    values = {name: _number(obj, name, where) for name in FEATURE_NAMES}
    try:
        return UserRecord(user_id=user_id, **values)
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def parse_story(obj) -> Story:
    if not isinstance(obj, dict):
        raise ValueError("story must be a JSON object")
    for key in ("story_id", "label", "tokens", "retweets"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    story_id, label, tokens, retweets = obj["story_id"], obj["label"], obj["tokens"], obj["retweets"]
    if not isinstance(story_id, str):
        raise ValueError("field 'story_id' must be a string")
    if isinstance(label, bool) or not isinstance(label, int):
        raise ValueError("field 'label' must be an integer")
    if label not in (0, 1):
        raise ValueError(f"field 'label' must be 0 or 1, got {label}")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValueError("field 'tokens' must be an array of strings")
    if not tokens:
        raise ValueError("field 'tokens' must be non-empty")
    if not isinstance(retweets, list) or not retweets:
        raise ValueError("field 'retweets' must be a non-empty array")
    users = tuple(_parse_user(u, f"retweets[{i}]") for i, u in enumerate(retweets))
    return Story(story_id=story_id, tokens=tuple(tokens), label=label, retweets=users)


def load_jsonl(path, seed: int | None = None) -> Dataset:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    stories: list[Story] = []
    problems: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            stories.append(parse_story(json.loads(line)))
        except json.JSONDecodeError as exc:
            problems.append((lineno, f"invalid JSON ({exc.msg})"))
        except ValueError as exc:
            problems.append((lineno, str(exc)))
    if problems:
        raise DatasetError(problems, path)
    if not stories:
        raise DatasetError([(0, "file contains no stories")], path)
    try:
        return Dataset(tuple(stories), source=str(path), seed=seed)
    except ValueError as exc:
        raise DatasetError([(0, str(exc))], path) from None


def dumps_jsonl(dataset: Dataset) -> str:
    return "".join(json.dumps(s.to_dict(), ensure_ascii=False) + "\n" for s in dataset)


def write_jsonl(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_jsonl(dataset), encoding="utf-8", newline="\n")


# -- vocabulary and token encoding ---------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # position i holds the token with index i + 2
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i + 2 for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNKNOWN)

    def token(self, i: int) -> str:
        if i == PAD:
            return "<pad>"
        if i == UNKNOWN:
            return "<unk>"
        return self.tokens[i - 2]


def build_vocab(train: Dataset, min_count: int = 1) -> Vocabulary:
    if len(train) == 0:
        raise ValueError("cannot build a vocabulary from an empty dataset")
    counts = Counter(t for s in train for t in s.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(tuple(kept))


def encode_tokens(story: Story, vocab: Vocabulary, m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("max length m must be >= 1")
    out = np.full(m, PAD, dtype=np.int64)
    head = story.tokens[:m]
    out[: len(head)] = [vocab.lookup(t) for t in head]
    return out


# -- propagation length ---------------------------------------------------------


def fix_length(retweets: Sequence[UserRecord], n: int) -> list[UserRecord]:
    """First ``n`` retweeters, or the sequence repeated cyclically up to ``n``."""
    if not retweets:
        raise ValueError("cannot fix the length of an empty retweet list")
    if n < 1:
        raise ValueError("n must be >= 1")
    k = len(retweets)
    if k >= n:
        return list(retweets[:n])
    return [retweets[i % k] for i in range(n)]


# -- feature scaling -------------------------------------------------------------


@dataclass(frozen=True)
class FeatureScaler:
    minimum: tuple[float, ...]
    maximum: tuple[float, ...]

    def transform(self, records: Sequence[UserRecord]) -> np.ndarray:
        raw = np.array([r.features() for r in records], dtype=np.float64).reshape(-1, NUM_FEATURES)
        lo, hi = np.array(self.minimum), np.array(self.maximum)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (raw - lo) / safe, 0.0)
        return np.clip(scaled, 0.0, 1.0)


def fit_scaler(train: Dataset) -> FeatureScaler:
    raw = np.array([u.features() for s in train for u in s.retweets], dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot fit a scaler without retweets")
    return FeatureScaler(tuple(raw.min(axis=0).tolist()), tuple(raw.max(axis=0).tolist()))


def apply_scaler(scaler: FeatureScaler, records: Sequence[UserRecord]) -> np.ndarray:
    return scaler.transform(records)


# -- splitting -------------------------------------------------------------------


def train_size(n: int, train_fraction: float) -> int:
    # tolerance keeps e.g. 5/7 * 700 from rounding up to 501
    return min(n, math.ceil(train_fraction * n - 1e-9))


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = train_size(len(dataset), train_fraction)
    return dataset.subset(sorted(order[:cut].tolist())), dataset.subset(sorted(order[cut:].tolist()))
