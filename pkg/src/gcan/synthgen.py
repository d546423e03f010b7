"""Synthetic retweet cascades with planted fake/real signals, and a linear reference classifier.

Fake stories over-use a small set of evidence tokens and are retweeted by a
larger share of "suspicious" accounts (unverified, young, terse profiles,
direct retweets of the source).  Real stories over-use a complementary set
of tokens and draw mostly ordinary accounts.  ``signal_strength`` scales the
gap between the two; at 0 the label is independent of everything else.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datamodel import Dataset, Story, UserRecord, build_vocab, fit_scaler, fix_length
from .harness import Metrics, compute_metrics


@dataclass(frozen=True)
class GeneratorConfig:
    n_stories: int = 500
    vocab_size: int = 300
    zipf_exponent: float = 0.8
    tokens_per_story: float = 13.25
    max_tokens: int = 20
    min_retweets: int = 5
    max_retweets: int = 60
    signal_strength: float = 0.8
    text_signal: float = 1.0
    user_signal: float = 1.0
    evidence_tokens: tuple[str, ...] = ("breaking", "shocking", "urgent", "exposed")
    real_evidence_tokens: tuple[str, ...] = ("confirmed", "official", "statement", "report")
    background_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "evidence_tokens", tuple(self.evidence_tokens))
        object.__setattr__(self, "real_evidence_tokens", tuple(self.real_evidence_tokens))
        for name in ("signal_strength", "text_signal", "user_signal", "background_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.n_stories < 2 or self.n_stories % 2:
            raise ValueError(f"n_stories must be a positive even number, got {self.n_stories}")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if not 1 <= self.tokens_per_story <= self.max_tokens:
            raise ValueError("tokens_per_story must be in [1, max_tokens]")
        if not 1 <= self.min_retweets <= self.max_retweets:
            raise ValueError("retweet range must satisfy 1 <= min_retweets <= max_retweets")
        if not self.evidence_tokens or not self.real_evidence_tokens:
            raise ValueError("evidence token sets must be non-empty")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["evidence_tokens"] = list(self.evidence_tokens)
        out["real_evidence_tokens"] = list(self.real_evidence_tokens)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown generator config keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def plant_rate(self) -> float:
        return self.signal_strength * self.text_signal

    def suspicious_rate(self, label: int) -> float:
        shift = 0.25 * self.signal_strength * self.user_signal
        return 0.5 + shift if label == 1 else 0.5 - shift


def _user(rng: np.random.Generator, user_id: str, suspicious: bool, delay: float) -> UserRecord:
    if suspicious:
        verified = rng.random() < 0.1
        age = rng.uniform(5, 700)
        desc = rng.poisson(4)
        path = 1 if rng.random() < 0.8 else 2
    else:
        verified = rng.random() < 0.5
        age = rng.uniform(300, 3000)
        desc = rng.poisson(11)
        path = 1 + min(rng.geometric(0.45), 5)
    return UserRecord(
        user_id=user_id,
        desc_word_count=float(desc),
        screen_name_word_count=float(1 + rng.poisson(0.8)),
        follower_count=float(np.floor(rng.lognormal(5.5, 1.2))),
        following_count=float(np.floor(rng.lognormal(5.0, 1.0))),
        story_count=float(np.floor(rng.lognormal(7.0, 1.3))),
        account_age=round(float(age), 2),
        is_verified=float(verified),
        geo_enabled=float(rng.random() < 0.3),
        retweet_delay=round(delay, 3),
        path_length=float(path),
    )


def generate(config: GeneratorConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    c = config
    neutral = [f"w{i:04d}" for i in range(c.vocab_size)]
    zipf = 1.0 / np.arange(1, c.vocab_size + 1) ** c.zipf_exponent
    zipf /= zipf.sum()
    labels = rng.permutation(np.repeat([0, 1], c.n_stories // 2))
    noise_tokens = c.evidence_tokens + c.real_evidence_tokens

    stories = []
    for i, label in enumerate(labels.tolist()):
        length = int(np.clip(round(rng.normal(c.tokens_per_story, 3.0)), 4, c.max_tokens))
        tokens = [neutral[j] for j in rng.choice(c.vocab_size, size=length, p=zipf)]
        if rng.random() < c.background_rate:
            tokens[rng.integers(length)] = noise_tokens[rng.integers(len(noise_tokens))]
        if rng.random() < c.plant_rate:
            planted = c.evidence_tokens if label == 1 else c.real_evidence_tokens
            tokens[rng.integers(length)] = planted[rng.integers(len(planted))]

        k = int(rng.integers(c.min_retweets, c.max_retweets + 1))
        q = c.suspicious_rate(label)
        delay = 0.0
        users = []
        for j in range(k):
            delay += rng.exponential(30.0)
            users.append(_user(rng, f"s{i:05d}u{j:03d}", bool(rng.random() < q), delay))
        stories.append(Story(f"s{i:05d}", tuple(tokens), label, tuple(users)))
    return Dataset(tuple(stories), source="synthetic", seed=c.seed)


# -- linear reference classifier ----------------------------------------------


@dataclass
class OracleReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    metrics: Metrics = field(repr=False)

    def to_dict(self) -> dict:
        return self.metrics.to_dict()


def _design(stories: Dataset, vocab, scaler, n: int) -> np.ndarray:
    bow = np.zeros((len(stories), len(vocab)))
    users = np.zeros((len(stories), len(scaler.minimum)))
    for i, s in enumerate(stories):
        for t in s.tokens:
            bow[i, vocab.lookup(t)] = 1.0
        users[i] = scaler.transform(fix_length(s.retweets, n)).mean(axis=0)
    # padding and unknown columns carry no word identity
    bow[:, :2] = 0.0
    return np.hstack([bow, users, np.ones((len(stories), 1))])


def oracle_baseline(
    train: Dataset,
    test: Dataset,
    n: int = 40,
    l2: float = 1e-3,
    learning_rate: float = 0.5,
    iterations: int = 2000,
) -> OracleReport:
    """L2-regularised logistic regression on bag-of-words plus mean user features."""
    if len(train) == 0 or len(test) == 0:
        raise ValueError("oracle baseline needs non-empty train and test splits")
    vocab, scaler = build_vocab(train, 1), fit_scaler(train)
    X_train, X_test = _design(train, vocab, scaler, n), _design(test, vocab, scaler, n)
    # standardise the user block; its min-max means have tiny spread
    cols = slice(len(vocab), len(vocab) + len(scaler.minimum))
    mu, sd = X_train[:, cols].mean(axis=0), X_train[:, cols].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    X_train[:, cols] = (X_train[:, cols] - mu) / sd
    X_test[:, cols] = (X_test[:, cols] - mu) / sd
    y = train.labels().astype(np.float64)
    w = np.zeros(X_train.shape[1])
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-(X_train @ w)))
        grad = X_train.T @ (p - y) / len(y) + l2 * w
        w -= learning_rate * grad
    pred = (X_test @ w > 0).astype(np.int64)
    m = compute_metrics(pred, test.labels())
    return OracleReport(m.accuracy, m.precision, m.recall, m.f1, m)
