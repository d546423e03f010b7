"""Attention-based explanations from the source-propagation co-attention.

Word weights come straight from the attention over source positions.  The
co-attention attends over CNN windows of ``lam`` consecutive retweeters, so
each window's weight is spread evenly over its users to obtain per-retweeter
weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .datamodel import FEATURE_NAMES, PAD, UNKNOWN, Story, fix_length

REPORT_VERSION = 1
WINDOW_MAPPING = "uniform-spread-over-window"
_SHADES = " .:-=+*#%@"


@dataclass
class WordWeight:
    token: str
    position: int
    weight: float
    known: bool = True


@dataclass
class UserWeight:
    position: int
    user_id: str
    weight: float


@dataclass
class SuspiciousUser:
    position: int
    user_id: str
    weight: float
    features: dict[str, float]


@dataclass
class AttentionReport:
    story_id: str
    predicted_label: int
    probabilities: list[float]
    word_weights: list[WordWeight]
    user_weights: list[UserWeight]
    top_words: list[WordWeight]
    top_suspicious_users: list[SuspiciousUser]
    raw_word_attention: list[float]
    raw_window_attention: list[float]
    flags: list[str] = field(default_factory=list)
    window_mapping: str = WINDOW_MAPPING
    report_version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionReport":
        data = dict(data)
        data["word_weights"] = [WordWeight(**w) for w in data["word_weights"]]
        data["top_words"] = [WordWeight(**w) for w in data["top_words"]]
        data["user_weights"] = [UserWeight(**u) for u in data["user_weights"]]
        data["top_suspicious_users"] = [SuspiciousUser(**u) for u in data["top_suspicious_users"]]
        return cls(**data)


def windows_to_users(window_weights, n: int, lam: int) -> np.ndarray:
    """Spread each window's weight evenly over its ``lam`` users and renormalise."""
    window_weights = np.asarray(window_weights, dtype=np.float64)
    if window_weights.shape != (n - lam + 1,):
        raise ValueError(f"expected {n - lam + 1} window weights, got shape {window_weights.shape}")
    users = np.zeros(n)
    for start, w in enumerate(window_weights):
        users[start : start + lam] += w / lam
    return users / users.sum()


def explain_story(trained, story: Story, top_k: int = 3, top_users: int = 5) -> AttentionReport:
    """Rank words and retweeters by source-propagation attention for one story.

    A model that has never taken a training step still gets a report, flagged
    ``"untrained"``.
    """
    config = trained.config
    batch = trained.encode([story])
    pred = trained.model.predict(batch)
    if "a_s_prop" not in pred.attention:
        raise ValueError(f"variant {config.variant.value} has no source-propagation co-attention to explain")
    word_attn = pred.attention["a_s_prop"][0]
    window_attn = pred.attention["a_c"][0]
    ids = batch.tokens[0]

    real = [t for t in range(config.m) if ids[t] != PAD]
    mass = float(sum(word_attn[t] for t in real))
    words = [
        WordWeight(story.tokens[t], t, float(word_attn[t] / mass), bool(ids[t] != UNKNOWN))
        for t in real
    ]
    words.sort(key=lambda w: (-w.weight, w.position))

    users = fix_length(story.retweets, config.n)
    user_attn = windows_to_users(window_attn, config.n, config.lam)
    user_weights = [UserWeight(j, users[j].user_id, float(user_attn[j])) for j in range(config.n)]
    ranked = sorted(user_weights, key=lambda u: (-u.weight, u.position))[:top_users]
    suspicious = [
        SuspiciousUser(u.position, u.user_id, u.weight, dict(zip(FEATURE_NAMES, users[u.position].features())))
        for u in ranked
    ]
    return AttentionReport(
        story_id=story.story_id,
        predicted_label=int(pred.labels[0]),
        probabilities=[float(p) for p in pred.probs[0]],
        word_weights=words,
        user_weights=user_weights,
        top_words=[w for w in words if w.known][:top_k],
        top_suspicious_users=suspicious,
        raw_word_attention=[float(a) for a in word_attn],
        raw_window_attention=[float(a) for a in window_attn],
        flags=[] if trained.is_trained else ["untrained"],
    )


def shade(weight: float, peak: float) -> str:
    """Glyph for ``weight`` relative to ``peak``; denser glyphs mean more weight."""
    if peak <= 0:
        return _SHADES[0]
    level = int(round((len(_SHADES) - 1) * min(1.0, weight / peak)))
    return _SHADES[level]


def render_report(report: AttentionReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}; use 'json' or 'text'")
    label = "fake" if report.predicted_label == 1 else "true"
    lines = [
        f"story {report.story_id}: predicted {label} "
        f"(p_true={report.probabilities[0]:.4f}, p_fake={report.probabilities[1]:.4f})",
    ]
    if report.flags:
        lines.append("flags: " + ", ".join(report.flags))
    lines.append("words by attention:")
    peak = max((w.weight for w in report.word_weights), default=0.0)
    for w in report.word_weights:
        bar = "#" * max(1, int(round(20 * w.weight / peak))) if peak > 0 else ""
        lines.append(f"  {w.token:>16s} {w.weight:.4f} {bar}")
    user_peak = max((u.weight for u in report.user_weights), default=0.0)
    strip = "".join(shade(u.weight, user_peak) for u in report.user_weights)
    lines.append(f"retweet attention (retweet order ->): [{strip}]")
    lines.append("most attended retweeters:")
    for u in report.top_suspicious_users:
        feats = ", ".join(f"{k}={v:g}" for k, v in u.features.items())
        lines.append(f"  #{u.position} {u.user_id} w={u.weight:.4f}: {feats}")
    return "\n".join(lines)
