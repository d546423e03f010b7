"""The full graph-aware co-attention classifier and its ablation variants."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .coattention import CoAttentionParams, coattend
from .datamodel import (
    NUM_FEATURES,
    Dataset,
    FeatureScaler,
    Story,
    Vocabulary,
    apply_scaler,
    build_vocab,
    encode_tokens,
    fit_scaler,
    fix_length,
)
from .encoders import (
    GruCell,
    UserGraph,
    build_graph,
    cnn_on_windows,
    embed_source,
    gcn_forward,
    gru_forward,
    gru_pool,
    windows,
)
from .numerics import Parameter, Tensor

CHECKPOINT_VERSION = 1


class Variant(str, enum.Enum):
    FULL = "FULL"
    NO_GRAPH = "NO_GRAPH"  # GCAN-G
    NO_COATT = "NO_COATT"  # -A
    NO_GRU = "NO_GRU"  # -R
    NO_GCN = "NO_GCN"  # -G
    NO_CNN = "NO_CNN"  # -C
    NO_SOURCE_AND_COATT = "NO_SOURCE_AND_COATT"  # -S-A

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip()
        for v in cls:
            if key.upper() == v.value or key == _LABELS[v]:
                return v
        raise ValueError(f"unknown variant {text!r}; choose from {[v.value for v in cls]}")


_LABELS = {
    Variant.FULL: "GCAN",
    Variant.NO_GRAPH: "GCAN-G",
    Variant.NO_COATT: "-A",
    Variant.NO_GRU: "-R",
    Variant.NO_GCN: "-G",
    Variant.NO_CNN: "-C",
    Variant.NO_SOURCE_AND_COATT: "-S-A",
}


@dataclass(frozen=True)
class GcanConfig:
    m: int = 20
    n: int = 40
    d: int = 32
    g: int = 32
    lam: int = 3
    k: int = 32
    hidden: int = 32
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    min_count: int = 1
    seed: int = 0
    variant: Variant = Variant.FULL

    def __post_init__(self):
        if isinstance(self.variant, str) and not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("m", "n", "d", "g", "lam", "k", "hidden", "batch_size", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.n < self.lam:
            raise ValueError(f"n ({self.n}) must be >= lam ({self.lam})")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GcanConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown model config keys: {unknown}")
        return cls(**data)

    # which branches a variant keeps
    @property
    def uses_source(self) -> bool:
        return self.variant is not Variant.NO_SOURCE_AND_COATT

    @property
    def uses_coattention(self) -> bool:
        return self.variant not in (Variant.NO_COATT, Variant.NO_SOURCE_AND_COATT)

    @property
    def uses_graph(self) -> bool:
        return self.variant not in (Variant.NO_GRAPH, Variant.NO_GCN)

    @property
    def uses_cnn(self) -> bool:
        return self.variant is not Variant.NO_CNN

    @property
    def uses_gru(self) -> bool:
        return self.variant is not Variant.NO_GRU

    def feature_width(self) -> int:
        v = self.variant
        if v is Variant.NO_SOURCE_AND_COATT:
            return self.d + self.g + self.d
        width = 0
        if self.uses_graph:
            width += self.d + self.g
        if self.uses_cnn:
            width += 2 * self.d
        if self.uses_gru:
            width += self.d
        return width


# -- preprocessing ------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessor:
    """Training-split vocabulary and feature scaler plus the fixed lengths."""

    vocab: Vocabulary
    scaler: FeatureScaler
    m: int
    n: int

    @classmethod
    def fit(cls, train: Dataset, config: GcanConfig) -> "Preprocessor":
        return cls(build_vocab(train, config.min_count), fit_scaler(train), config.m, config.n)

    def encode(self, stories: Sequence[Story] | Dataset, lam: int) -> "EncodedBatch":
        stories = list(stories)
        tokens = np.stack([encode_tokens(s, self.vocab, self.m) for s in stories])
        X = np.stack([apply_scaler(self.scaler, fix_length(s.retweets, self.n)) for s in stories])
        return EncodedBatch(
            story_ids=tuple(s.story_id for s in stories),
            tokens=tokens,
            X=X,
            graph=build_graph(X),
            win=np.swapaxes(windows(X, lam), -1, -2),
            labels=np.array([s.label for s in stories], dtype=np.int64),
        )

    def to_dict(self) -> dict:
        return {
            "vocab": list(self.vocab.tokens),
            "scaler_min": list(self.scaler.minimum),
            "scaler_max": list(self.scaler.maximum),
            "m": self.m,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Preprocessor":
        return cls(
            Vocabulary(tuple(data["vocab"])),
            FeatureScaler(tuple(data["scaler_min"]), tuple(data["scaler_max"])),
            int(data["m"]),
            int(data["n"]),
        )


@dataclass
class EncodedBatch:
    story_ids: tuple[str, ...]
    tokens: np.ndarray  # B x m
    X: np.ndarray  # B x n x 10
    graph: UserGraph  # batched, B x n x n
    win: np.ndarray  # B x (lam*10) x (n - lam + 1)
    labels: np.ndarray  # B

    def __len__(self) -> int:
        return len(self.story_ids)

    def take(self, idx) -> "EncodedBatch":
        idx = np.asarray(idx)
        return EncodedBatch(
            tuple(self.story_ids[i] for i in idx),
            self.tokens[idx],
            self.X[idx],
            UserGraph(self.graph.A[idx], self.graph.A_norm[idx], self.graph.degree[idx]),
            self.win[idx],
            self.labels[idx],
        )


# -- model --------------------------------------------------------------------


@dataclass
class Prediction:
    probs: np.ndarray  # B x 2
    labels: np.ndarray  # B
    attention: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ForwardResult:
    probs: Tensor  # B x 1 x 2
    features: Tensor  # B x 1 x width
    attention: dict[str, Tensor]


class Gcan:
    """Parameters of one model instance plus the forward computation."""

    def __init__(self, config: GcanConfig, vocab_size: int):
        self.config = config
        self.vocab_size = vocab_size
        rng = np.random.default_rng(config.seed)
        c = config
        p: dict[str, Parameter] = {}
        if c.uses_source:
            p["embed.W_w"] = Parameter(nx.glorot_uniform(rng, c.d, vocab_size), "embed.W_w")
            p["embed.b_w"] = Parameter(np.zeros((c.d, 1)), "embed.b_w")
            self.source_gru = GruCell.init(rng, c.d, c.d, "source_gru")
            p.update((q.name, q) for q in self.source_gru.parameters())
        if c.uses_gru:
            self.prop_gru = GruCell.init(rng, NUM_FEATURES, c.d, "prop_gru")
            p.update((q.name, q) for q in self.prop_gru.parameters())
        if c.uses_cnn or c.variant is Variant.NO_SOURCE_AND_COATT:
            fan_in = c.lam * NUM_FEATURES
            p["cnn.W_f"] = Parameter(
                nx.glorot_uniform(rng, c.d, fan_in, shape=(c.d, c.lam, NUM_FEATURES)), "cnn.W_f"
            )
            p["cnn.b_f"] = Parameter(np.zeros((c.d, 1)), "cnn.b_f")
        if c.uses_graph or c.variant is Variant.NO_SOURCE_AND_COATT:
            p["gcn.W_0"] = Parameter(nx.glorot_uniform(rng, c.g, NUM_FEATURES).T.copy(), "gcn.W_0")
            p["gcn.W_1"] = Parameter(nx.glorot_uniform(rng, c.g, c.g).T.copy(), "gcn.W_1")
        if c.uses_coattention:
            if c.uses_graph:
                self.coatt_sg = CoAttentionParams.init(rng, c.d, c.g, c.k, "coatt_sg")
                p.update((q.name, q) for q in self.coatt_sg.parameters())
            if c.uses_cnn:
                self.coatt_sc = CoAttentionParams.init(rng, c.d, c.d, c.k, "coatt_sc")
                p.update((q.name, q) for q in self.coatt_sc.parameters())
        width = c.feature_width()
        p["head.W_1"] = Parameter(nx.glorot_uniform(rng, c.hidden, width).T.copy(), "head.W_1")
        p["head.b_1"] = Parameter(np.zeros((1, c.hidden)), "head.b_1")
        p["head.W_2"] = Parameter(nx.glorot_uniform(rng, 2, c.hidden).T.copy(), "head.W_2")
        p["head.b_2"] = Parameter(np.zeros((1, 2)), "head.b_2")
        self.params = p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for q in self.params.values():
            q.zero_grad()

    def forward(self, batch: EncodedBatch) -> ForwardResult:
        c, p = self.config, self.params
        v = c.variant
        if batch.tokens.shape[-1] != c.m or batch.X.shape[-2] != c.n:
            raise ValueError(
                f"batch encoded for m={batch.tokens.shape[-1]}, n={batch.X.shape[-2]} "
                f"but model configured for m={c.m}, n={c.n}"
            )
        attention: dict[str, Tensor] = {}
        S = G = C = h = None
        if c.uses_source:
            V = embed_source(batch.tokens, p["embed.W_w"], p["embed.b_w"])
            S = gru_forward(self.source_gru, V)
        if c.uses_gru:
            h = nx.transpose(gru_pool(gru_forward(self.prop_gru, np.swapaxes(batch.X, -1, -2))))
        if "cnn.W_f" in p:
            C = cnn_on_windows(batch.win, p["cnn.W_f"], p["cnn.b_f"])
        if "gcn.W_0" in p:
            G = gcn_forward(batch.graph, batch.X, p["gcn.W_0"], p["gcn.W_1"])

        def pooled(t):
            return nx.transpose(nx.mean_columns(t))

        parts: list[Tensor] = []
        if v is Variant.NO_SOURCE_AND_COATT:
            parts = [pooled(C), pooled(G), h]
        else:
            if c.uses_graph:
                if c.uses_coattention:
                    out = coattend(S, G, self.coatt_sg)
                    parts += [out.s_hat, out.p_hat]
                    attention.update(a_s_inter=out.a_s, a_g=out.a_p)
                else:
                    parts += [pooled(S), pooled(G)]
            if c.uses_cnn:
                if c.uses_coattention:
                    out = coattend(S, C, self.coatt_sc)
                    parts += [out.s_hat, out.p_hat]
                    attention.update(a_s_prop=out.a_s, a_c=out.a_p)
                else:
                    parts += [pooled(S), pooled(C)]
            if c.uses_gru:
                parts.append(h)
        f = nx.concat(parts, axis=-1)
        hidden = nx.relu(nx.add(nx.matmul(f, p["head.W_1"]), p["head.b_1"]))
        logits = nx.add(nx.matmul(hidden, p["head.W_2"]), p["head.b_2"])
        return ForwardResult(probs=nx.softmax(logits), features=f, attention=attention)

    def loss(self, batch: EncodedBatch) -> Tensor:
        return loss(self.forward(batch).probs, batch.labels)

    def predict(self, batch: EncodedBatch) -> Prediction:
        res = self.forward(batch)
        probs = res.probs.value.reshape(len(batch), 2)
        return Prediction(
            probs=probs,
            labels=probs.argmax(axis=-1),
            attention={k: t.value.reshape(len(batch), -1) for k, t in res.attention.items()},
        )

    def train_step(self, batch: EncodedBatch) -> float:
        """Forward, backward and one Adam update; returns the pre-update mean loss."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        self.zero_grad()
        with nx.Tape() as tape:
            value = self.loss(batch)
        nx.backward(tape, value)
        nx.adam_step(self.parameters(), learning_rate=self.config.learning_rate)
        return float(value.value)


def loss(probs, labels) -> Tensor:
    """Mean binary cross-entropy ``-y log p1 - (1 - y) log p0`` with clamping."""
    return nx.class_nll(probs, labels, floor=1e-12)


# -- training loop ------------------------------------------------------------


@dataclass
class TrainedModel:
    model: Gcan
    pre: Preprocessor
    losses: list[float] = field(default_factory=list)

    @property
    def config(self) -> GcanConfig:
        return self.model.config

    @property
    def is_trained(self) -> bool:
        return bool(self.losses)

    def encode(self, stories) -> EncodedBatch:
        return self.pre.encode(stories, self.config.lam)

    def predict(self, stories) -> Prediction:
        batch = stories if isinstance(stories, EncodedBatch) else self.encode(stories)
        return self.model.predict(batch)


def fit(train: Dataset, config: GcanConfig, epochs: int | None = None) -> TrainedModel:
    """Fit preprocessing on ``train`` and train a fresh model with shuffled minibatches."""
    pre = Preprocessor.fit(train, config)
    model = Gcan(config, len(pre.vocab))
    data = pre.encode(train, config.lam)
    trained = TrainedModel(model, pre)
    rng = np.random.default_rng([config.seed, 1])
    for _ in range(config.epochs if epochs is None else epochs):
        order = rng.permutation(len(data))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch_losses.append(model.train_step(data.take(order[start : start + config.batch_size])))
        trained.losses.append(float(np.mean(batch_losses)))
    return trained


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(trained: TrainedModel, path, extra: dict | None = None) -> None:
    doc = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": trained.config.to_dict(),
        "vocab_size": trained.model.vocab_size,
        "preprocessor": trained.pre.to_dict(),
        "parameters": [
            {"name": q.name, "shape": list(q.shape), "values": q.value.reshape(-1).tolist()}
            for q in trained.model.parameters()
        ],
        "losses": list(trained.losses),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[TrainedModel, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('checkpoint_version')!r}")
    config = GcanConfig.from_dict(doc["config"])
    model = Gcan(config, int(doc["vocab_size"]))
    stored = {e["name"]: e for e in doc["parameters"]}
    if set(stored) != set(model.params):
        raise ValueError("checkpoint parameters do not match the configured variant")
    for name, q in model.params.items():
        entry = stored[name]
        values = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != q.shape:
            raise ValueError(f"parameter {name} has shape {values.shape}, expected {q.shape}")
        q.value[...] = values
    pre = Preprocessor.from_dict(doc["preprocessor"])
    return TrainedModel(model, pre, [float(x) for x in doc.get("losses", [])]), doc.get("extra", {})


def with_variant(config: GcanConfig, variant: Variant | str) -> GcanConfig:
    return replace(config, variant=Variant.parse(variant) if isinstance(variant, str) else variant)
