"""Representation learners for the source tweet and its retweet propagation.

All tensors follow a features-by-positions layout (``d x m``, ``g x n``) with
optional leading batch axes, so a batch of stories is processed at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class GruCell:
    W_z: Parameter
    U_z: Parameter
    b_z: Parameter
    W_r: Parameter
    U_r: Parameter
    b_r: Parameter
    W_h: Parameter
    U_h: Parameter
    b_h: Parameter

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden: int, prefix: str = "gru") -> "GruCell":
        params = {}
        for gate in "zrh":
            params[f"W_{gate}"] = Parameter(nx.glorot_uniform(rng, hidden, input_size), f"{prefix}.W_{gate}")
            params[f"U_{gate}"] = Parameter(nx.glorot_uniform(rng, hidden, hidden), f"{prefix}.U_{gate}")
            params[f"b_{gate}"] = Parameter(np.zeros((hidden, 1)), f"{prefix}.b_{gate}")
        return cls(**params)

    @property
    def hidden(self) -> int:
        return self.U_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.W_z, self.U_z, self.b_z, self.W_r, self.U_r, self.b_r, self.W_h, self.U_h, self.b_h]


def _projections(cell: GruCell, inputs):
    inputs = nx.constant(inputs)
    if inputs.shape[-2] != cell.input_size:
        raise ValueError(f"GRU expects {cell.input_size} input rows, got shape {inputs.shape}")
    lead = inputs.shape[:-2]
    steps, d = inputs.shape[-1], cell.hidden
    rows = int(np.prod(lead, dtype=np.int64))
    X = nx.reshape(nx.transpose(inputs), (rows * steps, cell.input_size))

    def project(W, b):
        return nx.reshape(nx.add(nx.matmul(X, nx.transpose(W)), nx.transpose(b)), (rows, steps, d))

    return lead, project(cell.W_z, cell.b_z), project(cell.W_r, cell.b_r), project(cell.W_h, cell.b_h)


def _as_columns(states: Tensor, lead: tuple[int, ...]) -> Tensor:
    _, steps, d = states.shape
    return nx.reshape(nx.transpose(states), lead + (d, steps))


def gru_forward(cell: GruCell, inputs) -> Tensor:
    """Run the GRU over the columns of ``inputs`` (``in x T``) from a zero state.

    Returns every hidden state as a ``d x T`` tensor.
    """
    lead, xz, xr, xh = _projections(cell, inputs)
    return _as_columns(nx.gru_sequence(xz, xr, xh, cell.U_z, cell.U_r, cell.U_h), lead)


def gru_forward_stepwise(cell: GruCell, inputs) -> Tensor:
    """Same recurrence as :func:`gru_forward`, recorded one primitive at a time."""
    lead, xz, xr, xh = _projections(cell, inputs)
    rows, steps, d = xz.shape
    Uz, Ur, Uh = nx.transpose(cell.U_z), nx.transpose(cell.U_r), nx.transpose(cell.U_h)
    h = nx.Tensor(np.zeros((rows, d)))
    states = []
    for t in range(steps):
        z = nx.sigmoid(nx.add(nx.index(xz, (slice(None), t)), nx.matmul(h, Uz)))
        r = nx.sigmoid(nx.add(nx.index(xr, (slice(None), t)), nx.matmul(h, Ur)))
        cand = nx.tanh(nx.add(nx.index(xh, (slice(None), t)), nx.matmul(nx.mul(r, h), Uh)))
        h = nx.add(h, nx.mul(z, nx.sub(cand, h)))  # (1 - z) * h + z * cand
        states.append(h)
    return _as_columns(nx.reshape(nx.concat(states, axis=-1), (rows, steps, d)), lead)


def gru_pool(states) -> Tensor:
    return nx.mean_columns(states)


def embed_source(indices, W_w: Parameter, b_w: Parameter) -> Tensor:
    """``tanh(W_w E + b_w)`` for one-hot columns ``E``, done as a column lookup."""
    return nx.tanh(nx.add(nx.gather_columns(W_w, indices), b_w))


def windows(X: np.ndarray, width: int) -> np.ndarray:
    """Stack ``width`` consecutive rows of ``X`` (``n x v``) into ``(n - width + 1) x (width*v)``."""
    X = np.asarray(X, dtype=np.float64)
    n, v = X.shape[-2], X.shape[-1]
    if n < width:
        raise ValueError(f"need at least {width} users for the convolution, got {n}")
    starts = np.arange(n - width + 1)[:, None] + np.arange(width)[None, :]
    win = X[..., starts, :]
    return win.reshape(X.shape[:-2] + (n - width + 1, width * v))


def cnn_forward(X, W_f: Parameter, b_f: Parameter) -> Tensor:
    """Valid 1-D convolution over users with ReLU.

    ``X`` is ``n x v`` scaled features, ``W_f`` is ``d x width x v`` (one
    ``width x v`` filter per output channel) and ``b_f`` is ``d x 1``.
    Returns ``d x (n - width + 1)``.
    """
    _, width, v = W_f.shape
    X = X.value if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if X.shape[-1] != v:
        raise ValueError(f"filters expect {v} features, got shape {X.shape}")
    return cnn_on_windows(np.swapaxes(windows(X, width), -1, -2), W_f, b_f)


def cnn_on_windows(win: np.ndarray, W_f: Parameter, b_f: Parameter) -> Tensor:
    """Convolution given precomputed windows, ``(width*v) x columns``."""
    d, width, v = W_f.shape
    flat = nx.reshape(W_f, (d, width * v))
    return nx.relu(nx.add(nx.matmul(flat, win), b_f))


@dataclass(frozen=True)
class UserGraph:
    A: np.ndarray
    A_norm: np.ndarray
    degree: np.ndarray


def build_graph(X) -> UserGraph:
    """Fully connected user graph weighted by cosine similarity, self-loops included.

    Works on one ``n x v`` matrix or a batch ``(..., n, v)``.
    """
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms == 0):
        # constant extra feature keeps cosine defined for all-zero rows
        zero_rows = np.any(norms[..., 0] == 0, axis=-1, keepdims=True)[..., None]
        X = np.concatenate([X, np.broadcast_to(zero_rows.astype(np.float64), X.shape[:-1] + (1,))], axis=-1)
        norms = np.linalg.norm(X, axis=-1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero-norm user feature row")
    unit = X / norms
    A = np.matmul(unit, np.swapaxes(unit, -1, -2))
    A = np.clip((A + np.swapaxes(A, -1, -2)) / 2.0, 0.0, 1.0)
    n = A.shape[-1]
    A[..., np.arange(n), np.arange(n)] = 1.0
    degree = A.sum(axis=-1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    A_norm = inv_sqrt[..., :, None] * A * inv_sqrt[..., None, :]
    return UserGraph(A=A, A_norm=A_norm, degree=degree)


def gcn_forward(graph: UserGraph, X, W_0: Parameter, W_1: Parameter) -> Tensor:
    """Two ReLU graph-convolution layers; returns node embeddings as ``g x n``."""
    A = nx.Tensor(graph.A_norm)
    h1 = nx.relu(nx.matmul(nx.matmul(A, nx.constant(X)), W_0))
    h2 = nx.relu(nx.matmul(nx.matmul(A, h1), W_1))
    return nx.transpose(h2)
