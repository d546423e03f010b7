"""Co-attention between source-word states and a partner sequence of user embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class CoAttentionParams:
    W_affinity: Parameter  # d x g'
    W_s: Parameter  # k x d
    W_p: Parameter  # k x g'
    w_hs: Parameter  # 1 x k
    w_hp: Parameter  # 1 x k

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, g: int, k: int, prefix: str = "coatt") -> "CoAttentionParams":
        return cls(
            W_affinity=Parameter(nx.glorot_uniform(rng, d, g), f"{prefix}.W_affinity"),
            W_s=Parameter(nx.glorot_uniform(rng, k, d), f"{prefix}.W_s"),
            W_p=Parameter(nx.glorot_uniform(rng, k, g), f"{prefix}.W_p"),
            w_hs=Parameter(nx.glorot_uniform(rng, 1, k), f"{prefix}.w_hs"),
            w_hp=Parameter(nx.glorot_uniform(rng, 1, k), f"{prefix}.w_hp"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.W_affinity, self.W_s, self.W_p, self.w_hs, self.w_hp]


@dataclass
class CoAttentionOutput:
    s_hat: Tensor  # 1 x d
    p_hat: Tensor  # 1 x g'
    a_s: Tensor  # 1 x m
    a_p: Tensor  # 1 x n'


def _check_shapes(S: Tensor, P: Tensor, params: CoAttentionParams) -> None:
    d, g = params.W_affinity.shape
    k = params.W_s.shape[0]
    ok = (
        S.shape[-2] == d
        and P.shape[-2] == g
        and params.W_s.shape == (k, d)
        and params.W_p.shape == (k, g)
        and params.w_hs.shape == (1, k)
        and params.w_hp.shape == (1, k)
    )
    if not ok:
        raise ValueError(
            f"co-attention shape mismatch: S {S.shape}, partner {P.shape}, "
            f"W_affinity {params.W_affinity.shape}, W_s {params.W_s.shape}, W_p {params.W_p.shape}"
        )


def coattend(S, P, params: CoAttentionParams) -> CoAttentionOutput:
    S, P = nx.constant(S), nx.constant(P)
    _check_shapes(S, P, params)
    F = nx.tanh(nx.matmul(nx.matmul(nx.transpose(S), params.W_affinity), P))  # m x n'
    ws = nx.matmul(params.W_s, S)  # k x m
    wp = nx.matmul(params.W_p, P)  # k x n'
    H_s = nx.tanh(nx.add(ws, nx.matmul(wp, nx.transpose(F))))
    H_p = nx.tanh(nx.add(wp, nx.matmul(ws, F)))
    a_s = nx.softmax(nx.matmul(params.w_hs, H_s))
    a_p = nx.softmax(nx.matmul(params.w_hp, H_p))
    s_hat = nx.matmul(a_s, nx.transpose(S))
    p_hat = nx.matmul(a_p, nx.transpose(P))
    return CoAttentionOutput(s_hat=s_hat, p_hat=p_hat, a_s=a_s, a_p=a_p)


@dataclass
class DualCoAttention:
    s1: Tensor  # source words attended with the interaction graph
    g: Tensor
    s2: Tensor  # source words attended with the CNN propagation windows
    c: Tensor
    interaction: CoAttentionOutput
    propagation: CoAttentionOutput

    @property
    def a_s_prop(self) -> Tensor:
        return self.propagation.a_s

    @property
    def a_c(self) -> Tensor:
        return self.propagation.a_p


def dual_coattend(S, G, C, params_sg: CoAttentionParams, params_sc: CoAttentionParams) -> DualCoAttention:
    inter = coattend(S, G, params_sg)
    prop = coattend(S, C, params_sc)
    return DualCoAttention(s1=inter.s_hat, g=inter.p_hat, s2=prop.s_hat, c=prop.p_hat, interaction=inter, propagation=prop)
