"""Cross-modal fusion guided by contextual vectors.

All functions broadcast over leading batch axes, so the same code scores a
single pair or an entire (images x texts) grid of pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import numerics as nx
from .layers import MLP, uniform_init
from .numerics import Tensor


@dataclass
class AttentionBlock:
    W_K: Tensor
    W_Q: Tensor
    W_V: Tensor
    W_G: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "AttentionBlock":
        return cls(*(Tensor(uniform_init(rng, d, (d, d)), True) for _ in range(4)))

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for key in ("W_K", "W_Q", "W_V", "W_G"):
            yield f"{prefix}.{key}", getattr(self, key)


@dataclass
class CrossFusionParams:
    context_mlp: MLP
    blocks: list[AttentionBlock]
    update_mlp_image: MLP
    update_mlp_text: MLP

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, attention_blocks: int = 1) -> "CrossFusionParams":
        return cls(
            context_mlp=MLP.init(rng, 2 * d, 2 * d, 2 * d),
            blocks=[AttentionBlock.init(rng, d) for _ in range(attention_blocks)],
            update_mlp_image=MLP.init(rng, 2 * d, 2 * d, d),
            update_mlp_text=MLP.init(rng, 2 * d, 2 * d, d),
        )

    @property
    def dim(self) -> int:
        return self.update_mlp_image.d_out

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.context_mlp.named(f"{prefix}.context_mlp")
        for k, block in enumerate(self.blocks):
            yield from block.named(f"{prefix}.block{k}")
        yield from self.update_mlp_image.named(f"{prefix}.update_mlp_image")
        yield from self.update_mlp_text.named(f"{prefix}.update_mlp_text")


@dataclass
class PairEmbedding:
    F_u: Tensor
    P_u: Tensor
    f_bar: Tensor
    p_bar: Tensor
    c_Ru: Tensor
    c_Tu: Tensor
    attention: list[Tensor] = field(default_factory=list)


def _check_vec(name: str, v: Tensor, d: int) -> None:
    if v.shape[-1] != d:
        raise nx.DimensionError(f"{name} must have length {d}, got shape {v.shape}")


def form_context(c_R, c_T, p: CrossFusionParams) -> tuple[Tensor, Tensor]:
    c_R, c_T = nx.as_tensor(c_R), nx.as_tensor(c_T)
    d = p.dim
    _check_vec("c_R", c_R, d)
    _check_vec("c_T", c_T, d)
    batch = np.broadcast_shapes(c_R.shape[:-1], c_T.shape[:-1])
    c_R = nx.broadcast_to(c_R, batch + (d,))
    c_T = nx.broadcast_to(c_T, batch + (d,))
    both = p.context_mlp(nx.concat([c_R, c_T], axis=-1))
    c_R_ctx, c_T_ctx = nx.split(both, [d, d], axis=-1)
    return c_R_ctx, c_T_ctx


def _repeat_rows(v: Tensor, count: int) -> Tensor:
    shape = v.shape[:-1] + (count, v.shape[-1])
    return nx.broadcast_to(nx.reshape(v, v.shape[:-1] + (1, v.shape[-1])), shape)


def guided_attention(F_prime, P_prime, c_R_ctx, c_T_ctx, p: CrossFusionParams,
                     block: int = 0, return_weights: bool = False):
    """One contextual-vector-guided attention block with residual.

    The contextual rows scale queries and keys elementwise:
    ``softmax(((G*Q) @ (G*K).T) / sqrt(d)) @ V + Y`` with ``Y = [F'; P']``
    and ``G = C @ W_G`` where ``C`` repeats each modality's contextual vector.
    """
    F_prime, P_prime = nx.as_tensor(F_prime), nx.as_tensor(P_prime)
    c_R_ctx, c_T_ctx = nx.as_tensor(c_R_ctx), nx.as_tensor(c_T_ctx)
    d = p.dim
    if F_prime.shape[-1] != d or P_prime.shape[-1] != d:
        raise nx.DimensionError(f"features must have {d} columns: {F_prime.shape}, {P_prime.shape}")
    _check_vec("c_R'", c_R_ctx, d)
    _check_vec("c_T'", c_T_ctx, d)
    n, m = F_prime.shape[-2], P_prime.shape[-2]
    batch = np.broadcast_shapes(F_prime.shape[:-2], P_prime.shape[:-2],
                                c_R_ctx.shape[:-1], c_T_ctx.shape[:-1])
    Y = nx.concat([nx.broadcast_to(F_prime, batch + (n, d)),
                   nx.broadcast_to(P_prime, batch + (m, d))], axis=-2)
    C = nx.concat([_repeat_rows(nx.broadcast_to(c_R_ctx, batch + (d,)), n),
                   _repeat_rows(nx.broadcast_to(c_T_ctx, batch + (d,)), m)], axis=-2)
    w = p.blocks[block]
    K = nx.matmul(Y, w.W_K)
    Q = nx.matmul(Y, w.W_Q)
    V = nx.matmul(Y, w.W_V)
    G = nx.matmul(C, w.W_G)
    scores = nx.matmul(G * Q, nx.swapaxes(G * K, -1, -2)) * (1.0 / np.sqrt(d))
    weights = nx.softmax(scores, axis=-1)
    Y_u = nx.matmul(weights, V) + Y
    return (Y_u, weights) if return_weights else Y_u


def split_and_pool(Y_u, n: int, m: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    Y_u = nx.as_tensor(Y_u)
    if Y_u.shape[-2] != n + m:
        raise nx.DimensionError(f"Y_u has {Y_u.shape[-2]} rows, expected {n} + {m}")
    F_u, P_u = nx.split(Y_u, [n, m], axis=-2)
    return F_u, P_u, nx.mean(F_u, axis=-2), nx.mean(P_u, axis=-2)


def update_context(c_R, f_bar, c_T, p_bar, p: CrossFusionParams) -> tuple[Tensor, Tensor]:
    c_R, f_bar, c_T, p_bar = (nx.as_tensor(v) for v in (c_R, f_bar, c_T, p_bar))
    d = p.dim
    for name, v in (("c_R", c_R), ("f_bar", f_bar), ("c_T", c_T), ("p_bar", p_bar)):
        _check_vec(name, v, d)
    c_R = nx.broadcast_to(c_R, f_bar.shape)
    c_T = nx.broadcast_to(c_T, p_bar.shape)
    c_Ru = p.update_mlp_image(nx.concat([c_R, f_bar], axis=-1))
    c_Tu = p.update_mlp_text(nx.concat([c_T, p_bar], axis=-1))
    return c_Ru, c_Tu


def cross_fuse(F_prime, c_R, P_prime, c_T, p: CrossFusionParams) -> PairEmbedding:
    """Contextual vectors, guided attention block(s), pooling and agent update."""
    F_prime, P_prime = nx.as_tensor(F_prime), nx.as_tensor(P_prime)
    c_R, c_T = nx.as_tensor(c_R), nx.as_tensor(c_T)
    n, m = F_prime.shape[-2], P_prime.shape[-2]
    c_R_ctx, c_T_ctx = form_context(c_R, c_T, p)
    batch = c_R_ctx.shape[:-1]
    F_cur, P_cur = F_prime, P_prime
    weights = []
    for k in range(len(p.blocks)):
        Y_u, wts = guided_attention(F_cur, P_cur, c_R_ctx, c_T_ctx, p, block=k, return_weights=True)
        weights.append(wts)
        F_cur, P_cur = nx.split(Y_u, [n, m], axis=-2)
    F_u, P_u, f_bar, p_bar = split_and_pool(Y_u, n, m)
    c_Ru, c_Tu = update_context(nx.broadcast_to(c_R, batch + (p.dim,)), f_bar,
                                nx.broadcast_to(c_T, batch + (p.dim,)), p_bar, p)
    return PairEmbedding(F_u, P_u, f_bar, p_bar, c_Ru, c_Tu, weights)
