"""Intra-modal hierarchical attention: object, relation and attribute layers.

Row-vector convention throughout: a projection of feature row ``h`` by
``W`` is ``h @ W``.  The global agent is appended as the last row of ``H``
and is connected to every node in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import numerics as nx
from .graph import SceneGraph
from .layers import MLP, uniform_init
from .numerics import Tensor


@dataclass
class IntraFusionParams:
    W: Tensor          # (K, d, d) per-head projections
    a: Tensor          # (K, 2d) per-head attention vectors
    relation_mlp: MLP
    attribute_mlp: MLP
    alpha: Tensor      # scalar, object-branch logit
    beta: Tensor       # scalar, relation/attribute-branch logit

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int = 8,
             alpha: float = 5.0, beta: float = 0.0) -> "IntraFusionParams":
        if heads < 1:
            raise ValueError("need at least one attention head")
        return cls(
            W=Tensor(uniform_init(rng, d, (heads, d, d)), True),
            a=Tensor(uniform_init(rng, 2 * d, (heads, 2 * d)), True),
            relation_mlp=MLP.init(rng, d, d, d),
            attribute_mlp=MLP.init(rng, d, d, d),
            alpha=Tensor(float(alpha), True),
            beta=Tensor(float(beta), True),
        )

    @property
    def heads(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.W", self.W
        yield f"{prefix}.a", self.a
        yield from self.relation_mlp.named(f"{prefix}.relation_mlp")
        yield from self.attribute_mlp.named(f"{prefix}.attribute_mlp")
        yield f"{prefix}.alpha", self.alpha
        yield f"{prefix}.beta", self.beta

    def object_weight(self) -> float:
        """Current e^alpha / (e^alpha + e^beta)."""
        return float(fusion_weights(self.alpha, self.beta)[0].value)


def augmented_mask(g: SceneGraph) -> np.ndarray:
    """Neighbourhood mask over nodes plus agent; self-loops on the diagonal."""
    n = g.n_nodes
    mask = np.zeros((n + 1, n + 1), dtype=bool)
    mask[:n, :n] = g.adjacency.astype(bool)
    mask[n, :] = True
    mask[:, n] = True
    mask[np.arange(n + 1), np.arange(n + 1)] = True
    return mask


def object_attention(g: SceneGraph, H, p: IntraFusionParams) -> tuple[Tensor, Tensor]:
    """Per-head attention weights (K, N, N) and projected features (K, N, d)."""
    H = nx.as_tensor(H)
    d = p.dim
    if H.shape != (g.n_nodes + 1, d):
        raise nx.DimensionError(f"H must be {(g.n_nodes + 1, d)}, got {H.shape}")
    Z = nx.matmul(H, p.W)                                   # (K, N, d)
    a_src = nx.reshape(p.a[:, :d], (p.heads, d, 1))
    a_dst = nx.reshape(p.a[:, d:], (p.heads, 1, d))
    src = nx.matmul(Z, a_src)                               # (K, N, 1)
    dst = nx.swapaxes(nx.matmul(Z, nx.swapaxes(a_dst, -1, -2)), -1, -2)  # (K, 1, N)
    logits = nx.leaky_relu(src + dst)
    return nx.softmax(logits, axis=-1, mask=augmented_mask(g)), Z


def object_layer(g: SceneGraph, H, p: IntraFusionParams) -> Tensor:
    """ELU of the head-averaged attention aggregate, one row per node and agent."""
    weights, Z = object_attention(g, H, p)
    return nx.elu(nx.mean(nx.matmul(weights, Z), axis=0))


def _incidence_mean(incidence, n_items: int) -> tuple[np.ndarray, np.ndarray]:
    avg = np.zeros((len(incidence), n_items))
    for i, items in enumerate(incidence):
        for j in items:
            avg[i, j] += 1.0 / len(items)
    nonempty = np.array([len(s) > 0 for s in incidence], dtype=np.float64)
    return avg, nonempty


def _set_layer(incidence, features: np.ndarray, mlp: MLP) -> Tensor:
    for i, items in enumerate(incidence):
        for j in items:
            if not 0 <= j < features.shape[0]:
                raise nx.ContractError(f"node {i} references missing feature {j}")
    avg, nonempty = _incidence_mean(incidence, features.shape[0])
    pooled = avg @ features
    # empty sets give a zero row, not mlp(0)
    return mlp(pooled) * nonempty[:, None]


def relation_layer(g: SceneGraph, p: IntraFusionParams) -> Tensor:
    return _set_layer(g.rel_incidence, g.relation_features, p.relation_mlp)


def attribute_layer(g: SceneGraph, p: IntraFusionParams) -> Tensor:
    return _set_layer(g.attr_incidence, g.attribute_features, p.attribute_mlp)


def fusion_weights(alpha, beta) -> tuple[Tensor, Tensor]:
    """(object weight, relation+attribute weight); they sum to exactly one."""
    w_obj = nx.sigmoid(nx.as_tensor(alpha) - beta)
    return w_obj, 1.0 - w_obj


def layer_fusion(h_obj, h_rel, h_att, alpha, beta) -> Tensor:
    h_obj, h_rel, h_att = (nx.as_tensor(h) for h in (h_obj, h_rel, h_att))
    if not h_obj.shape == h_rel.shape == h_att.shape:
        raise nx.DimensionError(f"branch shapes differ: {h_obj.shape}, {h_rel.shape}, {h_att.shape}")
    w_obj, w_ctx = fusion_weights(alpha, beta)
    return w_ctx * (h_rel + h_att) + w_obj * h_obj


def intra_fuse(g: SceneGraph, p: IntraFusionParams) -> tuple[Tensor, Tensor]:
    """Updated node features (n, d) and the agent output (d,)."""
    if g.dim != p.dim:
        raise nx.DimensionError(f"graph has d={g.dim}, parameters expect d={p.dim}")
    n = g.n_nodes
    H = np.vstack([g.node_features, g.agent_init[None, :]])
    h_obj = object_layer(g, H, p)
    agent_row = np.zeros((1, p.dim))
    h_rel = nx.concat([relation_layer(g, p), agent_row], axis=0)
    h_att = nx.concat([attribute_layer(g, p), agent_row], axis=0)
    fused = layer_fusion(h_obj, h_rel, h_att, p.alpha, p.beta)
    return fused[:n], fused[n]
