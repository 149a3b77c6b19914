"""Full scoring pipeline: intra fusion -> cross fusion -> alignment."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .alignment import AlignmentParams, global_similarity, local_attention, local_similarity, triplet_loss
from .cross import CrossFusionParams, PairEmbedding, cross_fuse
from .graph import PairRecord, SceneGraph
from .intra import IntraFusionParams, intra_fuse
from .numerics import Tensor


@dataclass
class ModelParams:
    image: IntraFusionParams
    text: IntraFusionParams
    cross: CrossFusionParams
    align: AlignmentParams

    @classmethod
    def init(cls, d: int, heads: int = 8, alpha: float = 5.0, beta: float = 0.0,
             attention_blocks: int = 1, delta: float = 0.3, margin: float = 0.2,
             rng: np.random.Generator | int = 0) -> "ModelParams":
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        params = cls(
            image=IntraFusionParams.init(rng, d, heads, alpha, beta),
            text=IntraFusionParams.init(rng, d, heads, alpha, beta),
            cross=CrossFusionParams.init(rng, d, attention_blocks),
            align=AlignmentParams.init(rng, d, delta, margin),
        )
        for name, t in params.named_parameters().items():
            t.name = name
        return params

    @property
    def dim(self) -> int:
        return self.image.dim

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, part in (("image", self.image), ("text", self.text),
                             ("cross", self.cross), ("align", self.align)):
            out.update(part.named(prefix))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            missing = sorted(set(params) ^ set(state))
            raise KeyError(f"parameter names differ: {missing[:5]}")
        for k, t in params.items():
            if np.shape(state[k]) != t.shape:
                raise nx.DimensionError(f"{k}: expected shape {t.shape}, got {np.shape(state[k])}")
            t.value = np.array(state[k], dtype=np.float64)

    def fusion_ratios(self) -> tuple[float, float]:
        return self.image.object_weight(), self.text.object_weight()


def encode(graphs: Sequence[SceneGraph], p: IntraFusionParams) -> list[tuple[Tensor, Tensor]]:
    return [intra_fuse(g, p) for g in graphs]


def _groups(sizes: Sequence[int]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for idx, s in enumerate(sizes):
        groups[s].append(idx)
    return dict(sorted(groups.items()))


def _score_block(params: ModelParams, F: Tensor, c_R: Tensor, P: Tensor, c_T: Tensor):
    emb = cross_fuse(F, c_R, P, c_T, params.cross)
    s_g = global_similarity(emb.c_Ru, emb.c_Tu)
    _, F_star, P_star = local_attention(emb.F_u, emb.P_u, params.align)
    s_l = local_similarity(emb.F_u, F_star, emb.P_u, P_star)
    return s_g, s_l


def score_components(params: ModelParams, images: Sequence[SceneGraph], texts: Sequence[SceneGraph],
                     chunk: int | None = None) -> tuple[Tensor, Tensor]:
    """Global and local similarity matrices, rows = images, columns = texts.

    Graphs are grouped by node count so each group of pairs is scored in a
    single batched pass; ``chunk`` bounds how many images go into one pass.
    """
    if not images or not texts:
        raise ValueError("need at least one image and one text")
    enc_img = encode(images, params.image)
    enc_txt = encode(texts, params.text)
    shape = (len(images), len(texts))
    img_groups = _groups([g.n_nodes for g in images])
    txt_groups = _groups([g.n_nodes for g in texts])
    single = len(img_groups) == 1 and len(txt_groups) == 1 and chunk is None
    sg_parts, sl_parts = [], []
    for n, rows_all in img_groups.items():
        step = chunk or len(rows_all)
        for start in range(0, len(rows_all), step):
            rows = rows_all[start:start + step]
            F = nx.stack([enc_img[i][0] for i in rows])
            F = nx.reshape(F, (len(rows), 1, n, F.shape[-1]))
            c_R = nx.reshape(nx.stack([enc_img[i][1] for i in rows]), (len(rows), 1, -1))
            for m, cols in txt_groups.items():
                P = nx.stack([enc_txt[j][0] for j in cols])
                P = nx.reshape(P, (1, len(cols), m, P.shape[-1]))
                c_T = nx.reshape(nx.stack([enc_txt[j][1] for j in cols]), (1, len(cols), -1))
                s_g, s_l = _score_block(params, F, c_R, P, c_T)
                if single:
                    return s_g, s_l
                where = np.ix_(rows, cols)
                sg_parts.append(nx.place(s_g, where, shape))
                sl_parts.append(nx.place(s_l, where, shape))
    S_G, S_L = sg_parts[0], sl_parts[0]
    for a, b in zip(sg_parts[1:], sl_parts[1:]):
        S_G, S_L = S_G + a, S_L + b
    return S_G, S_L


def similarity_matrix(params: ModelParams, images, texts, delta: float | None = None, chunk=None) -> Tensor:
    delta = params.align.delta if delta is None else delta
    S_G, S_L = score_components(params, images, texts, chunk)
    return S_G + delta * S_L


def batch_loss(params: ModelParams, records: Sequence[PairRecord], reduction: str = "sum") -> tuple[Tensor, Tensor]:
    """Hard-negative triplet loss over all batch x batch pairings, and the score matrix."""
    S = similarity_matrix(params, [r.image_graph for r in records], [r.text_graph for r in records])
    return triplet_loss(S, params.align.margin, reduction), S


def embed_pair(params: ModelParams, image: SceneGraph, text: SceneGraph) -> tuple[PairEmbedding, Tensor]:
    """Single-pair embedding and its region-word affinity matrix."""
    F, c_R = intra_fuse(image, params.image)
    P, c_T = intra_fuse(text, params.text)
    emb = cross_fuse(F, c_R, P, c_T, params.cross)
    A, _, _ = local_attention(emb.F_u, emb.P_u, params.align)
    return emb, A
