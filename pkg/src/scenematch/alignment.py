"""Global/local alignment scores, hard-negative triplet loss and recall metrics."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .layers import uniform_init
from .numerics import Tensor

RECALL_KS = (1, 5, 10)


@dataclass
class AlignmentParams:
    W_r: Tensor
    W_t: Tensor
    delta: float = 0.3
    margin: float = 0.2

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, delta: float = 0.3, margin: float = 0.2) -> "AlignmentParams":
        return cls(Tensor(uniform_init(rng, d, (d, d)), True),
                   Tensor(uniform_init(rng, d, (d, d)), True), delta, margin)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.W_r", self.W_r
        yield f"{prefix}.W_t", self.W_t


def global_similarity(c_Ru, c_Tu) -> Tensor:
    return nx.cosine(c_Ru, c_Tu, axis=-1)


def local_attention(F_u, P_u, p: AlignmentParams, return_weights: bool = False):
    """Region-word affinity ``A`` and the cross-attended features.

    ``F_star[i]`` mixes word rows with a softmax over ``A[i, :]``;
    ``P_star[j]`` mixes region rows with a softmax over ``A[:, j]``.
    """
    F_u, P_u = nx.as_tensor(F_u), nx.as_tensor(P_u)
    if F_u.shape[-1] != P_u.shape[-1] or F_u.shape[-1] != p.W_r.shape[0]:
        raise nx.DimensionError(f"incompatible feature shapes {F_u.shape} and {P_u.shape}")
    A = nx.matmul(nx.matmul(F_u, p.W_r), nx.swapaxes(nx.matmul(P_u, p.W_t), -1, -2))
    alpha = nx.softmax(A, axis=-1)
    beta = nx.softmax(A, axis=-2)
    F_star = nx.matmul(alpha, P_u)
    P_star = nx.matmul(nx.swapaxes(beta, -1, -2), F_u)
    if return_weights:
        return A, F_star, P_star, alpha, beta
    return A, F_star, P_star


def local_similarity(F_u, F_star, P_u, P_star) -> Tensor:
    F_u, F_star, P_u, P_star = (nx.as_tensor(x) for x in (F_u, F_star, P_u, P_star))
    if F_u.shape != F_star.shape or P_u.shape != P_star.shape:
        raise nx.DimensionError("attended features must match their sources")
    return nx.mean(nx.cosine(F_u, F_star), axis=-1) + nx.mean(nx.cosine(P_u, P_star), axis=-1)


def pair_similarity(s_g, s_l, delta: float):
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return s_g + delta * s_l


def mine_hard_negatives(S) -> tuple[np.ndarray, np.ndarray]:
    """Hardest off-diagonal text per row and image per column (ties: lowest index)."""
    S = np.asarray(S.value if isinstance(S, Tensor) else S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise nx.DimensionError(f"score matrix must be square, got {S.shape}")
    b = S.shape[0]
    if b < 2:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    masked = S.copy()
    np.fill_diagonal(masked, -np.inf)
    # argmax returns the first maximal index
    return masked.argmax(axis=1), masked.argmax(axis=0)


def triplet_loss(S, margin: float = 0.2, reduction: str = "sum") -> Tensor:
    """Bidirectional hinge loss against the mined hard negatives."""
    S = nx.as_tensor(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise nx.DimensionError(f"score matrix must be square, got {S.shape}")
    b = S.shape[0]
    if b < 2:
        return nx.sum(S * 0.0)
    hard_text, hard_image = mine_hard_negatives(S)
    idx = np.arange(b)
    pos = S[idx, idx]
    cost_text = nx.relu(margin - pos + S[idx, hard_text])
    cost_image = nx.relu(margin - pos + S[hard_image, idx])
    total = nx.sum(cost_text + cost_image)
    if reduction == "mean":
        return total * (1.0 / b)
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


def hinge_arguments(S) -> np.ndarray:
    """Values inside both hinges, used to detect non-differentiable points."""
    S = np.asarray(S.value if isinstance(S, Tensor) else S)
    hard_text, hard_image = mine_hard_negatives(S)
    idx = np.arange(S.shape[0])
    pos = S[idx, idx]
    return np.concatenate([S[idx, hard_text] - pos, S[hard_image, idx] - pos])


# ---------------------------------------------------------------- metrics

def recall_at_k(rank_lists: Sequence[Sequence], truth: Sequence, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rank_lists) != len(truth):
        raise ValueError("one truth id per query is required")
    if not rank_lists:
        return 0.0
    hits = 0
    for ranked, target in zip(rank_lists, truth):
        ranked = list(ranked)
        if target not in ranked:
            raise nx.ContractError(f"truth id {target!r} absent from its gallery")
        hits += target in ranked[:k]
    return 100.0 * hits / len(rank_lists)


def rsum(recalls: Sequence[float]) -> float:
    """Sum of six recalls, exact in decimal and independent of summation order."""
    if len(recalls) != 6:
        raise ValueError("rsum takes exactly six recall values")
    return float(sum(Decimal(repr(float(r))) for r in recalls))


@dataclass(frozen=True)
class RetrievalReport:
    image_to_text: dict
    text_to_image: dict
    rsum: float

    @classmethod
    def from_recalls(cls, i2t: dict, t2i: dict) -> "RetrievalReport":
        values = [i2t[k] for k in RECALL_KS] + [t2i[k] for k in RECALL_KS]
        return cls(dict(i2t), dict(t2i), rsum(values))

    def as_row(self) -> list[float]:
        return [self.image_to_text[k] for k in RECALL_KS] + [self.text_to_image[k] for k in RECALL_KS] + [self.rsum]


def rank_scores(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gallery orderings: texts per image row, images per text column."""
    S = np.asarray(S)
    by_image = np.argsort(-S, axis=1, kind="stable")
    by_text = np.argsort(-S.T, axis=1, kind="stable")
    return by_image, by_text


def report_from_scores(S) -> RetrievalReport:
    S = np.asarray(S)
    by_image, by_text = rank_scores(S)
    truth = list(range(S.shape[0]))
    i2t = {k: recall_at_k(by_image.tolist(), truth, k) for k in RECALL_KS}
    t2i = {k: recall_at_k(by_text.tolist(), truth, k) for k in RECALL_KS}
    return RetrievalReport.from_recalls(i2t, t2i)
