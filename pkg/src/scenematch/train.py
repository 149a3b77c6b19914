"""Training loop, evaluation and retrieval."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .alignment import RECALL_KS, RetrievalReport, report_from_scores
from .graph import PairRecord, SceneGraph
from .model import ModelParams, batch_loss, embed_pair, score_components, similarity_matrix

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d: int
    K: int = 8
    alpha_init: float = 5.0
    beta_init: float = 0.0
    delta: float = 0.3
    margin: float = 0.2
    batch_size: int = 64
    epochs: int = 30
    learning_rate: float = 2e-4
    lr_decay_epoch: int | None = None
    lr_decay_factor: float = 0.1
    seed: int = 0
    attention_blocks: int = 1
    val_fraction: float = 0.2
    loss_reduction: str = "sum"

    def __post_init__(self):
        for name in ("d", "K", "batch_size", "attention_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0 or self.margin <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning_rate, margin and lr_decay_factor must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if not all(np.isfinite([self.alpha_init, self.beta_init])):
            raise ValueError("alpha_init and beta_init must be finite")

    @property
    def decay_epoch(self) -> int:
        return self.epochs // 2 if self.lr_decay_epoch is None else self.lr_decay_epoch

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * (self.lr_decay_factor if epoch >= self.decay_epoch else 1.0)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    """One row per epoch.

    ``ratio_image``/``ratio_text`` are e^a / (e^a + e^b) for the parameters
    the epoch starts from; ``mean_loss`` averages the batch losses seen during
    the epoch; ``val_rsum`` is measured after the epoch's updates.
    """

    epoch: int
    mean_loss: float
    lr: float
    ratio_image: float
    ratio_text: float
    val_rsum: float

    HEADER = ("epoch", "mean_loss", "lr", "ratio_image", "ratio_text", "val_rsum")

    def to_tsv(self) -> str:
        return "\t".join([str(self.epoch)] + [repr(float(getattr(self, k))) for k in self.HEADER[1:]])

    @classmethod
    def from_tsv(cls, line: str) -> "EpochLog":
        parts = line.rstrip("\n").split("\t")
        return cls(int(parts[0]), *(float(x) for x in parts[1:]))


class Adam:
    def __init__(self, params: dict[str, nx.Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** t)
            v_hat = self.v[k] / (1 - self.beta2 ** t)
            # new array: tensors handed out earlier keep their old values
            p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    params: ModelParams
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    logs: list[EpochLog] = field(default_factory=list)


def init_state(config: TrainConfig) -> TrainState:
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = ModelParams.init(config.d, config.K, config.alpha_init, config.beta_init,
                              config.attention_blocks, config.delta, config.margin,
                              rng=np.random.default_rng(seeds[0]))
    return TrainState(params, Adam(params.named_parameters()), np.random.default_rng(seeds[1]))


def split_dataset(config: TrainConfig, dataset: Sequence[PairRecord]) -> tuple[list, list]:
    """Seeded train/validation split; with no validation share, validate on train."""
    n_val = int(round(config.val_fraction * len(dataset)))
    if n_val == 0 or n_val >= len(dataset):
        return list(dataset), list(dataset)
    order = np.random.default_rng([config.seed, 7]).permutation(len(dataset))
    val = sorted(order[:n_val])
    train_idx = sorted(order[n_val:])
    return [dataset[i] for i in train_idx], [dataset[i] for i in val]


def train(config: TrainConfig, dataset: Sequence[PairRecord], state: TrainState | None = None,
          on_epoch: Callable[[EpochLog, TrainState], None] | None = None) -> TrainState:
    """Run (or resume) training until ``config.epochs`` epochs are done."""
    if not dataset:
        raise TrainingError("dataset is empty")
    d = dataset[0].image_graph.dim
    if d != config.d:
        raise nx.DimensionError(f"dataset has d={d}, config says d={config.d}")
    state = init_state(config) if state is None else state
    train_set, val_set = split_dataset(config, dataset)
    params = state.params
    while state.epoch < config.epochs:
        epoch = state.epoch
        lr = config.lr_at(epoch)
        ratio_image, ratio_text = params.fusion_ratios()
        order = state.rng.permutation(len(train_set))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            with nx.Tape() as tape:
                loss, _ = batch_loss(params, batch, config.loss_reduction)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch} batch {b} "
                                    f"(pairs {[r.pair_id for r in batch][:4]}...)")
            grads = tape.backward(loss, state.optimizer.params)
            state.optimizer.step(grads, lr)
            losses.append(value)
        report = evaluate(params, val_set, config)
        entry = EpochLog(epoch, float(np.mean(losses)), lr, ratio_image, ratio_text, report.rsum)
        state.logs.append(entry)
        state.epoch += 1
        log.info("%s", entry.to_tsv())
        if on_epoch is not None:
            on_epoch(entry, state)
    return state


def evaluate(params: ModelParams, dataset: Sequence[PairRecord], config: TrainConfig | None = None,
             delta: float | None = None, chunk: int = 256) -> RetrievalReport:
    """All images against all texts; recall@1/5/10 both ways plus rSum."""
    if delta is None:
        delta = config.delta if config is not None else params.align.delta
    S = score_matrix(params, dataset, delta, chunk)
    return report_from_scores(S)


def score_matrix(params: ModelParams, dataset: Sequence[PairRecord], delta: float, chunk: int = 256) -> np.ndarray:
    if len(dataset) < max(RECALL_KS):
        log.warning("gallery of %d items is smaller than k=%d; recall uses the whole gallery",
                    len(dataset), max(RECALL_KS))
    S_G, S_L = score_components(params, [r.image_graph for r in dataset],
                                [r.text_graph for r in dataset], chunk)
    return S_G.value + delta * S_L.value


def delta_sweep(params: ModelParams, dataset: Sequence[PairRecord], deltas: Sequence[float],
                chunk: int = 256) -> list[tuple[float, RetrievalReport]]:
    """Reports for several delta values from one pass over the pair grid."""
    S_G, S_L = score_components(params, [r.image_graph for r in dataset],
                                [r.text_graph for r in dataset], chunk)
    return [(dl, report_from_scores(S_G.value + dl * S_L.value)) for dl in deltas]


@dataclass
class RetrievalHit:
    rank: int
    index: int
    score: float
    region_word_pairs: list[tuple[int, int, float]] = field(default_factory=list)


def retrieve(params: ModelParams, query: SceneGraph, gallery: Sequence[SceneGraph], topk: int = 5,
             explain: bool = False, explain_pairs: int = 5, query_modality: str = "image",
             delta: float | None = None) -> list[RetrievalHit]:
    """Rank a gallery of the other modality against ``query``.

    With ``explain``, the best hit also carries its strongest region-word
    pairs ``(region, word, A[region, word])`` from the local affinity matrix.
    """
    if not gallery:
        raise ValueError("gallery is empty")
    if query_modality not in ("image", "text"):
        raise ValueError("query_modality must be 'image' or 'text'")
    delta = params.align.delta if delta is None else delta
    if query_modality == "image":
        S = similarity_matrix(params, [query], list(gallery), delta).value[0]
    else:
        S = similarity_matrix(params, list(gallery), [query], delta).value[:, 0]
    order = np.argsort(-S, kind="stable")[:topk]
    hits = [RetrievalHit(r + 1, int(i), float(S[i])) for r, i in enumerate(order)]
    if explain and hits:
        best = gallery[hits[0].index]
        image, text = (query, best) if query_modality == "image" else (best, query)
        _, A = embed_pair(params, image, text)
        hits[0].region_word_pairs = top_region_word_pairs(A.value, explain_pairs)
    return hits


def top_region_word_pairs(A: np.ndarray, count: int) -> list[tuple[int, int, float]]:
    flat = np.argsort(-A, axis=None, kind="stable")[:max(count, 0)]
    return [(int(i), int(j), float(A[i, j])) for i, j in zip(*np.unravel_index(flat, A.shape))]
