"""Heterogeneous scene graphs, the dataset file format and a synthetic generator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import ContractError


class FormatError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, pair_id: str | None, rule: str):
        self.pair_id = pair_id
        self.rule = rule
        where = f"pair {pair_id!r}: " if pair_id is not None else ""
        super().__init__(f"{where}{rule}")


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Object nodes with relation and attribute features attached by incidence.

    ``rel_incidence[i]`` lists the relations touching node ``i`` and
    ``attr_incidence[i]`` the attributes owned by node ``i``.
    """

    node_features: np.ndarray
    relation_features: np.ndarray
    attribute_features: np.ndarray
    adjacency: np.ndarray
    rel_incidence: tuple[tuple[int, ...], ...]
    attr_incidence: tuple[tuple[int, ...], ...]
    agent_init: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        nodes = np.asarray(self.node_features, dtype=np.float64)
        d = nodes.shape[1] if nodes.ndim == 2 else 0
        object.__setattr__(self, "node_features", nodes)
        for attr in ("relation_features", "attribute_features"):
            arr = np.asarray(getattr(self, attr), dtype=np.float64)
            if arr.size == 0:
                arr = arr.reshape(0, d)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "adjacency", np.asarray(self.adjacency))
        object.__setattr__(self, "rel_incidence", tuple(tuple(int(r) for r in s) for s in self.rel_incidence))
        object.__setattr__(self, "attr_incidence", tuple(tuple(int(a) for a in s) for s in self.attr_incidence))
        if self.agent_init is None:
            object.__setattr__(self, "agent_init", np.ones(d))
        for arr in (self.node_features, self.relation_features, self.attribute_features,
                    self.adjacency, self.agent_init):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_rel(self) -> int:
        return self.relation_features.shape[0]

    @property
    def n_attr(self) -> int:
        return self.attribute_features.shape[0]

    @property
    def dim(self) -> int:
        return self.node_features.shape[1]

    def permuted(self, perm: Sequence[int]) -> "SceneGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return SceneGraph(
            self.node_features[perm],
            self.relation_features,
            self.attribute_features,
            self.adjacency[np.ix_(perm, perm)],
            tuple(self.rel_incidence[p] for p in perm),
            tuple(self.attr_incidence[p] for p in perm),
        )

    def to_dict(self) -> dict:
        return {
            "nodes": self.node_features.tolist(),
            "relations": self.relation_features.tolist(),
            "attributes": self.attribute_features.tolist(),
            "adjacency": self.adjacency.astype(int).tolist(),
            "rel_incidence": [list(s) for s in self.rel_incidence],
            "attr_incidence": [list(s) for s in self.attr_incidence],
        }


@dataclass(frozen=True, eq=False)
class PairRecord:
    pair_id: str
    image_graph: SceneGraph
    text_graph: SceneGraph


def validate_graph(g: SceneGraph, pair_id: str | None = None, d: int | None = None) -> None:
    """Raise :class:`ValidationError` unless every graph invariant holds."""

    def fail(rule):
        raise ValidationError(pair_id, rule)

    if g.node_features.ndim != 2 or g.n_nodes < 1:
        fail("node_features must be a nonempty 2-d matrix")
    dim = g.dim if d is None else d
    for label, arr in (("nodes", g.node_features), ("relations", g.relation_features),
                       ("attributes", g.attribute_features)):
        if arr.ndim != 2 or arr.shape[1] != dim:
            fail(f"{label} must have {dim} columns, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            fail(f"{label} contain non-finite values")
    n = g.n_nodes
    adj = g.adjacency
    if adj.ndim != 2 or adj.shape != (n, n):
        fail(f"adjacency must be {n}x{n}, got shape {adj.shape}")
    if not np.all((adj == 0) | (adj == 1)):
        fail("adjacency entries must be 0 or 1")
    if len(g.rel_incidence) != n or len(g.attr_incidence) != n:
        fail("incidence lists must have one entry per node")
    rel_hits = np.zeros(g.n_rel, dtype=int)
    for i, rels in enumerate(g.rel_incidence):
        for r in rels:
            if not 0 <= r < g.n_rel:
                fail(f"node {i} references relation {r} but only {g.n_rel} exist")
            rel_hits[r] += 1
        if len(set(rels)) != len(rels):
            fail(f"node {i} lists a relation twice")
    if np.any(rel_hits == 0):
        fail(f"relation {int(np.argmin(rel_hits))} is incident to no node")
    attr_hits = np.zeros(g.n_attr, dtype=int)
    for i, attrs in enumerate(g.attr_incidence):
        for a in attrs:
            if not 0 <= a < g.n_attr:
                fail(f"node {i} references attribute {a} but only {g.n_attr} exist")
            attr_hits[a] += 1
    if np.any(attr_hits != 1):
        fail(f"attribute {int(np.argmax(attr_hits != 1))} must belong to exactly one node")
    if g.agent_init.shape != (dim,) or not np.all(g.agent_init == 1.0):
        fail("agent_init must be the all-ones vector")


def validate_pair(rec: PairRecord, d: int | None = None) -> None:
    d = rec.image_graph.dim if d is None else d
    validate_graph(rec.image_graph, rec.pair_id, d)
    validate_graph(rec.text_graph, rec.pair_id, d)


def neighbors(g: SceneGraph, i: int) -> tuple[frozenset, frozenset, frozenset]:
    """Object neighbours (self included), incident relations and attributes of node ``i``."""
    if not 0 <= i < g.n_nodes:
        raise ContractError(f"node {i} out of range for {g.n_nodes} nodes")
    adjacent = set(np.flatnonzero(g.adjacency[i]).tolist())
    adjacent.add(i)
    return frozenset(adjacent), frozenset(g.rel_incidence[i]), frozenset(g.attr_incidence[i])


# ---------------------------------------------------------------- file format

def _graph_from_dict(obj: dict, d: int, ctx: str) -> SceneGraph:
    try:
        return SceneGraph(
            np.array(obj["nodes"], dtype=np.float64),
            np.array(obj["relations"], dtype=np.float64),
            np.array(obj["attributes"], dtype=np.float64),
            np.array(obj["adjacency"]),
            tuple(obj["rel_incidence"]),
            tuple(obj["attr_incidence"]),
        )
    except KeyError as exc:
        raise FormatError(f"{ctx}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{ctx}: {exc}") from None


def parse_dataset(text: str, source: str = "<string>") -> list[PairRecord]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "dimension" not in doc or "records" not in doc:
        raise FormatError(f"{source}: expected an object with 'dimension' and 'records'")
    d = doc["dimension"]
    if not isinstance(d, int) or d < 1:
        raise FormatError(f"{source}: dimension must be a positive integer")
    records = []
    seen = set()
    for k, raw in enumerate(doc["records"]):
        ctx = f"{source}: record {k}"
        if not isinstance(raw, dict) or not {"pair_id", "image", "text"} <= raw.keys():
            raise FormatError(f"{ctx}: expected pair_id, image and text")
        pair_id = str(raw["pair_id"])
        ctx = f"{ctx} ({pair_id})"
        rec = PairRecord(pair_id, _graph_from_dict(raw["image"], d, ctx + " image"),
                         _graph_from_dict(raw["text"], d, ctx + " text"))
        validate_pair(rec, d)
        if pair_id in seen:
            raise ValidationError(pair_id, "duplicate pair_id")
        seen.add(pair_id)
        records.append(rec)
    return records


def load_dataset(path) -> list[PairRecord]:
    path = Path(path)
    return parse_dataset(path.read_text(), str(path))


def dump_dataset(records: Sequence[PairRecord]) -> str:
    if not records:
        raise ValueError("cannot serialise an empty dataset")
    doc = {
        "dimension": records[0].image_graph.dim,
        "records": [
            {"pair_id": r.pair_id, "image": r.image_graph.to_dict(), "text": r.text_graph.to_dict()}
            for r in records
        ],
    }
    # json writes floats with repr(), which round-trips binary64 exactly
    return json.dumps(doc)


def save_dataset(path, records: Sequence[PairRecord]) -> None:
    Path(path).write_text(dump_dataset(records))


# ---------------------------------------------------------------- synthetic data

def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _synth_graph(rng: np.random.Generator, latent: np.ndarray, n: int, n_rel: int, n_attr: int,
                 mix: float) -> SceneGraph:
    d = latent.shape[0]

    def features(count):
        return _unit_rows(mix * latent + (1.0 - mix) * rng.standard_normal((count, d)) / np.sqrt(d))

    nodes = features(n)
    adj = np.zeros((n, n), dtype=int)
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        adj[a, b] = adj[b, a] = 1
    extra = rng.random((n, n)) < 0.2
    extra = np.triu(extra, 1)
    adj |= (extra | extra.T).astype(int)

    rel_inc: list[list[int]] = [[] for _ in range(n)]
    for r in range(n_rel):
        if n == 1:
            rel_inc[0].append(r)
            continue
        i, j = rng.choice(n, size=2, replace=False)
        rel_inc[i].append(r)
        rel_inc[j].append(r)
    attr_inc: list[list[int]] = [[] for _ in range(n)]
    for a in range(n_attr):
        attr_inc[int(rng.integers(n))].append(a)
    return SceneGraph(nodes, features(n_rel), features(n_attr), adj,
                      tuple(map(tuple, rel_inc)), tuple(map(tuple, attr_inc)))


def synth_pair(seed: int, n: int, m: int, d: int, n_rel: int, n_attr: int,
               mix: float = 0.6) -> PairRecord:
    """Matched image/text graphs sharing one planted unit latent vector.

    Every feature row is ``mix * latent + (1 - mix) * noise`` normalised to
    unit length, so rows of a matched pair cluster around the same direction.
    """
    if min(n, m, n_rel, n_attr) < 1 or d < 4:
        raise ValueError("counts must be >= 1 and d >= 4")
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal(d)
    latent /= np.linalg.norm(latent)
    image = _synth_graph(rng, latent, n, n_rel, n_attr, mix)
    text = _synth_graph(rng, latent, m, n_rel, n_attr, mix)
    return PairRecord(f"pair-{seed}", image, text)


def synth_dataset(seed: int, pairs: int, n: int, m: int, d: int, n_rel: int = 2, n_attr: int = 2,
                  mix: float = 0.6) -> list[PairRecord]:
    seeds = np.random.SeedSequence(seed).generate_state(pairs, dtype=np.uint64)
    records = []
    for k, s in enumerate(seeds):
        rec = synth_pair(int(s), n, m, d, n_rel, n_attr, mix)
        records.append(PairRecord(f"p{k:05d}", rec.image_graph, rec.text_graph))
    return records
