"""Versioned text checkpoints with a trailing checksum line."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .train import Adam, EpochLog, TrainConfig, TrainState, init_state

FORMAT = "scenematch-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensor_entries(arrays: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": k, "shape": list(np.shape(v)), "values": np.ravel(v).tolist()}
            for k, v in arrays.items()]


def _tensor_dict(entries: list[dict]) -> dict[str, np.ndarray]:
    return {e["name"]: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for e in entries}


def dumps(config: TrainConfig, state: TrainState) -> str:
    opt = state.optimizer
    body = {
        "format": FORMAT,
        "version": VERSION,
        "config": config.to_dict(),
        "epoch": state.epoch,
        "tensors": _tensor_entries(state.params.state()),
        "optimizer": {"step": opt.step_count, "m": _tensor_entries(opt.m), "v": _tensor_entries(opt.v)},
        "rng_state": state.rng.bit_generator.state,
        "logs": [entry.to_tsv() for entry in state.logs],
    }
    text = json.dumps(body)
    return f"{text}\nchecksum sha256 {hashlib.sha256(text.encode()).hexdigest()}\n"


def loads(text: str) -> tuple[TrainConfig, TrainState]:
    body, sep, tail = text.rstrip("\n").rpartition("\n")
    parts = tail.split()
    if not sep or len(parts) != 3 or parts[:2] != ["checksum", "sha256"]:
        raise CheckpointError("checksum line missing: file truncated or not a checkpoint")
    if hashlib.sha256(body.encode()).hexdigest() != parts[2]:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    doc = json.loads(body)
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not an {FORMAT} document")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} is not supported (expected {VERSION})")
    config = TrainConfig.from_dict(doc["config"])
    state = init_state(config)
    state.params.load_state(_tensor_dict(doc["tensors"]))
    opt = Adam(state.params.named_parameters())
    opt.step_count = int(doc["optimizer"]["step"])
    opt.m = _tensor_dict(doc["optimizer"]["m"])
    opt.v = _tensor_dict(doc["optimizer"]["v"])
    state.optimizer = opt
    state.rng.bit_generator.state = doc["rng_state"]
    state.epoch = int(doc["epoch"])
    state.logs = [EpochLog.from_tsv(line) for line in doc["logs"]]
    return config, state


def save_checkpoint(path, config: TrainConfig, state: TrainState) -> None:
    Path(path).write_text(dumps(config, state))


def load_checkpoint(path) -> tuple[TrainConfig, TrainState]:
    return loads(Path(path).read_text())
