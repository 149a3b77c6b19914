"""Scene-graph fusion network for image-text retrieval, on a numpy autodiff core."""

from .alignment import RetrievalReport
from .graph import PairRecord, SceneGraph, load_dataset, save_dataset, synth_dataset, synth_pair
from .model import ModelParams
from .train import EpochLog, TrainConfig, evaluate, retrieve, train

__all__ = [
    "EpochLog",
    "ModelParams",
    "PairRecord",
    "RetrievalReport",
    "SceneGraph",
    "TrainConfig",
    "evaluate",
    "load_dataset",
    "retrieve",
    "save_dataset",
    "synth_dataset",
    "synth_pair",
    "train",
]
