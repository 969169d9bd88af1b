"""Multimodal routing: interpretable fusion of unimodal, bimodal and trimodal features."""
from .encoders import FEATURES, MODALITIES
from .estimator import MultimodalRoutingClassifier
from .model import Model, TrainConfig
from .training import Checkpoint, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "FEATURES",
    "MODALITIES",
    "MultimodalRoutingClassifier",
    "Model",
    "TrainConfig",
    "Checkpoint",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]
__version__ = "0.1.0"
