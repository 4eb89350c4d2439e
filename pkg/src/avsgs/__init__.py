"""Audio source separation conditioned on visual scene graphs.

Submodules: ``spectro`` (signal transforms), ``scenegraph`` (detections to
graphs), ``graphnet`` (graph embeddings), ``separator`` (U-Net masks),
``losses``, ``trainer``, ``metrics``, ``dataprep``, ``fixtures``, ``cli``.
"""
from __future__ import annotations

from .metrics import bss_eval, evaluate
from .scenegraph import Detection, PrincipalSpec, SceneGraph, build_graph
from .spectro import SpectroConfig, log_spectrogram, stft
from .trainer import TrainConfig, infer_separate, load_checkpoint, parse_config, train

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "PrincipalSpec",
    "SceneGraph",
    "SpectroConfig",
    "TrainConfig",
    "build_graph",
    "bss_eval",
    "evaluate",
    "infer_separate",
    "load_checkpoint",
    "log_spectrogram",
    "parse_config",
    "stft",
    "train",
]
