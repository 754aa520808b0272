"""CNN, variational CNN, ViT and SQuAT regressors over 355-point spectra."""
from __future__ import annotations

import numpy as np

from .cnn import BCNN, CNN, ModelOutput, bcnn_forward, bcnn_loss, build_bcnn, build_cnn, cnn_forward
from .config import (
    MC_PASSES,
    FULL_TRAINING,
    CnnConfig,
    SquatConfig,
    TrainConfig,
    VitConfig,
    default_model_config,
    desk_model_config,
    desk_train_config,
)
from .squat import (
    PriorMask,
    SQuAT,
    biased_cross_attention,
    build_prior_mask,
    build_squat,
    default_prior,
    mix_prior,
    squat_forward,
)
from .training import PlateauSchedule, TrainResult, predict_mean, prepare, train
from .transformer import ViT, build_vit, vit_forward

MODEL_KINDS = ("cnn", "bcnn", "vit", "squat")
CONFIG_TYPES = {"cnn": CnnConfig, "bcnn": CnnConfig, "vit": VitConfig, "squat": SquatConfig}


def build_model(kind: str, config=None, seed: int = 42, prior: PriorMask | None = None, dtype=np.float32):
    """Construct any of the four architectures with a seeded initialiser."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    config = default_model_config(kind) if config is None else config
    rng = np.random.default_rng(seed)
    if kind == "cnn":
        return CNN(config, rng, dtype)
    if kind == "bcnn":
        return BCNN(config, rng, dtype)
    if kind == "vit":
        return ViT(config, rng, dtype)
    return SQuAT(config, prior if prior is not None else default_prior(config), rng, dtype)


__all__ = [
    "BCNN", "CNN", "CONFIG_TYPES", "CnnConfig", "MC_PASSES", "MODEL_KINDS", "ModelOutput",
    "FULL_TRAINING", "PlateauSchedule", "PriorMask", "SQuAT", "SquatConfig", "TrainConfig",
    "TrainResult", "ViT", "VitConfig", "bcnn_forward", "bcnn_loss", "biased_cross_attention",
    "build_bcnn", "build_cnn", "build_model", "build_prior_mask", "build_squat", "build_vit",
    "cnn_forward", "default_model_config", "default_prior", "desk_model_config",
    "desk_train_config", "mix_prior", "predict_mean", "prepare", "squat_forward", "train",
    "vit_forward",
]
