"""Architecture and training hyperparameters.

Defaults are the best configurations quoted for the full-size models; the
``desk_*`` helpers return the reduced configurations used for CPU-scale runs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

N_SPECIES = 8
SPECTRUM_LENGTH = 355


def _strict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
    return cls(**kwargs)


@dataclass
class CnnConfig:
    filters: list[int] = field(default_factory=lambda: [32, 64, 128, 256, 512])
    kernels: list[int] = field(default_factory=lambda: [13, 11, 9, 7, 5])
    fc: list[int] = field(default_factory=lambda: [256, 128])
    dropout: float = 0.5
    output_dim: int = N_SPECIES
    input_length: int = SPECTRUM_LENGTH
    # posterior sigma at initialisation (variational variant only)
    init_sigma: float = 0.05

    def __post_init__(self):
        if len(self.filters) != len(self.kernels):
            raise ValueError("filters and kernels must have the same length")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("CNN kernels must be odd")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CnnConfig":
        return _strict(cls, d)


@dataclass
class VitConfig:
    dim: int = 256
    depth: int = 6
    heads: int = 8
    mlp_ratio: int = 4
    dropout: float = 0.2
    patch_size: int = 10
    stride: int = 1
    output_dim: int = N_SPECIES
    input_length: int = SPECTRUM_LENGTH

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")

    @property
    def n_tokens(self) -> int:
        return (self.input_length - self.patch_size) // self.stride + 1 + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VitConfig":
        return _strict(cls, d)


@dataclass
class SquatConfig:
    dim: int = 256
    depth: int = 6
    heads: int = 8
    mlp_ratio: int = 4
    dropout: float = 0.2
    patch_sizes: list[int] = field(default_factory=lambda: [3, 5, 10])
    branch_channels: int | None = None
    n_queries: int = N_SPECIES
    interaction_layers: int = 1
    alpha_logit_init: float = 0.0
    prior_width_scale: float = 1.0
    input_length: int = SPECTRUM_LENGTH

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.n_queries != N_SPECIES:
            raise ValueError(f"n_queries must equal the species count {N_SPECIES}")

    @property
    def channels_per_branch(self) -> int:
        return self.branch_channels or self.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SquatConfig":
        return _strict(cls, d)


@dataclass
class TrainConfig:
    epochs: int = 130
    lr: float = 1e-5
    batch_size: int = 128
    plateau_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-7
    stop_patience: int = 10
    # None -> 1 / (batches per epoch)
    beta_kl: float | None = None
    loss_mode: str = "nll"
    # epochs trained with the plain squared-error term before switching to loss_mode
    warmup_epochs: int = 0
    seed: int = 42

    def __post_init__(self):
        if self.loss_mode not in ("mse", "nll"):
            raise ValueError(f"loss_mode must be 'mse' or 'nll', got {self.loss_mode!r}")
        if self.beta_kl is not None and self.beta_kl < 0:
            raise ValueError("beta_kl must be non-negative")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _strict(cls, d)


# Per-model budgets and optimiser settings for the full-size models.
FULL_TRAINING = {
    "cnn": TrainConfig(epochs=130, lr=1e-5, batch_size=128),
    "bcnn": TrainConfig(epochs=140, lr=1e-5, batch_size=128),
    "vit": TrainConfig(epochs=50, lr=1e-4, batch_size=64),
    "squat": TrainConfig(epochs=35, lr=1e-4, batch_size=64),
}

MC_PASSES = {"bcnn": 50, "squat": 30, "cnn": 30, "vit": 30}


def default_model_config(kind: str):
    return {"cnn": CnnConfig, "bcnn": CnnConfig, "vit": VitConfig, "squat": SquatConfig}[kind]()


def desk_model_config(kind: str):
    """Reduced widths/depths that train in minutes on one CPU core."""
    if kind in ("cnn", "bcnn"):
        return CnnConfig(filters=[16, 32, 32, 64, 64], fc=[128, 64],
                         dropout=0.1 if kind == "bcnn" else 0.2, init_sigma=0.01)
    if kind == "vit":
        return VitConfig(dim=32, depth=1, heads=2, mlp_ratio=2, dropout=0.1, stride=5)
    if kind == "squat":
        return SquatConfig(dim=32, depth=1, heads=2, mlp_ratio=2, dropout=0.1, branch_channels=16)
    raise ValueError(f"unknown model kind {kind!r}")


def desk_train_config(kind: str) -> TrainConfig:
    """Short schedules for the desk-scale benchmark; SQuAT's stride-1 tokens make its epochs the slowest."""
    epochs = {"cnn": 30, "bcnn": 30, "vit": 30, "squat": 15}[kind]
    bayes = kind == "bcnn"
    # the variational net fits means under squared error first, then the variance head under NLL
    return TrainConfig(epochs=epochs, lr=1e-3, batch_size=64, plateau_patience=3, stop_patience=6,
                       beta_kl=1e-5 if bayes else None, warmup_epochs=20 if bayes else 0)
