"""Strict JSON run configuration shared by the command-line entry points."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .models import CONFIG_TYPES, MC_PASSES, MODEL_KINDS, FULL_TRAINING, TrainConfig
from .models.config import desk_model_config, desk_train_config

PRESETS = ("full", "desk")


@dataclass
class RunConfig:
    """Everything a command needs besides its input files.

    ``model_config`` and ``train`` hold overrides on top of the chosen preset
    (``"full"`` defaults or the reduced ``"desk"`` schedule); both are checked
    against their schemas when resolved.
    """

    model: str = "squat"
    preset: str = "full"
    model_config: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 42
    loss_mode: str = "nll"
    passes: int | None = None
    space: str = "transformed"
    snr_list: list = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0, 50.0, 100.0])
    n_samples: int = 1000
    snr_min: float = 5.0
    snr_max: float = 100.0
    split_ratios: list = field(default_factory=lambda: [3, 1, 1])
    catalog: str | None = None
    data: str | None = None
    checkpoint: str | None = None
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.loss_mode not in ("mse", "nll"):
            raise ValueError(f"loss_mode must be 'mse' or 'nll', got {self.loss_mode!r}")
        if self.space not in ("transformed", "physical"):
            raise ValueError(f"space must be 'transformed' or 'physical', got {self.space!r}")
        if self.passes is not None and self.passes < 2:
            raise ValueError(f"passes must be at least 2, got {self.passes}")
        if not 0 < self.snr_min <= self.snr_max:
            raise ValueError(f"need 0 < snr_min <= snr_max, got {self.snr_min}, {self.snr_max}")
        if not self.snr_list or any(s <= 0 for s in self.snr_list):
            raise ValueError("snr_list must be nonempty and positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"failed to read config {path}: {exc.strerror or exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, **overrides) -> "RunConfig":
        """Copy with every non-None override applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def model_settings(self):
        base = desk_model_config(self.model) if self.preset == "desk" else CONFIG_TYPES[self.model]()
        return CONFIG_TYPES[self.model].from_dict({**base.to_dict(), **self.model_config})

    def train_settings(self) -> TrainConfig:
        base = desk_train_config(self.model) if self.preset == "desk" else FULL_TRAINING[self.model]
        merged = {**base.to_dict(), "loss_mode": self.loss_mode, "seed": self.seed, **self.train}
        if "epochs" in self.train and "warmup_epochs" not in self.train:
            # keep the preset's warmup share when only the budget changes
            merged["warmup_epochs"] = base.warmup_epochs * merged["epochs"] // base.epochs
        return TrainConfig.from_dict(merged)

    def mc_passes(self, kind: str | None = None) -> int:
        return self.passes if self.passes is not None else MC_PASSES[kind or self.model]

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
