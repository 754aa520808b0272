"""Per-wavelength z-scoring and the per-species asinh target transform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-8


def asinh_transform(y, beta):
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    return np.arcsinh(np.asarray(y, dtype=np.float64) / beta)


def inverse_asinh_transform(y_prime, beta):
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    return beta * np.sinh(np.asarray(y_prime, dtype=np.float64))


@dataclass
class Normalizer:
    """Training-split statistics: spectrum mean/std per wavelength, asinh scale per species."""

    mean: np.ndarray
    std: np.ndarray
    beta: np.ndarray

    @classmethod
    def fit(cls, spectra: np.ndarray, fluxes: np.ndarray) -> "Normalizer":
        spectra = np.asarray(spectra, dtype=np.float64)
        fluxes = np.asarray(fluxes, dtype=np.float64)
        if len(spectra) == 0:
            raise ValueError("cannot fit a normalizer on an empty training set")
        if len(spectra) < 2:
            raise ValueError("need at least 2 training samples to fit a normalizer")
        mean = spectra.mean(axis=0)
        std = np.maximum(spectra.std(axis=0), STD_FLOOR)
        # linear interpolation between order statistics
        beta = np.percentile(np.abs(fluxes), 90, axis=0, method="linear")
        beta = np.where(beta > 0, beta, 1.0)
        return cls(mean, std, beta)

    def apply(self, spectra) -> np.ndarray:
        return (np.asarray(spectra, dtype=np.float64) - self.mean) / self.std

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def transform_targets(self, fluxes) -> np.ndarray:
        return asinh_transform(fluxes, self.beta)

    def inverse_targets(self, y_prime) -> np.ndarray:
        return inverse_asinh_transform(y_prime, self.beta)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["beta"], dtype=np.float64))


def fit_normalizer(dataset) -> Normalizer:
    """Fit on the training partition of ``dataset`` only."""
    train = dataset.partition("train")
    return Normalizer.fit(train.spectra, train.fluxes)
