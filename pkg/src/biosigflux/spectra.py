"""Wavelength grid, species band catalog and the synthetic reflected-light model.

The forward model is a deliberately simple stand-in for radiative transfer:
a smooth continuum multiplied by ``exp(-optical depth)``, where each species
contributes Gaussian bands (in log-wavelength) whose depth grows monotonically
and saturates with the species' positive flux.  It is built so that fluxes are
learnable from spectra and band windows are known exactly; it is not physics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPECIES: tuple[str, ...] = ("O2", "O3", "CH4", "N2O", "CO2", "H2O", "CO", "SO2")

# Above this SNR the noise term is skipped altogether.
NOISELESS_SNR = 1e9


@dataclass(frozen=True)
class WavelengthGrid:
    points: np.ndarray
    resolving_power: float
    lambda_min: float
    lambda_max: float

    def __len__(self) -> int:
        return len(self.points)

    def params(self) -> dict:
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max,
                "resolving_power": self.resolving_power}


def build_wavelength_grid(lambda_min: float = 0.2, lambda_max: float = 2.5,
                          resolving_power: float = 140.0) -> WavelengthGrid:
    """Geometric grid with ratio ``1 + 1/R`` starting at ``lambda_min``.

    The grid stops at the last point not exceeding ``lambda_max``; with the
    defaults that is 355 points.
    """
    if not (lambda_min > 0 and lambda_max > lambda_min):
        raise ValueError(f"need 0 < lambda_min < lambda_max, got ({lambda_min}, {lambda_max})")
    if not resolving_power > 0:
        raise ValueError(f"resolving power must be positive, got {resolving_power}")
    ratio = 1.0 + 1.0 / resolving_power
    n = int(math.floor(math.log(lambda_max / lambda_min) / math.log(ratio))) + 1
    points = lambda_min * ratio ** np.arange(n, dtype=np.float64)
    # guard the floor against rounding at an exact endpoint
    while n > 1 and points[-1] > lambda_max:
        n -= 1
        points = points[:n]
    while lambda_min * ratio ** n <= lambda_max:
        n += 1
        points = lambda_min * ratio ** np.arange(n, dtype=np.float64)
    return WavelengthGrid(points, float(resolving_power), float(lambda_min), float(lambda_max))


@dataclass(frozen=True)
class Band:
    """Absorption band; ``half_width`` is the Gaussian sigma in µm."""

    center: float
    half_width: float
    strength: float


def _default_bands() -> dict[str, list[Band]]:
    table = {
        "O2": [(0.69, 0.012, 0.6), (0.76, 0.015, 1.2), (1.27, 0.02, 0.6)],
        "O3": [(0.26, 0.03, 1.5), (0.60, 0.08, 0.5)],
        "CH4": [(0.89, 0.02, 0.6), (1.70, 0.04, 0.8), (2.32, 0.05, 1.2)],
        "N2O": [(1.52, 0.03, 0.9), (2.11, 0.03, 1.2)],
        "CO2": [(1.60, 0.025, 0.7), (2.03, 0.035, 1.2)],
        "H2O": [(0.94, 0.025, 0.8), (1.12, 0.035, 1.0), (1.40, 0.05, 1.4), (1.88, 0.06, 1.5)],
        "CO": [(1.57, 0.02, 0.8), (2.36, 0.04, 1.3)],
        "SO2": [(0.22, 0.015, 0.8), (0.29, 0.02, 1.2)],
    }
    return {name: [Band(*b) for b in bands] for name, bands in table.items()}


def _default_flux_scale() -> dict[str, float]:
    return {"O2": 1e12, "O3": 1e9, "CH4": 1e11, "N2O": 1e9,
            "CO2": 1e11, "H2O": 1e12, "CO": 1e10, "SO2": 1e9}


@dataclass
class SpeciesCatalog:
    """Species order, band table and flux sampling configuration."""

    names: tuple[str, ...] = SPECIES
    bands: dict[str, list[Band]] = field(default_factory=_default_bands)
    flux_scale: dict[str, float] = field(default_factory=_default_flux_scale)
    sink_probability: float = 0.02
    log_range: tuple[float, float] = (-1.5, 2.5)
    max_depth: float = 1.0
    saturation: float = 3.0

    def __post_init__(self):
        self.names = tuple(self.names)
        if self.names != SPECIES:
            raise ValueError(f"catalog must list exactly {SPECIES} in order, got {self.names}")
        for name in self.names:
            self.bands.setdefault(name, [])
            for band in self.bands[name]:
                if band.strength < 0 or band.half_width <= 0:
                    raise ValueError(f"{name}: invalid band {band}")
            if self.flux_scale.get(name, 0.0) < 0:
                raise ValueError(f"{name}: flux_scale must be >= 0")
        if not 0.0 <= self.sink_probability <= 1.0:
            raise ValueError("sink_probability must lie in [0, 1]")
        lo, hi = self.log_range
        if lo > hi:
            raise ValueError("log_range must be ordered")

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.flux_scale.get(n, 0.0) for n in self.names], dtype=np.float64)

    def validate_for(self, grid: WavelengthGrid) -> None:
        for name in self.names:
            for band in self.bands[name]:
                if not grid.lambda_min <= band.center <= grid.lambda_max:
                    raise ValueError(f"{name} band at {band.center} µm lies outside the grid")

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "bands": {n: [[b.center, b.half_width, b.strength] for b in self.bands[n]] for n in self.names},
            "flux_scale": {n: float(self.flux_scale.get(n, 0.0)) for n in self.names},
            "sink_probability": self.sink_probability,
            "log_range": list(self.log_range),
            "max_depth": self.max_depth,
            "saturation": self.saturation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpeciesCatalog":
        known = {"names", "bands", "flux_scale", "sink_probability", "log_range", "max_depth", "saturation"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown catalog keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "bands" in kwargs:
            kwargs["bands"] = {n: [Band(*map(float, b)) for b in bands] for n, bands in d["bands"].items()}
        if "log_range" in kwargs:
            kwargs["log_range"] = tuple(kwargs["log_range"])
        if "flux_scale" in kwargs:
            kwargs["flux_scale"] = {n: float(v) for n, v in d["flux_scale"].items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "SpeciesCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def continuum(wavelengths: np.ndarray) -> np.ndarray:
    """Smooth toy contrast continuum with a blue (Rayleigh-like) rise."""
    lam = np.asarray(wavelengths, dtype=np.float64)
    return 0.3 + 0.2 * np.exp(-(lam - 0.2) / 0.25)


def band_profile(wavelengths: np.ndarray, band: Band) -> np.ndarray:
    """Unit-height Gaussian in log-wavelength."""
    sigma_log = band.half_width / band.center
    z = (np.log(wavelengths) - math.log(band.center)) / sigma_log
    return np.exp(-0.5 * z * z)


def absorption_depth(fluxes: np.ndarray, catalog: SpeciesCatalog) -> np.ndarray:
    """Per-species depth in [0, max_depth); sinks (and zero-scale species) give zero."""
    fluxes = np.asarray(fluxes, dtype=np.float64)
    scales = catalog.scales
    positive = np.maximum(fluxes, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(scales > 0, np.arcsinh(positive / np.where(scales > 0, scales, 1.0)), 0.0)
    return catalog.max_depth * np.tanh(scaled / catalog.saturation)


def optical_depth_templates(grid: WavelengthGrid, catalog: SpeciesCatalog) -> np.ndarray:
    """``[S, W]`` sum of strength-weighted band profiles per species."""
    lam = grid.points
    out = np.zeros((len(catalog.names), len(lam)))
    for s, name in enumerate(catalog.names):
        for band in catalog.bands[name]:
            out[s] += band.strength * band_profile(lam, band)
    return out


def forward_model(fluxes, grid: WavelengthGrid, catalog: SpeciesCatalog,
                  templates: np.ndarray | None = None) -> np.ndarray:
    """Clean spectrum for one flux vector (or a ``[N, S]`` batch)."""
    fluxes = np.asarray(fluxes, dtype=np.float64)
    if not np.all(np.isfinite(fluxes)):
        raise ValueError("fluxes must be finite")
    if templates is None:
        templates = optical_depth_templates(grid, catalog)
    depth = absorption_depth(fluxes, catalog)
    tau = depth @ templates
    return continuum(grid.points) * np.exp(-tau)


def sample_flux_vector(rng: np.random.Generator, catalog: SpeciesCatalog) -> np.ndarray:
    """Signed fluxes ``sign * scale * exp(u)`` with ``u`` uniform over ``catalog.log_range``."""
    n = len(catalog.names)
    lo, hi = catalog.log_range
    u = rng.uniform(lo, hi, size=n)
    sink = rng.random(n) < catalog.sink_probability
    sign = np.where(sink, -1.0, 1.0)
    return sign * catalog.scales * np.exp(u)


def apply_snr(spectrum, snr: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise with sigma = mean(spectrum) / snr (returns a new array)."""
    if not snr > 0:
        raise ValueError(f"snr must be positive, got {snr}")
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if snr >= NOISELESS_SNR:
        return spectrum.copy()
    sigma = float(np.mean(spectrum)) / snr
    return spectrum + sigma * rng.standard_normal(spectrum.shape)


def band_windows(grid: WavelengthGrid, catalog: SpeciesCatalog, species: str,
                 n_half_widths: float = 2.0) -> np.ndarray:
    """Boolean mask of grid points within ``n_half_widths`` of any band of ``species``."""
    mask = np.zeros(len(grid), dtype=bool)
    for band in catalog.bands[species]:
        mask |= np.abs(grid.points - band.center) <= n_half_widths * band.half_width
    return mask
