"""Synthetic dataset generation, deterministic splitting and the SPECDS01 container.

Layout (little-endian)::

    b"SPECDS01" | u32 version | u64 n_samples | u32 n_wavelengths | u32 n_species
    u64 metadata length | UTF-8 JSON metadata
    float32 spectra [N, W] | float64 fluxes [N, S] | float32 snr [N] | u8 split [N]
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectra import (
    SpeciesCatalog,
    WavelengthGrid,
    apply_snr,
    build_wavelength_grid,
    forward_model,
    optical_depth_templates,
    sample_flux_vector,
)

MAGIC = b"SPECDS01"
VERSION = 1
SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_RATIOS = (3, 1, 1)
_HEADER = struct.Struct("<8sIQII")
_U64 = struct.Struct("<Q")


class DatasetFormatError(ValueError):
    """Raised when a file is not a readable SPECDS01 container."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason} (expected magic {MAGIC.decode()} version {VERSION})")
        self.path = str(path)


@dataclass
class SpectrumSample:
    spectrum: np.ndarray
    fluxes: np.ndarray
    snr: float
    sample_id: int
    split: str


@dataclass
class SpectralDataset:
    spectra: np.ndarray
    fluxes: np.ndarray
    snr: np.ndarray
    split: np.ndarray
    metadata: dict
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.spectra), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.spectra)

    @property
    def grid(self) -> WavelengthGrid:
        g = self.metadata["grid"]
        return build_wavelength_grid(g["lambda_min"], g["lambda_max"], g["resolving_power"])

    @property
    def catalog(self) -> SpeciesCatalog:
        return SpeciesCatalog.from_dict(self.metadata["catalog"])

    def partition(self, name: str) -> "SpectralDataset":
        code = SPLITS.index(name)
        keep = self.split == code
        return SpectralDataset(self.spectra[keep], self.fluxes[keep], self.snr[keep],
                               self.split[keep], self.metadata, self.sample_ids[keep])

    def sample(self, i: int) -> SpectrumSample:
        return SpectrumSample(self.spectra[i], self.fluxes[i], float(self.snr[i]),
                              int(self.sample_ids[i]), SPLITS[int(self.split[i])])

    def clean_spectra(self) -> np.ndarray:
        """Noise-free spectra regenerated from the stored fluxes."""
        grid, catalog = self.grid, self.catalog
        return forward_model(self.fluxes, grid, catalog, optical_depth_templates(grid, catalog))

    def fingerprint(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()[:16]


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    """Independent per-sample stream; results do not depend on generation order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(sample_id)]))


def _block_codes(block: int, seed: int, ratios) -> np.ndarray:
    size = sum(ratios)
    key = np.random.SeedSequence([int(seed), int(block), 0x5B117])
    perm = np.random.default_rng(key).permutation(size)
    return np.searchsorted(np.cumsum(ratios), perm, side="right").astype(np.uint8)


def split_code(sample_id: int, seed: int, ratios=DEFAULT_SPLIT_RATIOS) -> int:
    """Split (0 train, 1 val, 2 test) as a pure function of (sample_id, seed).

    Samples are grouped in consecutive blocks of ``sum(ratios)``; each block's
    slots are permuted by a (seed, block)-keyed stream, so every full block
    contributes exactly ``ratios`` samples to the three splits.
    """
    size = sum(ratios)
    return int(_block_codes(int(sample_id) // size, seed, ratios)[int(sample_id) % size])


def split_codes(n: int, seed: int, ratios=DEFAULT_SPLIT_RATIOS) -> np.ndarray:
    size = sum(ratios)
    n_blocks = -(-n // size)
    codes = np.concatenate([_block_codes(b, seed, ratios) for b in range(n_blocks)])
    return codes[:n]


def generate_dataset(n: int, seed: int = 42, snr_range=(5.0, 100.0),
                     catalog: SpeciesCatalog | None = None, grid: WavelengthGrid | None = None,
                     split_ratios=DEFAULT_SPLIT_RATIOS) -> SpectralDataset:
    """Draw ``n`` synthetic samples; SNR is log-uniform over ``snr_range``."""
    if n < 10:
        raise ValueError(f"need n >= 10 samples, got {n}")
    lo, hi = float(snr_range[0]), float(snr_range[1])
    if not 0 < lo <= hi:
        raise ValueError(f"invalid snr_range {snr_range}")
    catalog = SpeciesCatalog() if catalog is None else catalog
    grid = build_wavelength_grid() if grid is None else grid
    catalog.validate_for(grid)
    templates = optical_depth_templates(grid, catalog)

    S, W = len(catalog.names), len(grid)
    spectra = np.empty((n, W), dtype=np.float32)
    fluxes = np.empty((n, S), dtype=np.float64)
    snr = np.empty(n, dtype=np.float32)
    for i in range(n):
        rng = sample_rng(seed, i)
        fluxes[i] = sample_flux_vector(rng, catalog)
        snr[i] = np.exp(rng.uniform(np.log(lo), np.log(hi)))
        clean = forward_model(fluxes[i], grid, catalog, templates)
        spectra[i] = apply_snr(clean, float(snr[i]), rng)
    split = split_codes(n, seed, split_ratios)
    counts = {name: int(np.sum(split == k)) for k, name in enumerate(SPLITS)}
    metadata = {
        "grid": grid.params(),
        "catalog": catalog.to_dict(),
        "seed": int(seed),
        "snr_range": [lo, hi],
        "split_ratios": list(split_ratios),
        "split_counts": counts,
    }
    return SpectralDataset(spectra, fluxes, snr, split, metadata)


def to_bytes(ds: SpectralDataset) -> bytes:
    meta = json.dumps(ds.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    n, w = ds.spectra.shape
    s = ds.fluxes.shape[1]
    parts = [
        _HEADER.pack(MAGIC, VERSION, n, w, s),
        _U64.pack(len(meta)),
        meta,
        np.ascontiguousarray(ds.spectra, dtype="<f4").tobytes(),
        np.ascontiguousarray(ds.fluxes, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.snr, dtype="<f4").tobytes(),
        np.ascontiguousarray(ds.split, dtype="u1").tobytes(),
    ]
    return b"".join(parts)


def write_dataset(ds: SpectralDataset, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(ds))
    except OSError as exc:
        raise OSError(f"failed to write dataset to {path}: {exc.strerror or exc}") from exc
    return path


def read_dataset(path: str | Path) -> SpectralDataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read dataset {path}: {exc.strerror or exc}") from exc
    if len(raw) < _HEADER.size + _U64.size:
        raise DatasetFormatError(path, "file too short")
    magic, version, n, w, s = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(path, f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(path, f"unsupported version {version}")
    off = _HEADER.size
    (meta_len,) = _U64.unpack_from(raw, off)
    off += _U64.size
    metadata = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len

    def take(dtype, count):
        nonlocal off
        nbytes = np.dtype(dtype).itemsize * count
        if off + nbytes > len(raw):
            raise DatasetFormatError(path, "truncated payload")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    spectra = take("<f4", n * w).reshape(n, w)
    fluxes = take("<f8", n * s).reshape(n, s)
    snr = take("<f4", n)
    split = take("u1", n)
    return SpectralDataset(spectra.astype(np.float32), fluxes.astype(np.float64),
                           snr.astype(np.float32), split, metadata)
