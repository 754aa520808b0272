"""Regress surface gas fluxes from reflected-light spectra with numpy-only neural networks.

Subpackages and modules:

- ``spectra``, ``preprocessing``, ``dataset``: wavelength grid, synthetic
  forward model, normalization and the SPECDS01 dataset container.
- ``autodiff``: reverse-mode autodiff, layers, Adam and gradient checking.
- ``models``: CNN, variational CNN, ViT and SQuAT plus the training loop.
- ``uncertainty``: Monte Carlo prediction, variance decomposition, calibration.
- ``evaluation``: metrics, error correlations, SNR sweeps, attention export.
- ``checkpoint``, ``config``, ``cli``: persistence and the command line.
"""
from .dataset import SpectralDataset, generate_dataset, read_dataset, write_dataset
from .preprocessing import Normalizer, asinh_transform, inverse_asinh_transform
from .spectra import SPECIES, SpeciesCatalog, build_wavelength_grid

__version__ = "0.1.0"

__all__ = [
    "SPECIES", "Normalizer", "SpeciesCatalog", "SpectralDataset", "asinh_transform",
    "build_wavelength_grid", "generate_dataset", "inverse_asinh_transform", "read_dataset",
    "write_dataset",
]
