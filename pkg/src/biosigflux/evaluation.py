"""Point metrics, error correlations, SNR sweeps and attention export, with CSV writers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.tensor import no_grad
from .models.training import predict_mean
from .preprocessing import Normalizer
from .spectra import SPECIES, apply_snr
from .uncertainty import is_degenerate, pearson

DEFAULT_SNR_LIST = (5.0, 10.0, 20.0, 40.0, 50.0, 100.0)
SPACES = ("transformed", "physical")


@dataclass
class MetricsReport:
    species: tuple[str, ...]
    r2: list  # per species; None where truth is constant
    rmse: list
    mae: list
    aggregate_r2: float | None
    aggregate_rmse: float
    aggregate_mae: float
    mean_species_r2: float | None
    space: str
    n_samples: int

    def aggregate_line(self) -> str:
        r2 = "undefined" if self.aggregate_r2 is None else f"{self.aggregate_r2:.6f}"
        return (f"aggregate space={self.space} n={self.n_samples} r2={r2} "
                f"rmse={self.aggregate_rmse:.6f} mae={self.aggregate_mae:.6f}")


def _r2(pred: np.ndarray, truth: np.ndarray) -> float | None:
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((pred - truth) ** 2)) / ss_tot


def point_metrics(pred, truth, space: str = "transformed", species=SPECIES) -> MetricsReport:
    """R², RMSE and MAE per species and on the pooled flattened vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} must be matching [N, S] arrays")
    if pred.shape[0] < 2:
        raise ValueError("point_metrics needs at least 2 samples")
    if space not in SPACES:
        raise ValueError(f"unknown metric space {space!r}")
    err = pred - truth
    r2 = [_r2(pred[:, s], truth[:, s]) for s in range(pred.shape[1])]
    defined = [v for v in r2 if v is not None]
    return MetricsReport(
        species=tuple(species),
        r2=r2,
        rmse=np.sqrt(np.mean(err ** 2, axis=0)).tolist(),
        mae=np.mean(np.abs(err), axis=0).tolist(),
        aggregate_r2=_r2(pred.ravel(), truth.ravel()),
        aggregate_rmse=float(np.sqrt(np.mean(err ** 2))),
        aggregate_mae=float(np.mean(np.abs(err))),
        mean_species_r2=float(np.mean(defined)) if defined else None,
        space=space,
        n_samples=pred.shape[0],
    )


@dataclass
class ErrorCorrelationMatrix:
    species: tuple[str, ...]
    matrix: np.ndarray  # NaN marks undefined rows/columns
    undefined: list[str] = field(default_factory=list)


def error_correlation(pred, truth, species=SPECIES) -> ErrorCorrelationMatrix:
    """Pearson r between per-species error vectors; zero-variance species are marked undefined."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} must be matching [N, S] arrays")
    if pred.shape[0] < 3:
        raise ValueError("error_correlation needs at least 3 samples")
    err = pred - truth
    S = err.shape[1]
    m = np.full((S, S), np.nan)
    ok = [not is_degenerate(err[:, s]) for s in range(S)]
    for i in range(S):
        if not ok[i]:
            continue
        m[i, i] = 1.0
        for j in range(i + 1, S):
            if ok[j]:
                m[i, j] = m[j, i] = pearson(err[:, i], err[:, j])
    undefined = [species[s] for s in range(S) if not ok[s]]
    return ErrorCorrelationMatrix(tuple(species), m, undefined)


def _snr_rng(seed: int, snr: float, sample_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round(snr * 1000)), int(sample_id)]))


def renoise(clean: np.ndarray, sample_ids, snr: float, seed: int) -> np.ndarray:
    """Deterministic noise at one SNR level, keyed by (seed, level, sample id)."""
    return np.stack([apply_snr(c, snr, _snr_rng(seed, snr, sid)) for c, sid in zip(clean, sample_ids)])


def snr_sweep(model, dataset, normalizer: Normalizer, snr_list=DEFAULT_SNR_LIST, seed: int = 42,
              model_name: str | None = None) -> list[dict]:
    """Re-noise the clean test spectra at each level and score point predictions in transformed space."""
    if not getattr(model, "trained", False):
        raise ValueError("snr_sweep requires a trained model")
    snr_list = list(snr_list)
    if not snr_list:
        raise ValueError("snr_list must be nonempty")
    test = dataset.partition("test")
    if len(test) < 2:
        raise ValueError("snr_sweep needs at least 2 test samples")
    clean = test.clean_spectra()
    truth = normalizer.transform_targets(test.fluxes)
    name = model_name or model.kind
    rows = []
    for snr in snr_list:
        x = normalizer.apply(renoise(clean, test.sample_ids, snr, seed))[:, None, :].astype(model.dtype)
        rep = point_metrics(predict_mean(model, x), truth)
        rows.append({"snr": float(snr), "model": name, "r2": rep.aggregate_r2, "rmse": rep.aggregate_rmse})
    return rows


@dataclass
class AttentionExport:
    wavelength: np.ndarray
    spectrum: np.ndarray
    raw: np.ndarray  # head-averaged [K, T] before rescaling
    normalized: np.ndarray  # each row divided by its own max
    species: tuple[str, ...] = SPECIES


def export_attention(model, spectrum, normalizer: Normalizer, wavelength=None) -> AttentionExport:
    """Head-averaged prior-mixed attention for one spectrum, max-normalized per species."""
    if getattr(model, "kind", None) != "squat":
        raise ValueError("attention export requires a squat checkpoint")
    spectrum = np.asarray(spectrum, dtype=np.float64)
    x = normalizer.apply(spectrum[None])[:, None, :].astype(model.dtype)
    with no_grad():
        out = model(x)
    raw = out.attention.data[0].mean(axis=0).astype(np.float64)
    peak = raw.max(axis=1, keepdims=True)
    normalized = np.divide(raw, peak, out=np.zeros_like(raw), where=peak > 0)
    wavelength = model.prior.token_centers if wavelength is None else np.asarray(wavelength)
    return AttentionExport(np.asarray(wavelength, dtype=np.float64), spectrum, raw, normalized,
                           tuple(SPECIES[:raw.shape[0]]))


def window_mass_ratio(row: np.ndarray, window: np.ndarray) -> float:
    """Attention mass inside ``window`` relative to a uniform distribution's mass there."""
    row = np.asarray(row, dtype=np.float64)
    mass = row[window].sum() / row.sum()
    return float(mass / (window.sum() / len(row)))


# -- CSV writers ---------------------------------------------------------------
def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "undefined"
    return repr(float(v))


def _writer(path: Path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return path


def write_metrics_csv(path, report: MetricsReport) -> Path:
    rows = [["species", "r2", "rmse", "mae", "space"]]
    for s, name in enumerate(report.species):
        rows.append([name, _fmt(report.r2[s]), _fmt(report.rmse[s]), _fmt(report.mae[s]), report.space])
    rows.append(["all", _fmt(report.aggregate_r2), _fmt(report.aggregate_rmse), _fmt(report.aggregate_mae),
                 report.space])
    return _writer(path, rows)


def write_correlation_csv(path, corr: ErrorCorrelationMatrix) -> Path:
    rows = [["species", *corr.species]]
    for name, row in zip(corr.species, corr.matrix):
        rows.append([name, *(_fmt(v) for v in row)])
    return _writer(path, rows)


def write_sweep_csv(path, rows: list[dict]) -> Path:
    out = [["snr", "model", "r2", "rmse"]]
    out += [[_fmt(r["snr"]), r["model"], _fmt(r["r2"]), _fmt(r["rmse"])] for r in rows]
    return _writer(path, out)


def write_attention_csv(path, export: AttentionExport) -> Path:
    rows = [["wavelength_um", "spectrum", *export.species]]
    for t in range(len(export.wavelength)):
        rows.append([_fmt(export.wavelength[t]), _fmt(export.spectrum[t]),
                     *(_fmt(v) for v in export.normalized[:, t])])
    return _writer(path, rows)
