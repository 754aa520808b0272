"""Monte Carlo predictive sampling, variance decomposition, intervals and calibration metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .autodiff.tensor import no_grad
from .spectra import SPECIES

COV_EPS = 1e-6


@dataclass
class MCSamples:
    means: np.ndarray  # [T, N, S]
    log_vars: np.ndarray | None = None  # [T, N, S]

    @property
    def passes(self) -> int:
        return self.means.shape[0]


@dataclass
class PredictiveDistribution:
    mean: np.ndarray
    aleatoric_var: np.ndarray
    epistemic_var: np.ndarray
    passes: int

    @property
    def total_var(self) -> np.ndarray:
        return self.aleatoric_var + self.epistemic_var

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.total_var)


@dataclass
class CalibrationReport:
    coverage_1sigma: float
    coverage_2sigma: float
    sharpness: float
    mean_cov: float | None
    # None when either side of the correlation has zero variance
    unc_err_corr: float | None

    def as_row(self) -> dict:
        return {k: ("undefined" if v is None else v) for k, v in vars(self).items()}


def _pass_rng(seed: int, t: int, b: int | None) -> np.random.Generator:
    key = (t,) if b is None else (t, b)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def mc_predict(model, x: np.ndarray, passes: int, seed: int = 42, batch_size: int = 128) -> MCSamples:
    """``passes`` stochastic forward passes with index-derived random streams.

    Weight-sampling models draw one weight set per pass (shared across
    batches); dropout models draw fresh masks per batch.  Output is a pure
    function of ``(seed, passes)``, and the first ``T`` passes of a run with
    ``2T`` passes equal a run with ``T``.
    """
    if passes < 2:
        raise ValueError(f"mc_predict needs at least 2 passes, got {passes}")
    shared_weights = getattr(model, "kind", "") == "bcnn"
    means, log_vars = [], []
    x = np.asarray(x, dtype=model.dtype)
    with no_grad():
        for t in range(passes):
            m_parts, v_parts = [], []
            for b, start in enumerate(range(0, len(x), batch_size)):
                rng = _pass_rng(seed, t, None if shared_weights else b)
                out = model(x[start:start + batch_size], stochastic=True, rng=rng)
                m_parts.append(out.mean.data)
                if out.log_var is not None:
                    v_parts.append(out.log_var.data)
            means.append(np.concatenate(m_parts))
            if v_parts:
                log_vars.append(np.concatenate(v_parts))
    return MCSamples(np.stack(means).astype(np.float64),
                     np.stack(log_vars).astype(np.float64) if log_vars else None)


def decompose(samples: MCSamples) -> PredictiveDistribution:
    """Mean of per-pass means; epistemic = population variance over passes; aleatoric = mean exp(log_var)."""
    means = np.asarray(samples.means, dtype=np.float64)
    if means.shape[0] < 2:
        raise ValueError("decompose needs at least 2 passes")
    mean = means.mean(axis=0)
    epistemic = means.var(axis=0)
    if samples.log_vars is not None:
        aleatoric = np.exp(np.asarray(samples.log_vars, dtype=np.float64)).mean(axis=0)
    else:
        aleatoric = np.zeros_like(mean)
    return PredictiveDistribution(mean, aleatoric, epistemic, means.shape[0])


def z_for_level(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"credible level must lie in (0, 1), got {level}")
    return NormalDist().inv_cdf((1.0 + level) / 2.0)


def credible_interval(dist: PredictiveDistribution, level: float = 0.95, method: str = "gaussian",
                      samples: MCSamples | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central interval at ``level``.

    ``"gaussian"``: mean ± z·√total_var.  ``"quantile"``: empirical quantiles
    of the per-pass means (epistemic spread only; needs ``samples``).
    """
    z = z_for_level(level)
    if method == "gaussian":
        half = z * dist.std
        return dist.mean - half, dist.mean + half
    if method == "quantile":
        if samples is None:
            raise ValueError("quantile intervals need the MC samples")
        lo, hi = np.quantile(samples.means, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return lo, hi
    raise ValueError(f"unknown interval method {method!r}")


def is_degenerate(a: np.ndarray) -> bool:
    """True when ``a`` is constant up to rounding relative to its own magnitude."""
    a = np.asarray(a, dtype=np.float64).ravel()
    spread = np.sqrt(np.sum((a - a.mean()) ** 2))
    return bool(spread <= 1e-12 * np.sqrt(a.size) * np.max(np.abs(a), initial=0.0))


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson r, or None when either input has (numerically) zero variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if is_degenerate(a) or is_degenerate(b):
        return None
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def calibration_report(dist: PredictiveDistribution, truth: np.ndarray) -> CalibrationReport:
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != dist.mean.shape:
        raise ValueError(f"truth shape {truth.shape} != prediction shape {dist.mean.shape}")
    if truth.shape[0] < 2:
        raise ValueError("calibration needs at least 2 samples")
    std = dist.std
    err = np.abs(truth - dist.mean)
    keep = np.abs(dist.mean) > COV_EPS
    return CalibrationReport(
        coverage_1sigma=float(np.mean(err <= std)),
        coverage_2sigma=float(np.mean(err <= 2 * std)),
        sharpness=float(std.mean()),
        mean_cov=float(np.mean(std[keep] / np.abs(dist.mean[keep]))) if keep.any() else None,
        unc_err_corr=pearson(std, err),
    )


PREDICTION_HEADER = ["sample_id", "species", "mean", "aleatoric_var", "epistemic_var",
                     "lower95", "upper95", "truth"]


def write_predictions(path: str | Path, dist: PredictiveDistribution, truth: np.ndarray,
                      sample_ids, species=SPECIES) -> Path:
    lower, upper = credible_interval(dist, 0.95)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for i, sid in enumerate(sample_ids):
            for s, name in enumerate(species):
                w.writerow([int(sid), name, repr(float(dist.mean[i, s])), repr(float(dist.aleatoric_var[i, s])),
                            repr(float(dist.epistemic_var[i, s])), repr(float(lower[i, s])),
                            repr(float(upper[i, s])), repr(float(truth[i, s]))])
    return path
