"""Minibatch Adam training with plateau LR decay and early stopping on validation MSE."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff.optim import Adam
from ..autodiff.tensor import Tensor, no_grad
from ..preprocessing import Normalizer, fit_normalizer
from .config import TrainConfig

log = logging.getLogger(__name__)


class PlateauSchedule:
    """ReduceLROnPlateau-style LR halving plus an early-stopping counter."""

    def __init__(self, lr: float, plateau_patience: int = 5, factor: float = 0.5,
                 min_lr: float = 1e-7, stop_patience: int = 10):
        self.lr = lr
        self.plateau_patience = plateau_patience
        self.factor = factor
        self.min_lr = min_lr
        self.stop_patience = stop_patience
        self.best = np.inf
        self.best_epoch = -1
        self._since_best = 0
        self._since_decay = 0
        self.epoch = -1

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True if it is a new best."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self._since_best = 0
            self._since_decay = 0
            return True
        self._since_best += 1
        self._since_decay += 1
        if self._since_decay >= self.plateau_patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self._since_decay = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self._since_best >= self.stop_patience


@dataclass
class PreparedSplits:
    normalizer: Normalizer
    x: dict[str, np.ndarray] = field(default_factory=dict)
    y: dict[str, np.ndarray] = field(default_factory=dict)


def prepare(dataset, normalizer: Normalizer | None = None, dtype=np.float32) -> PreparedSplits:
    """Normalize spectra to ``[N, 1, W]`` and asinh-transform targets, per split."""
    normalizer = fit_normalizer(dataset) if normalizer is None else normalizer
    prep = PreparedSplits(normalizer)
    for name in ("train", "val", "test"):
        part = dataset.partition(name)
        prep.x[name] = normalizer.apply(part.spectra)[:, None, :].astype(dtype)
        prep.y[name] = normalizer.transform_targets(part.fluxes).astype(dtype)
    return prep


@dataclass
class TrainResult:
    model: object
    history: list[dict]
    normalizer: Normalizer
    best_epoch: int


def predict_mean(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Deterministic point predictions (no dropout, posterior means)."""
    outs = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model(x[i:i + batch_size]).mean.data)
    return np.concatenate(outs, axis=0)


def train(model, dataset, hp: TrainConfig | None = None, normalizer: Normalizer | None = None,
          verbose: bool = False) -> TrainResult:
    """Train ``model`` on ``dataset`` and restore the best-validation weights.

    The schedule and stopping rule follow :class:`PlateauSchedule`; the
    history records per-epoch training loss, validation MSE and learning rate.
    """
    hp = hp or TrainConfig()
    prep = prepare(dataset, normalizer, dtype=model.dtype)
    x_tr, y_tr = prep.x["train"], prep.y["train"]
    x_va, y_va = prep.x["val"], prep.y["val"]
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training needs non-empty train and val splits")

    root = np.random.SeedSequence(hp.seed)
    shuffle_rng, noise_rng = (np.random.default_rng(s) for s in root.spawn(2))
    n_batches = -(-len(x_tr) // hp.batch_size)
    beta_kl = hp.beta_kl if hp.beta_kl is not None else 1.0 / n_batches
    params = model.parameters()
    opt = Adam(params, lr=hp.lr)
    sched = PlateauSchedule(hp.lr, hp.plateau_patience, hp.lr_factor, hp.min_lr, hp.stop_patience)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    history: list[dict] = []

    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        warm = epoch < hp.warmup_epochs
        if epoch == hp.warmup_epochs > 0:
            # select the final weights from the main-loss phase only
            sched = PlateauSchedule(sched.lr, hp.plateau_patience, hp.lr_factor, hp.min_lr, hp.stop_patience)
            sched.epoch = epoch - 1
        opt.lr = sched.lr
        order = shuffle_rng.permutation(len(x_tr))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * hp.batch_size:(b + 1) * hp.batch_size]
            opt.zero_grad()
            out = model(x_tr[idx], training=True, rng=noise_rng)
            loss = model.loss(out, Tensor(y_tr[idx]), beta_kl=beta_kl, mode="mse" if warm else hp.loss_mode)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        val_mse = float(np.mean((predict_mean(model, x_va) - y_va) ** 2))
        history.append({"epoch": epoch, "train_loss": total / len(x_tr), "val_mse": val_mse, "lr": sched.lr})
        if sched.step(val_mse):
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        msg = "epoch %d train %.4f val_mse %.4f lr %.2e (%.1fs)"
        args = (epoch, total / len(x_tr), val_mse, history[-1]["lr"], time.perf_counter() - t0)
        (log.info if verbose else log.debug)(msg, *args)
        if sched.should_stop and not warm:
            break

    model.load_state_dict(best_state)
    model.trained = True
    return TrainResult(model, history, prep.normalizer, sched.best_epoch)
