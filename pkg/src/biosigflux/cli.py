"""Command-line pipeline: gen-data, train, eval, mc-predict, attention, snr-sweep.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or file-format error.
Every command writes the effective merged run config next to its output as
``<output>.config.json``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig
from .dataset import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .evaluation import (
    error_correlation,
    export_attention,
    point_metrics,
    snr_sweep,
    write_attention_csv,
    write_correlation_csv,
    write_metrics_csv,
    write_sweep_csv,
)
from .models import MODEL_KINDS, build_model, default_prior, predict_mean, train
from .models.training import prepare
from .spectra import SpeciesCatalog
from .uncertainty import decompose, mc_predict, write_predictions

log = logging.getLogger("biosigflux")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _sidecar(out: Path, cfg: RunConfig) -> None:
    cfg.write(Path(f"{out}.config.json"))


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"missing required option {flag}")
    return value


def _checked_fingerprint(ckpt, ds) -> None:
    fp = ckpt.dataset_fingerprint
    if fp is not None and fp != ds.fingerprint():
        print(f"warning: checkpoint was trained on dataset {fp}, evaluating on {ds.fingerprint()}",
              file=sys.stderr)


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    catalog = SpeciesCatalog.load(cfg.catalog) if cfg.catalog else None
    ds = generate_dataset(cfg.n_samples, seed=cfg.seed, snr_range=(cfg.snr_min, cfg.snr_max),
                          catalog=catalog, split_ratios=tuple(cfg.split_ratios))
    write_dataset(ds, out)
    _sidecar(out, cfg)
    log.info("wrote %d samples to %s (fingerprint %s)", len(ds), out, ds.fingerprint())
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    ds = read_dataset(_require(cfg.data, "--data"))
    model_cfg = cfg.model_settings()
    hp = cfg.train_settings()
    prior = default_prior(model_cfg, ds.catalog, ds.grid) if cfg.model == "squat" else None
    model = build_model(cfg.model, model_cfg, seed=cfg.seed, prior=prior)
    result = train(model, ds, hp, verbose=not args.quiet)
    save_checkpoint(out, model, result.normalizer, history=result.history,
                    dataset_fingerprint=ds.fingerprint(), seed=cfg.seed, run_config=cfg.to_dict())
    _sidecar(out, cfg)
    log.info("best epoch %d, checkpoint %s", result.best_epoch, out)
    return 0


def _test_predictions(ckpt, ds):
    prep = prepare(ds, ckpt.normalizer, dtype=ckpt.model.dtype)
    return predict_mean(ckpt.model, prep.x["test"]), prep.y["test"].astype(np.float64)


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    ckpt = load_checkpoint(_require(cfg.checkpoint, "--ckpt"))
    ds = read_dataset(_require(cfg.data, "--data"))
    _checked_fingerprint(ckpt, ds)
    pred, truth = _test_predictions(ckpt, ds)
    if cfg.space == "physical":
        pred, truth = ckpt.normalizer.inverse_targets(pred), ckpt.normalizer.inverse_targets(truth)
    report = point_metrics(pred, truth, space=cfg.space)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", report)
    write_correlation_csv(out / "error_correlation.csv", error_correlation(pred, truth))
    _sidecar(out / "metrics.csv", cfg)
    print(report.aggregate_line())
    return 0


def cmd_mc_predict(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    ckpt = load_checkpoint(_require(cfg.checkpoint, "--ckpt"))
    ds = read_dataset(_require(cfg.data, "--data"))
    _checked_fingerprint(ckpt, ds)
    prep = prepare(ds, ckpt.normalizer, dtype=ckpt.model.dtype)
    passes = cfg.mc_passes(ckpt.kind)
    dist = decompose(mc_predict(ckpt.model, prep.x["test"], passes, seed=cfg.seed))
    write_predictions(out, dist, prep.y["test"], ds.partition("test").sample_ids)
    _sidecar(out, cfg.merged(passes=passes))
    log.info("%d passes over %d test samples -> %s", passes, len(prep.x["test"]), out)
    return 0


def cmd_attention(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    ckpt = load_checkpoint(_require(cfg.checkpoint, "--ckpt"))
    if ckpt.kind != "squat":
        raise ValueError("attention export requires a squat checkpoint")
    ds = read_dataset(_require(cfg.data, "--data"))
    test = ds.partition("test")
    if not 0 <= args.index < len(test):
        raise ValueError(f"--index {args.index} outside the {len(test)} test samples")
    export = export_attention(ckpt.model, test.spectra[args.index], ckpt.normalizer, ds.grid.points)
    write_attention_csv(out, export)
    _sidecar(out, cfg)
    return 0


def cmd_snr_sweep(args, cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    ckpt = load_checkpoint(_require(cfg.checkpoint, "--ckpt"))
    ds = read_dataset(_require(cfg.data, "--data"))
    _checked_fingerprint(ckpt, ds)
    rows = snr_sweep(ckpt.model, ds, ckpt.normalizer, cfg.snr_list, seed=cfg.seed)
    write_sweep_csv(out, rows)
    _sidecar(out, cfg)
    for r in rows:
        log.info("snr %g r2 %.4f rmse %.4f", r["snr"], r["r2"], r["rmse"])
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "mc-predict": cmd_mc_predict,
    "attention": cmd_attention,
    "snr-sweep": cmd_snr_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands use SUPPRESS so they do not clobber values given before the subcommand
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="global random seed (default 42)")
        g.add_argument("--config", default=default, help="JSON run config; flags override its values")
        g.add_argument("--quiet", action="store_true", default=False if default is None else default,
                       help="only print errors and requested output")
        return g

    parser = _Parser(prog="biosigflux", description=__doc__.splitlines()[0], parents=[global_flags(None)])
    common = global_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", dest="n_samples", type=int)
    p.add_argument("--snr-min", type=float)
    p.add_argument("--snr-max", type=float)
    p.add_argument("--split-ratios", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--catalog", help="JSON species catalog (band table and flux sampling)")
    p.add_argument("--out")

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss-mode", choices=("mse", "nll"))
    p.add_argument("--out")

    for name, help_text in (("eval", "point metrics and error correlations on the test split"),
                            ("mc-predict", "Monte Carlo predictive distribution on the test split"),
                            ("attention", "export per-species attention for one test spectrum"),
                            ("snr-sweep", "re-noise the test split at several SNRs and score")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--ckpt", dest="checkpoint")
        p.add_argument("--data")
        p.add_argument("--out", help="output directory for eval, CSV path otherwise")
        if name == "eval":
            p.add_argument("--space", choices=("transformed", "physical"))
        if name == "mc-predict":
            p.add_argument("--passes", type=int)
        if name == "attention":
            p.add_argument("--index", type=int, default=0, help="test-split sample index")
        if name == "snr-sweep":
            p.add_argument("--snr-list", type=float, nargs="+")
    return parser


_CONFIG_FLAGS = ("seed", "n_samples", "snr_min", "snr_max", "split_ratios", "catalog", "out", "model", "preset",
                 "data", "loss_mode", "checkpoint", "space", "passes", "snr_list")


def _merge(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    if overrides["split_ratios"] is not None:
        overrides["split_ratios"] = list(overrides["split_ratios"])
    cfg = cfg.merged(**overrides)
    train_over = {k: getattr(args, k, None) for k in ("epochs", "lr", "batch_size")}
    train_over = {k: v for k, v in train_over.items() if v is not None}
    if train_over:
        cfg = cfg.merged(train={**cfg.train, **train_over})
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        cfg = _merge(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (DatasetFormatError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
