"""Train the desk-scale models and score them on the test split re-noised at several SNRs.

Mirrors the SNR table: R2 and RMSE in asinh space should improve with SNR for every model.
Run: python demos/snr_benchmark.py [--models cnn bcnn vit squat] [--out bench/]
"""
import argparse
import time
from pathlib import Path

from biosigflux.dataset import generate_dataset
from biosigflux.evaluation import snr_sweep, write_sweep_csv
from biosigflux.models import MODEL_KINDS, build_model, desk_model_config, desk_train_config, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    ap.add_argument("--n", type=int, default=3000, help="samples, split 4:1:1")
    ap.add_argument("--snr", type=float, nargs="+", default=[5, 20, 100])
    ap.add_argument("--out", type=Path, default=None, help="directory for snr_sweep.csv")
    args = ap.parse_args()

    ds = generate_dataset(args.n, seed=42, split_ratios=(4, 1, 1))
    rows = []
    for kind in args.models:
        t0 = time.perf_counter()
        model = build_model(kind, desk_model_config(kind), seed=42)
        res = train(model, ds, desk_train_config(kind))
        print(f"{kind}: best epoch {res.best_epoch}, {time.perf_counter() - t0:.0f}s")
        rows += snr_sweep(model, ds, res.normalizer, args.snr, seed=42)

    print("\nmodel   " + "".join(f"  R2@{s:<5g} RMSE@{s:<4g}" for s in args.snr))
    for kind in args.models:
        mine = [r for r in rows if r["model"] == kind]
        print(f"{kind:7s} " + "".join(f"  {r['r2']:8.3f} {r['rmse']:8.3f}" for r in mine))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        print(f"\nwrote {write_sweep_csv(args.out / 'snr_sweep.csv', rows)}")


if __name__ == "__main__":
    main()
