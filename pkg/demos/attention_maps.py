"""Where does each species query look? Attention exports from a desk-scale SQuAT.

For every species, builds a spectrum in which only that gas absorbs, exports the head-averaged
prior-mixed attention and compares the mass inside the species' band windows to a uniform map.
Run: python demos/attention_maps.py [--out attention/]
"""
import argparse
from pathlib import Path

import numpy as np

from biosigflux.dataset import generate_dataset
from biosigflux.evaluation import export_attention, window_mass_ratio, write_attention_csv
from biosigflux.models import build_model, desk_model_config, desk_train_config, train
from biosigflux.spectra import SPECIES, apply_snr, band_windows, forward_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--out", type=Path, default=None, help="directory for one attention CSV per species")
    args = ap.parse_args()

    ds = generate_dataset(args.n, seed=42, split_ratios=(4, 1, 1))
    model = build_model("squat", desk_model_config("squat"), seed=42)
    res = train(model, ds, desk_train_config("squat"))
    print("learned prior weights alpha:", np.round(model.alpha, 3))

    test = ds.partition("test")
    print("\nspecies  window mass / uniform   (prior alone)")
    for s, name in enumerate(SPECIES):
        fluxes = np.zeros(len(SPECIES))
        fluxes[s] = test.fluxes[:, s].max()
        spectrum = apply_snr(forward_model(fluxes, ds.grid, ds.catalog), 100.0, np.random.default_rng(s))
        exp = export_attention(model, spectrum, res.normalizer, ds.grid.points)
        window = band_windows(ds.grid, ds.catalog, name)
        print(f"{name:8s} {window_mass_ratio(exp.raw[s], window):10.2f}"
              f"   ({window_mass_ratio(model.prior.P[s], window):.2f})")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            write_attention_csv(args.out / f"attention_{name}.csv", exp)


if __name__ == "__main__":
    main()
