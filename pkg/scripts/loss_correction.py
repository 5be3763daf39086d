"""Photon creation seen through an inefficient detector, with and without loss correction.

    python scripts/loss_correction.py --out results/loss
"""

import argparse
from pathlib import Path

import numpy as np

from csqpt.formats import FLOAT, write_table
from csqpt.hilbert import LossModel
from csqpt.metrics import diag_matrix
from csqpt.mle import IterationConfig, bin, reconstruct
from csqpt.process import ProcessModel, reference_tensor
from csqpt.simulator import probe_grid, simulate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/loss"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--etas", type=float, nargs="+", default=[0.75, 0.55])
    ap.add_argument("--n-max", type=int, default=7)
    ap.add_argument("--max-iters", type=int, default=12000)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    model, g_sq = ProcessModel.photon_creation(0.1), 0.1
    ref = diag_matrix(reference_tensor(model, args.n_max + 1), g_sq)
    rows = []
    for eta in args.etas:
        ds = simulate_dataset(model, probe_grid(0.9375, 4), 100_000, LossModel(eta), seed=args.seed)
        hist = bin(ds)
        for corrected in (True, False):
            cfg = IterationConfig(max_iters=args.max_iters, ll_rel_tol=1e-13,
                                  eta=eta if corrected else 1.0)
            est = diag_matrix(reconstruct(hist, args.n_max, cfg).E_est, g_sq)
            err = np.abs(est - ref)[:3].max()
            print(f"eta={eta} corrected={corrected}: max |diag error| (m<=2) {err:.4f}")
            rows += [(eta, int(corrected), m, m + 1, est[m, m + 1]) for m in range(3)]
    write_table(args.out / "loss.tsv", ["eta", "corrected", "m", "k", "estimate"], rows,
                [FLOAT, "%d", "%d", "%d", FLOAT])


if __name__ == "__main__":
    main()
