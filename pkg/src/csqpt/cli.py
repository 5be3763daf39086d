"""Command-line pipeline: simulate, reconstruct, evaluate, sweep-cutoff, guideline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import formats
from .hilbert import DEFICIT_WARN, coherent_vector
from .metrics import WorstCaseConfig, diag_matrix, suggest_cutoff, worst_case_search
from .mle import LikelihoodError, QuadratureHistogram, reconstruct
from .process import crop, reference_tensor
from .simulator import SimulationError, exact_bin_weights, simulate_dataset

log = logging.getLogger("csqpt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4


class DataError(RuntimeError):
    pass


def _load_config(args) -> cfgmod.PipelineConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "eta", None) is not None:
        cfg.eta = args.eta
        cfg.iteration.eta = args.eta
    if getattr(args, "exact", False):
        cfg.exact = True
    if getattr(args, "crop", None) is not None:
        cfg.n_prime_max = args.crop
    if getattr(args, "rescale_g", None) is not None:
        cfg.rescale_g = args.rescale_g
    if getattr(args, "out", None) is not None:
        cfg.output = args.out
    return cfg.validate()


def _bins(cfg) -> dict:
    return {"dtheta": cfg.bins.dtheta, "dx": cfg.bins.dx, "x_min": cfg.bins.x_min}


# -- simulate -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    model, probes = cfg.model(), cfg.probes.probes()
    from .hilbert import LossModel

    loss = LossModel(cfg.eta)
    try:
        if cfg.exact:
            data = exact_bin_weights(model, probes, cfg.n_per_probe, loss, **_bins(cfg))
            path = out / "histogram.txt"
            formats.write_histogram(path, data)
            g = data.g
        else:
            data = simulate_dataset(model, probes, cfg.n_per_probe, loss, cfg.seed,
                                    cfg.phase_distribution())
            path = out / "dataset.txt"
            formats.write_dataset(path, data)
            g = data.g
    except (ValueError, SimulationError) as exc:
        raise DataError(str(exc)) from exc
    for p, gm in zip(probes, g):
        _, deficit = coherent_vector(p.alpha, cfg.n_max + 1, return_deficit=True)
        flag = "  (cutoff too small)" if deficit > DEFICIT_WARN else ""
        print(f"probe {p.label}: alpha={complex(p.alpha):.6g} g={gm:.6g} "
              f"deficit={deficit:.3e}{flag}")
    print(f"wrote {path}")
    return EXIT_OK


# -- reconstruct ----------------------------------------------------------------------

def _load_data(path):
    try:
        return formats.load_data(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    data = _load_data(args.data)
    eta = cfg.iteration.eta
    if eta == 1.0 and args.eta is None and data.eta_detector < 1.0:
        log.warning("data were taken at eta=%g but are reconstructed without loss correction",
                    data.eta_detector)
    try:
        report = reconstruct(data, cfg.n_max, cfg.iteration, crop_to=cfg.n_prime_max,
                             bins=None if isinstance(data, QuadratureHistogram) else _bins(cfg))
    except LikelihoodError as exc:
        raise DataError(f"likelihood failure: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(cfg.output) / "report"
    formats.write_report(out, report, {"n_max": cfg.n_max, "n_prime_max": cfg.n_prime_max,
                                       "eta": eta, "g_rescale": cfg.iteration.g_rescale})
    print(f"{report.status}: {report.iterations} iterations, loglik {report.loglik_trace[-1]:.10g}, "
          f"trace defect {report.trace_defect:.2e}, min eigenvalue {report.min_eigenvalue:.2e}")
    print(f"wrote {out}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# -- evaluate -------------------------------------------------------------------------

def plot_diagonals(path, ref: np.ndarray, est: np.ndarray, title: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(9, 4))
    for i, (mat, name) in enumerate([(ref, "theory"), (est, "reconstruction")]):
        ax = fig.add_subplot(1, 2, i + 1, projection="3d")
        m, k = np.meshgrid(np.arange(mat.shape[0]), np.arange(mat.shape[1]), indexing="ij")
        ax.bar3d(k.ravel(), m.ravel(), np.zeros(mat.size), 0.6, 0.6, mat.ravel(), shade=True)
        ax.set_xlabel("k")
        ax.set_ylabel("m")
        ax.set_title(f"{title}: {name}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    try:
        E = formats.read_tensor(Path(args.report) / "estimate.tensor")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read report {args.report}: {exc}") from exc
    if E.heralded:
        raise DataError("evaluate expects a physical (stripped) estimate")
    T = reference_tensor(cfg.model(), E.dimH, E.dimK)
    res = worst_case_search(T, E, cfg.worst_case)
    scale = cfg.rescale_g
    ref, est = diag_matrix(T, scale), diag_matrix(E, scale)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(m, k, ref[m, k], est[m, k]) for m in range(ref.shape[0]) for k in range(ref.shape[1])]
    formats.write_table(out / "diagonals.tsv", ["m", "k", "theory", "estimate"], rows,
                        ["%d", "%d", formats.FLOAT, formats.FLOAT])
    metrics = {"worst_case_fidelity": res.fidelity, "restart_minima": res.restart_minima,
               "max_abs_diag_error": float(np.max(np.abs(ref - est))), "rescale_g": scale,
               "process": cfg.process, "dimH": E.dimH, "dimK": E.dimK}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    # the figure is drawn from the table just written, not recomputed
    _, table = formats.read_table(out / "diagonals.tsv")
    shape = ref.shape
    plot_diagonals(out / "diagonals.svg", table[:, 2].reshape(shape), table[:, 3].reshape(shape),
                cfg.process)
    print(f"worst-case fidelity {res.fidelity:.6f}; max |diag error| "
          f"{metrics['max_abs_diag_error']:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


# -- sweep-cutoff ---------------------------------------------------------------------

def _sweep_cell(cfg_dict: dict, hist_text_path: str, n: int, primes: list[int],
                cell_dir: str) -> list[dict]:
    """Reconstruct at cutoff ``n`` once and score every requested secondary cutoff."""
    cfg = cfgmod.from_dict(cfg_dict)
    cell_dir = Path(cell_dir)
    results = []
    try:
        hist = formats.read_histogram(hist_text_path)
        report = reconstruct(hist, n, cfg.iteration)
        formats.write_tensor(cell_dir / f"estimate_n{n}.tensor", report.E_est)
        T = reference_tensor(cfg.model(), n + 1, n + 1)
        for p in primes:
            res = worst_case_search(crop(T, p), crop(report.E_est, p), cfg.worst_case)
            cell = {"n_max": n, "n_prime_max": p, "status": "ok",
                    "fidelity": res.fidelity, "restart_minima": res.restart_minima,
                    "iterations": report.iterations, "converged": report.converged,
                    "max_defect": max(report.defect_history, default=0.0),
                    "min_eigenvalue": min(report.min_eig_history, default=0.0)}
            (cell_dir / f"cell_n{n}_p{p}.json").write_text(json.dumps(cell, sort_keys=True))
            results.append(cell)
    except Exception as exc:  # a failed cell is recorded and the sweep carries on
        for p in primes:
            cell = {"n_max": n, "n_prime_max": p, "status": "failed", "error": repr(exc)}
            (cell_dir / f"cell_n{n}_p{p}.json").write_text(json.dumps(cell, sort_keys=True))
            results.append(cell)
    return results


def _sweep_figure(path, cells: list[dict]):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ok = [c for c in cells if c["status"] == "ok"]
    diag = sorted((c["n_max"], c["fidelity"]) for c in ok if c["n_prime_max"] == c["n_max"])
    if diag:
        ax.plot(*zip(*diag), "o-", label="n'_max = n_max")
    for p in sorted({c["n_prime_max"] for c in ok}):
        pts = sorted((c["n_max"], c["fidelity"]) for c in ok
                     if c["n_prime_max"] == p and c["n_max"] > p)
        if pts:
            ax.plot(*zip(*pts), "s--", label=f"n'_max = {p}")
    ax.set_xlabel("n_max")
    ax.set_ylabel("worst-case fidelity")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_sweep_cutoff(args) -> int:
    cfg = _load_config(args)
    if args.alpha_max is not None:
        cfg.probes.alpha_max = args.alpha_max
        cfg.probes.alphas = None
    out = Path(cfg.output) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    hist_path = out / "histogram.txt"
    if not hist_path.exists():
        from .hilbert import LossModel

        try:
            hist = exact_bin_weights(cfg.model(), cfg.probes.probes(), cfg.n_per_probe,
                                     LossModel(cfg.eta), **_bins(cfg))
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        formats.write_histogram(hist_path, hist)

    jobs = []
    cells = []
    for n in cfg.sweep.n_max_values:
        primes = [n] + [p for p in cfg.sweep.n_prime_values if p < n]
        done = [out / f"cell_n{n}_p{p}.json" for p in primes]
        if all(f.exists() for f in done):
            cells.extend(json.loads(f.read_text()) for f in done)
        else:
            jobs.append((n, primes))
    cfg_dict = cfgmod.to_dict(cfg)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = [pool.submit(_sweep_cell, cfg_dict, str(hist_path), n, p, str(out))
                       for n, p in jobs]
            for f in futures:
                cells.extend(f.result())
    else:
        for n, p in jobs:
            cells.extend(_sweep_cell(cfg_dict, str(hist_path), n, p, str(out)))

    cells.sort(key=lambda c: (c["n_max"], c["n_prime_max"]))
    rows = [(c["n_max"], c["n_prime_max"], c.get("fidelity", float("nan"))) for c in cells]
    formats.write_table(out / "sweep.tsv", ["n_max", "n_prime_max", "fidelity"], rows,
                        ["%d", "%d", formats.FLOAT])
    _sweep_figure(out / "sweep.svg", cells)
    for n, p, f in rows:
        print(f"n_max={n} n'_max={p} fidelity={f:.6f}")
    failed = [c for c in cells if c["status"] != "ok"]
    if failed:
        print(f"{len(failed)} cell(s) failed; see {out}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# -- guideline ------------------------------------------------------------------------

def cmd_guideline(args) -> int:
    if args.n_total < 1:
        raise cfgmod.ConfigError("the number of measurements must be >= 1")
    n, ov = suggest_cutoff(args.alpha_max, args.n_total)
    print(f"n_max={n} overlap={ov:.3g}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csqpt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--config", type=Path, help="YAML pipeline configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        if "seed" in flags:
            p.add_argument("--seed", type=int)
        if "eta" in flags:
            p.add_argument("--eta", type=float, help="detector efficiency")
        return p

    p = common(sub.add_parser("simulate", help="generate a homodyne dataset"), "seed", "eta")
    p.add_argument("--exact", action="store_true", help="write expected bin weights instead")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("reconstruct", help="maximum-likelihood reconstruction"), "eta")
    p.add_argument("data", help="dataset or histogram file")
    p.add_argument("--crop", type=int, help="secondary cutoff n'_max")
    p.set_defaults(func=cmd_reconstruct)

    p = common(sub.add_parser("evaluate", help="fidelity and diagonal tables for a report"))
    p.add_argument("report", help="report directory written by 'reconstruct'")
    p.add_argument("--rescale-g", type=float, dest="rescale_g",
                   help="divide diagonals by this factor before comparison")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("sweep-cutoff", help="worst-case fidelity versus cutoff"), "eta")
    p.add_argument("--alpha-max", type=float, dest="alpha_max")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_cutoff)

    p = sub.add_parser("guideline", help="suggest n_max from alpha_max and the sample size")
    p.add_argument("--alpha-max", type=float, dest="alpha_max", required=True)
    p.add_argument("--n-total", type=float, dest="n_total", required=True)
    p.set_defaults(func=cmd_guideline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
