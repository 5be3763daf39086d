"""Text file formats for datasets, histograms, process tensors and reports.

All floats are written with 17 significant digits so that a write/read cycle
is exact. Each file starts with a magic line ``csqpt-<kind> <schema version>``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .process import FLATTENING, ProcessTensor
from .simulator import SCHEMA_VERSION, HomodyneDataset, PhaseDistribution, ProbeSpec

FLOAT = "%.17g"


class FormatError(ValueError):
    """A file is malformed or carries an unsupported schema version."""


def _f(x: float) -> str:
    return FLOAT % x


def _atomic_write(path, text: str):
    # write next to the target and rename, so readers never see a partial file
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _lines(path):
    with open(path) as fh:
        return [ln.rstrip("\n") for ln in fh]


def _magic(lines, kind: str) -> int:
    if not lines:
        raise FormatError(f"empty {kind} file")
    parts = lines[0].split()
    if len(parts) != 2 or parts[0] != f"csqpt-{kind}":
        raise FormatError(f"not a {kind} file (first line {lines[0]!r})")
    version = int(parts[1])
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported {kind} schema version {version}")
    return version


def _field(line: str, key: str) -> list[str]:
    parts = line.split()
    if not parts or parts[0] != key:
        raise FormatError(f"expected {key!r}, got {line!r}")
    return parts[1:]


# -- datasets -----------------------------------------------------------------

def dataset_text(ds: HomodyneDataset) -> str:
    out = [f"csqpt-dataset {ds.schema_version}",
           f"seed {ds.seed}",
           f"eta_detector {_f(ds.eta_detector)}",
           f"phase {ds.phase.kind} {ds.phase.count} {_f(ds.phase.offset)}",
           f"probes {len(ds.probes)}"]
    for p, g, rec in zip(ds.probes, ds.g, ds.records):
        a = complex(p.alpha)
        out.append(f"probe {p.label} {_f(a.real)} {_f(a.imag)} {_f(g)} {len(rec)}")
        out.extend(f"{_f(t)} {_f(x)}" for t, x in rec)
    return "\n".join(out) + "\n"


def write_dataset(path, ds: HomodyneDataset):
    _atomic_write(path, dataset_text(ds))


def read_dataset(path) -> HomodyneDataset:
    lines = _lines(path)
    version = _magic(lines, "dataset")
    try:
        seed = int(_field(lines[1], "seed")[0])
        eta = float(_field(lines[2], "eta_detector")[0])
        kind, count, offset = _field(lines[3], "phase")
        n_probes = int(_field(lines[4], "probes")[0])
        probes, g, records = [], [], []
        pos = 5
        for _ in range(n_probes):
            label, re, im, gm, n = _field(lines[pos], "probe")
            n = int(n)
            block = np.loadtxt(lines[pos + 1: pos + 1 + n], ndmin=2) if n else np.empty((0, 2))
            if block.shape != (n, 2):
                raise FormatError(f"probe {label}: expected {n} records")
            probes.append(ProbeSpec(complex(float(re), float(im)), int(label)))
            g.append(float(gm))
            records.append(block)
            pos += 1 + n
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed dataset file {path}: {exc}") from exc
    return HomodyneDataset(probes, records, g, eta, seed,
                           PhaseDistribution(kind, int(count), float(offset)), version)


def write_dataset_npz(path, ds: HomodyneDataset):
    """Compact binary twin of the text format (same content, numpy archive)."""
    header = {"schema_version": ds.schema_version, "seed": ds.seed,
              "eta_detector": ds.eta_detector, "phase": ds.phase.to_dict(),
              "labels": [p.label for p in ds.probes]}
    arrays = {f"records_{i}": r for i, r in enumerate(ds.records)}
    with open(path, "wb") as fh:
        np.savez(fh, header=json.dumps(header), alphas=ds.alphas, g=np.asarray(ds.g), **arrays)


def read_dataset_npz(path) -> HomodyneDataset:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        if header["schema_version"] != SCHEMA_VERSION:
            raise FormatError(f"unsupported dataset schema version {header['schema_version']}")
        probes = [ProbeSpec(complex(a), lab) for a, lab in zip(z["alphas"], header["labels"])]
        records = [z[f"records_{i}"] for i in range(len(probes))]
        g = [float(x) for x in z["g"]]
    return HomodyneDataset(probes, records, g, header["eta_detector"], header["seed"],
                           PhaseDistribution(**header["phase"]))


def load_data(path):
    """Dataset or histogram, dispatched on the magic line (or the .npz suffix)."""
    path = Path(path)
    if path.suffix == ".npz":
        return read_dataset_npz(path)
    with open(path) as fh:
        first = fh.readline().split()
    if first and first[0] == "csqpt-histogram":
        return read_histogram(path)
    return read_dataset(path)


# -- histograms (exact bin weights) ---------------------------------------------

def histogram_text(hist) -> str:
    out = [f"csqpt-histogram {SCHEMA_VERSION}",
           f"bins {_f(hist.dtheta)} {_f(hist.dx)} {_f(hist.x_min)}",
           f"eta_detector {_f(hist.eta_detector)}",
           f"probes {hist.n_probes}"]
    for m in range(hist.n_probes):
        a = complex(hist.alphas[m])
        out.append(f"probe {m} {_f(a.real)} {_f(a.imag)} {_f(hist.g[m])} {len(hist.counts[m])}")
        out.extend(f"{u} {v} {_f(c)}" for (u, v), c in zip(hist.bins[m], hist.counts[m]))
    return "\n".join(out) + "\n"


def write_histogram(path, hist):
    _atomic_write(path, histogram_text(hist))


def read_histogram(path):
    from .mle import QuadratureHistogram

    lines = _lines(path)
    _magic(lines, "histogram")
    try:
        dtheta, dx, x_min = map(float, _field(lines[1], "bins"))
        eta = float(_field(lines[2], "eta_detector")[0])
        n_probes = int(_field(lines[3], "probes")[0])
        alphas, g, bins, counts = [], [], [], []
        pos = 4
        for _ in range(n_probes):
            _, re, im, gm, n = _field(lines[pos], "probe")
            n = int(n)
            block = np.loadtxt(lines[pos + 1: pos + 1 + n], ndmin=2) if n else np.empty((0, 3))
            if block.shape != (n, 3):
                raise FormatError(f"expected {n} bin rows")
            alphas.append(complex(float(re), float(im)))
            g.append(float(gm))
            bins.append(block[:, :2].astype(np.int64))
            counts.append(block[:, 2])
            pos += 1 + n
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed histogram file {path}: {exc}") from exc
    return QuadratureHistogram(dtheta, dx, x_min, alphas, g, bins, counts, eta)


# -- process tensors --------------------------------------------------------------

def tensor_text(E: ProcessTensor) -> str:
    """JSON header line, then one ``row col re im`` line per nonzero matrix entry."""
    header = {"dimH": E.dimH, "dimK": E.dimK, "heralded": E.heralded, "flattening": FLATTENING}
    out = [f"csqpt-tensor {SCHEMA_VERSION}", json.dumps(header, sort_keys=True)]
    rows, cols = np.nonzero(E.matrix)
    for r, c in zip(rows, cols):
        z = E.matrix[r, c]
        out.append(f"{r} {c} {_f(z.real)} {_f(z.imag)}")
    return "\n".join(out) + "\n"


def write_tensor(path, E: ProcessTensor):
    _atomic_write(path, tensor_text(E))


def read_tensor(path) -> ProcessTensor:
    lines = _lines(path)
    _magic(lines, "tensor")
    try:
        header = json.loads(lines[1])
        if header.get("flattening") != FLATTENING:
            raise FormatError(f"unsupported flattening {header.get('flattening')!r}")
        dH, dK = int(header["dimH"]), int(header["dimK"])
        M = np.zeros((dH * dK, dH * dK), dtype=complex)
        body = [ln for ln in lines[2:] if ln.strip()]
        if body:
            arr = np.loadtxt(body, ndmin=2)
            idx = arr[:, :2].astype(np.int64)
            M[idx[:, 0], idx[:, 1]] = arr[:, 2] + 1j * arr[:, 3]
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed tensor file {path}: {exc}") from exc
    return ProcessTensor(dH, dK, M, bool(header["heralded"]))


# -- reports and tables -------------------------------------------------------------

def write_table(path, header: list[str], rows, fmt=None):
    """Tab-separated table with a header row."""
    fmt = fmt or [FLOAT] * len(header)
    out = ["\t".join(header)]
    for row in rows:
        out.append("\t".join((f % v) for f, v in zip(fmt, row)))
    _atomic_write(path, "\n".join(out) + "\n")


def read_table(path) -> tuple[list[str], np.ndarray]:
    lines = _lines(path)
    header = lines[0].split("\t")
    body = [ln for ln in lines[1:] if ln.strip()]
    data = np.loadtxt(body, ndmin=2, delimiter="\t") if body else np.empty((0, len(header)))
    return header, data


def write_report(out_dir, report, extra: dict | None = None):
    """``estimate.tensor``, ``raw.tensor``, ``loglik.tsv`` and ``summary.json`` in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(out_dir / "estimate.tensor", report.E_est)
    write_tensor(out_dir / "raw.tensor", report.E_raw)
    write_table(out_dir / "loglik.tsv", ["iteration", "loglik"],
                enumerate(report.loglik_trace), ["%d", FLOAT])
    summary = {"status": report.status, "iterations": report.iterations,
               "converged": report.converged, "trace_defect": report.trace_defect,
               "min_eigenvalue": report.min_eigenvalue,
               "final_loglik": report.loglik_trace[-1], "wall_time": report.wall_time,
               "lambda_singular": report.lambda_singular,
               "max_defect_history": max(report.defect_history, default=0.0),
               "min_eig_history": min(report.min_eig_history, default=0.0)}
    summary.update(extra or {})
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
