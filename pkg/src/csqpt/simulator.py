"""Synthetic homodyne data: marginal quadrature densities and Monte Carlo sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .hilbert import LossModel, apply_loss, coherent_dm, hermite_functions, quad_vectors
from .process import ProcessModel, ProcessTensor, apply, reference_tensor

SCHEMA_VERSION = 1
#: inverse-CDF grid
X_GRID = np.linspace(-8.0, 8.0, 4001)
#: Fock cutoff of the "true" channel used to generate data
SIM_DIM = 16


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    alpha: complex
    label: int = 0


@dataclass(frozen=True)
class PhaseDistribution:
    """Local-oscillator phase scan: ``uniform`` on [0, 2pi) or ``discrete`` evenly spaced."""

    kind: str = "uniform"
    count: int = 0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "discrete"):
            raise ValueError(f"unknown phase distribution {self.kind!r}")
        if self.kind == "discrete" and self.count < 1:
            raise ValueError("a discrete phase set needs count >= 1")

    @classmethod
    def fixed(cls, theta: float):
        return cls("discrete", 1, theta % (2 * np.pi))

    def phases(self) -> np.ndarray:
        return (self.offset + 2 * np.pi * np.arange(self.count) / self.count) % (2 * np.pi)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(0.0, 2 * np.pi, n)
        return self.phases()[rng.integers(0, self.count, n)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "count": self.count, "offset": self.offset}


@dataclass
class HomodyneDataset:
    """Per-probe ``(theta, x)`` records of successful events and heralding fractions."""

    probes: list[ProbeSpec]
    records: list[np.ndarray]
    g: list[float]
    eta_detector: float = 1.0
    seed: int = 0
    phase: PhaseDistribution = field(default_factory=PhaseDistribution)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if not (len(self.probes) == len(self.records) == len(self.g)):
            raise ValueError("probes, records and g must have equal length")
        for r in self.records:
            if r.ndim != 2 or r.shape[1] != 2 or len(r) == 0:
                raise ValueError("each probe needs a non-empty (N, 2) record block")
        for gm in self.g:
            if not 0.0 < gm <= 1.0:
                raise ValueError(f"success fraction {gm} outside (0, 1]")

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.probes], dtype=complex)


def probe_grid(alpha_max: float, count: int) -> list[ProbeSpec]:
    """``count`` real amplitudes evenly spaced on [0, alpha_max]."""
    alphas = np.linspace(0.0, alpha_max, count) if count > 1 else [alpha_max]
    return [ProbeSpec(complex(a), i) for i, a in enumerate(alphas)]


def output_state(E: ProcessTensor, alpha: complex, loss: LossModel | None = None) -> np.ndarray:
    """Physical output of the channel for a coherent probe, optionally after detector loss."""
    sigma = apply(E, coherent_dm(alpha, E.dimH))
    if loss is not None and not loss.lossless:
        sigma = apply_loss(sigma, loss)
    return sigma


def marginal_pdf(E: ProcessTensor, probe: ProbeSpec, theta: float, xs,
                 loss: LossModel | None = None) -> np.ndarray:
    """Quadrature density ``Tr[E rho^T (x) Pi(theta, x)]`` on the points ``xs``."""
    sigma = output_state(E, probe.alpha, loss)
    v = quad_vectors(sigma.shape[0], theta, xs)
    p = np.real(np.einsum("bj,jk,bk->b", v.conj(), sigma, v))
    return np.clip(p, 0.0, None)


def _fourier_cdfs(sigma: np.ndarray, xs: np.ndarray):
    """Cumulative x-integrals of the phase harmonics of ``p(x | theta)``.

    ``p(x|theta) = sum_d c_d(x) exp(i d theta)`` with ``c_d = sum_{k-j=d} sigma_jk psi_j psi_k``.
    Returns (orders, real-basis cumulative integrals) such that the CDF at phase
    theta is ``[1, cos(d theta)..., sin(d theta)...] @ basis``.
    """
    pops = np.real(np.diag(sigma))
    keep = np.nonzero(pops > 1e-17 * max(pops.sum(), 1e-300))[0]
    dim = int(keep[-1]) + 1 if keep.size else 1
    sigma = sigma[:dim, :dim]
    psi = hermite_functions(dim, xs)
    orders = np.arange(1, dim)
    c0 = np.einsum("j,jx,jx->x", np.real(np.diag(sigma)), psi, psi)
    rows = [c0]
    cos_rows, sin_rows = [], []
    for d in orders:
        j = np.arange(dim - d)
        cd = np.einsum("j,jx,jx->x", sigma[j, j + d], psi[j], psi[j + d])
        cos_rows.append(2.0 * cd.real)
        sin_rows.append(-2.0 * cd.imag)
    basis = np.array(rows + cos_rows + sin_rows)
    return orders, cumulative_trapezoid(basis, xs, axis=1, initial=0.0)


def _phase_features(thetas: np.ndarray, orders: np.ndarray) -> np.ndarray:
    ang = np.outer(thetas, orders)
    return np.hstack([np.ones((len(thetas), 1)), np.cos(ang), np.sin(ang)])


def sample_probe(E: ProcessTensor, probe: ProbeSpec, n_samples: int,
                 loss: LossModel | None = None, rng_seed=None,
                 phase: PhaseDistribution | None = None, chunk: int = 1000) -> np.ndarray:
    """Draw ``(theta, x)`` pairs by inverse-CDF sampling of the marginal density.

    Returns an array of shape (n_samples, 2). Deterministic for a given seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    phase = phase or PhaseDistribution()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    sigma = output_state(E, probe.alpha, loss)
    xs = X_GRID
    orders, basis = _fourier_cdfs(sigma, xs)

    thetas = phase.draw(rng, n_samples)
    u = rng.random(n_samples)
    x = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        sl = slice(start, min(start + chunk, n_samples))
        cdf = _phase_features(thetas[sl], orders) @ basis
        total = cdf[:, -1]
        if np.any(total <= 0.0):
            raise SimulationError(f"marginal density of probe {probe.label} vanishes")
        # running maximum removes round-off non-monotonicity before inversion
        cdf = np.maximum.accumulate(cdf, axis=1)
        target = u[sl] * total
        hi = np.clip((cdf < target[:, None]).sum(axis=1), 1, len(xs) - 1)
        rows = np.arange(len(hi))
        c_lo, c_hi = cdf[rows, hi - 1], cdf[rows, hi]
        span = np.where(c_hi > c_lo, c_hi - c_lo, 1.0)
        frac = np.clip((target - c_lo) / span, 0.0, 1.0)
        x[sl] = xs[hi - 1] + frac * (xs[hi] - xs[hi - 1])
    return np.column_stack([thetas, x])


def _validate_success(model: ProcessModel, probes) -> list[float]:
    g = [model.success_probability(p.alpha) for p in probes]
    bad = [(p.label, gm) for p, gm in zip(probes, g) if gm >= 1.0 and not model.deterministic]
    if bad:
        raise ValueError(f"success probability must stay below 1; offending probes {bad}")
    return g


def simulate_dataset(model: ProcessModel, probes: list[ProbeSpec], n_per_probe: int,
                     loss: LossModel | None = None, seed: int = 0,
                     phase: PhaseDistribution | None = None,
                     sim_dim: int = SIM_DIM) -> HomodyneDataset:
    """Monte Carlo dataset of ``n_per_probe`` successful events per probe.

    Each probe draws from its own stream spawned from ``seed``, so results do
    not depend on evaluation order.
    """
    if not probes:
        raise ValueError("at least one probe is required")
    loss = loss or LossModel(1.0)
    phase = phase or PhaseDistribution()
    g = _validate_success(model, probes)
    E = reference_tensor(model, sim_dim, sim_dim + 1)
    streams = np.random.SeedSequence(seed).spawn(len(probes))
    records = [sample_probe(E, p, n_per_probe, loss, np.random.default_rng(s), phase)
               for p, s in zip(probes, streams)]
    return HomodyneDataset(list(probes), records, g, loss.eta, seed, phase)


def exact_bin_weights(model: ProcessModel, probes: list[ProbeSpec], n_per_probe: float,
                      loss: LossModel | None = None, dtheta: float = 2 * np.pi / 64,
                      dx: float = 12 / 128, x_min: float = -6.0,
                      sim_dim: int = SIM_DIM):
    """Expected bin counts ``h_{m;u,v}`` computed from the marginal densities.

    Phases are assumed uniform; each probe's weights are the expected numbers
    of successful events in each bin out of ``n_per_probe``.
    """
    from .mle import QuadratureHistogram

    loss = loss or LossModel(1.0)
    g = _validate_success(model, probes)
    E = reference_tensor(model, sim_dim, sim_dim + 1)
    n_theta = int(round(2 * np.pi / dtheta))
    n_x = int(round(-2 * x_min / dx))
    uu, vv = np.meshgrid(np.arange(n_theta), np.arange(n_x), indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    th = (uu + 0.5) * dtheta
    xc = x_min + (vv + 0.5) * dx
    bins, counts = [], []
    for p, gm in zip(probes, g):
        sigma = output_state(E, p.alpha, loss)
        v = quad_vectors(sigma.shape[0], th, xc)
        dens = np.clip(np.real(np.einsum("bj,jk,bk->b", v.conj(), sigma, v)), 0.0, None)
        s = np.real(np.trace(sigma))
        w = n_per_probe * dens * dtheta * dx / (2 * np.pi * s)
        keep = w > 0
        bins.append(np.column_stack([uu[keep], vv[keep]]))
        counts.append(w[keep])
    return QuadratureHistogram(dtheta, dx, x_min, np.array([p.alpha for p in probes]),
                               np.array(g, dtype=float), bins, counts, loss.eta)
