"""Maximum-likelihood process reconstruction from binned homodyne data.

The estimator iterates ``E <- L^-1 R E R L^-1`` where ``R`` collects
``(h / p) rho^T (x) Pi`` over occupied bins and ``L = lambda (x) I`` with
``lambda = sqrt(Tr_K[R E R])`` restores ``Tr_K E = I`` at every step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .hilbert import (
    LossModel,
    coherent_dm,
    hermitian_part,
    loss_kraus,
    partial_trace_K,
    psd_pinv,
    psd_sqrt,
    quad_vectors,
)
from .process import ProcessTensor, crop, mask, mask_matrix, strip_heralding, trace_defect

log = logging.getLogger(__name__)

P_MIN = 1e-300


class LikelihoodError(ValueError):
    """An occupied bin has vanishing model probability."""

    def __init__(self, probe: int, bin_key, p: float):
        self.probe, self.bin_key, self.p = probe, bin_key, p
        super().__init__(f"probability {p:.3e} on occupied bin {bin_key} of probe {probe}")


@dataclass
class QuadratureHistogram:
    """Sparse per-probe bin counts; bin (u, v) is centred at ((u+1/2) dtheta, x_min + (v+1/2) dx)."""

    dtheta: float
    dx: float
    x_min: float
    alphas: np.ndarray
    g: np.ndarray
    bins: list[np.ndarray]
    counts: list[np.ndarray]
    eta_detector: float = 1.0

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=complex)
        self.g = np.asarray(self.g, dtype=float)
        self.bins = [np.asarray(b, dtype=np.int64).reshape(-1, 2) for b in self.bins]
        self.counts = [np.asarray(c, dtype=float) for c in self.counts]
        if not (len(self.alphas) == len(self.g) == len(self.bins) == len(self.counts)):
            raise ValueError("per-probe fields must have equal length")
        for b, c in zip(self.bins, self.counts):
            if len(b) != len(c):
                raise ValueError("bins and counts differ in length")
            if np.any(c < 0):
                raise ValueError("negative bin count")

    @property
    def n_probes(self) -> int:
        return len(self.alphas)

    @property
    def totals(self) -> np.ndarray:
        return np.array([c.sum() for c in self.counts])

    @property
    def heralded(self) -> bool:
        return bool(np.any(self.g < 1.0))

    def centers(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        b = self.bins[m]
        return (b[:, 0] + 0.5) * self.dtheta, self.x_min + (b[:, 1] + 0.5) * self.dx

    def scaled(self, factor: float) -> "QuadratureHistogram":
        return replace(self, counts=[c * factor for c in self.counts])

    def reordered(self, order) -> "QuadratureHistogram":
        order = list(order)
        return replace(self, alphas=self.alphas[order], g=self.g[order],
                       bins=[self.bins[i] for i in order], counts=[self.counts[i] for i in order])


def bin(dataset, dtheta: float = 2 * np.pi / 64, dx: float = 12 / 128,
        x_min: float = -6.0) -> QuadratureHistogram:
    """Histogram each probe's records on a (theta, x) grid. Counts are preserved exactly."""
    if dtheta <= 0 or dx <= 0:
        raise ValueError("bin widths must be positive")
    bins, counts = [], []
    for rec in dataset.records:
        u = np.floor(rec[:, 0] / dtheta).astype(np.int64)
        v = np.floor((rec[:, 1] - x_min) / dx).astype(np.int64)
        keys, cnt = np.unique(np.column_stack([u, v]), axis=0, return_counts=True)
        bins.append(keys)
        counts.append(cnt.astype(float))
    return QuadratureHistogram(dtheta, dx, x_min, dataset.alphas, np.asarray(dataset.g),
                               bins, counts, dataset.eta_detector)


class PovmCache:
    """Quadrature vectors at every occupied bin centre, shared by all probes.

    The projector of a bin is ``v v^dag`` with ``v[j] = <j|theta, x>``; with
    detector loss it becomes ``sum_k A_k v v^dag A_k^dag``. Matrices are kept
    in this factorized form and materialized only on request.
    """

    def __init__(self, hist: QuadratureHistogram, dimK_phys: int, eta: float = 1.0,
                 heralded: bool = False):
        self.dim = dimK_phys
        self.heralded = heralded
        self.loss = LossModel(eta)
        self.kraus = None if self.loss.lossless else loss_kraus(self.loss, dimK_phys)
        keys = np.concatenate(hist.bins) if hist.bins else np.empty((0, 2), np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.keys = uniq
        theta = (uniq[:, 0] + 0.5) * hist.dtheta
        x = hist.x_min + (uniq[:, 1] + 0.5) * hist.dx
        self.vectors = quad_vectors(dimK_phys, theta, x)
        splits = np.cumsum([len(b) for b in hist.bins])[:-1]
        self.index = np.split(inverse, splits)

    def __len__(self):
        return len(self.keys)

    def probe_vectors(self, m: int) -> np.ndarray:
        return self.vectors[self.index[m]]

    def matrix(self, i: int) -> np.ndarray:
        v = self.vectors[i]
        pi = np.outer(v, v.conj())
        if self.kraus is None:
            return pi
        return sum(A @ pi @ A.T for A in self.kraus)

    def covers(self, hist: QuadratureHistogram) -> bool:
        if len(self.index) != hist.n_probes:
            return False
        return all(np.array_equal(self.keys[idx], b) for idx, b in zip(self.index, hist.bins))

    def effective_state(self, sigma: np.ndarray) -> np.ndarray:
        """State whose ideal-projector statistics equal ``sigma``'s lossy-POVM statistics."""
        if self.kraus is None:
            return sigma
        return sum(A.T @ sigma @ A for A in self.kraus)

    def lift(self, S: np.ndarray) -> np.ndarray:
        """Map a sum of ideal projectors to the corresponding sum of lossy POVM elements."""
        if self.kraus is None:
            return S
        return sum(A @ S @ A.T for A in self.kraus)


@dataclass
class IterationConfig:
    """Knobs of the fixed-point iteration.

    ``mu_schedule`` is ``"fixed"`` (constant dilution ``mu``) or ``"adaptive"``
    (``mu`` until ``settle_iters`` consecutive increases, then a ramp above 1
    by ``mu_step`` up to ``mu_max``, resetting to 1 on any decrease).
    """

    mu: float = 1.0
    mu_schedule: str = "fixed"
    max_iters: int = 5000
    ll_rel_tol: float = 1e-9
    patience: int = 10
    eigen_floor: float = 1e-12
    phase_invariant: bool = True
    eta: float = 1.0
    g_rescale: float = 1.0
    mu_max: float = 1.3
    mu_step: float = 0.02
    settle_iters: int = 20
    track_constraints: bool = True

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.ll_rel_tol <= 0:
            raise ValueError("ll_rel_tol must be positive")
        if self.mu_schedule not in ("fixed", "adaptive"):
            raise ValueError(f"unknown mu schedule {self.mu_schedule!r}")
        if self.max_iters < 0 or self.patience < 1:
            raise ValueError("max_iters must be >= 0 and patience >= 1")
        if self.g_rescale <= 0:
            raise ValueError("g_rescale must be positive")
        LossModel(self.eta)


@dataclass
class ReconstructionReport:
    E_est: ProcessTensor
    E_raw: ProcessTensor
    loglik_trace: list[float]
    iterations: int
    converged: bool
    trace_defect: float
    min_eigenvalue: float
    mu_history: list[float]
    wall_time: float
    defect_history: list[float] = field(default_factory=list)
    min_eig_history: list[float] = field(default_factory=list)
    lambda_singular: bool = False

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iters"


class _Problem:
    """Everything the iteration needs that does not change between steps."""

    def __init__(self, hist: QuadratureHistogram, cache: PovmCache, dimH: int,
                 g=None, phase_invariant: bool = False):
        if not cache.covers(hist):
            raise ValueError("POVM cache does not cover the histogram")
        self.hist, self.cache = hist, cache
        self.dimH = dimH
        self.dimKp = cache.dim
        self.heralded = cache.heralded
        self.dimK = self.dimKp + int(self.heralded)
        g = hist.g if g is None else np.asarray(g, dtype=float)
        if self.heralded:
            if np.any(g <= 0) or np.any(g >= 1):
                raise ValueError(f"heralded reconstruction needs 0 < g_m < 1, got {g}")
            self.fail = hist.totals * (1.0 - g) / g
        else:
            self.fail = np.zeros(hist.n_probes)
        self.rho_T = [coherent_dm(a, dimH).T for a in hist.alphas]
        self.V = [cache.probe_vectors(m) for m in range(hist.n_probes)]
        self.norm = float(hist.totals.sum() + self.fail.sum())
        self.mask = mask_matrix(dimH, self.dimK, self.heralded) if phase_invariant else None

    def outputs(self, E: ProcessTensor) -> list[np.ndarray]:
        E4 = E.matrix.reshape(self.dimH, self.dimK, self.dimH, self.dimK)
        return [np.einsum("mjnk,nm->jk", E4, rT) for rT in self.rho_T]

    def probabilities(self, E: ProcessTensor):
        probs, p_fail = [], []
        for m, sig in enumerate(self.outputs(E)):
            eff = self.cache.effective_state(sig[: self.dimKp, : self.dimKp])
            V = self.V[m]
            probs.append(np.real(np.sum((V.conj() @ eff) * V, axis=1)))
            p_fail.append(float(np.real(sig[-1, -1])) if self.heralded else 1.0)
        return probs, np.array(p_fail)

    def loglik(self, probs, p_fail) -> float:
        total = 0.0
        for m, (p, h) in enumerate(zip(probs, self.hist.counts)):
            occ = h > 0
            if occ.any():
                i = int(np.argmin(np.where(occ, p, np.inf)))
                if p[i] <= P_MIN:
                    raise LikelihoodError(m, tuple(self.hist.bins[m][i]), float(p[i]))
            total += float(np.dot(h[occ], np.log(p[occ])))
            if self.fail[m] > 0:
                if p_fail[m] <= P_MIN:
                    raise LikelihoodError(m, "fail", float(p_fail[m]))
                total += self.fail[m] * np.log(p_fail[m])
        return total

    def R(self, probs, p_fail) -> np.ndarray:
        D = self.dimH * self.dimK
        R = np.zeros((D, D), dtype=complex)
        for m in range(self.hist.n_probes):
            h = self.hist.counts[m]
            c = np.divide(h, probs[m], out=np.zeros_like(h), where=h > 0)
            V = self.V[m]
            S = self.cache.lift((V.T * c) @ V.conj())
            if self.heralded:
                St = np.zeros((self.dimK, self.dimK), dtype=complex)
                St[: self.dimKp, : self.dimKp] = S
                St[-1, -1] = self.fail[m] / p_fail[m] if self.fail[m] > 0 else 0.0
                S = St
            R += np.kron(self.rho_T[m], S)
        R /= self.norm
        if self.mask is not None:
            R = np.where(self.mask, R, 0.0)
        return hermitian_part(R)


def log_likelihood(E: ProcessTensor, hist: QuadratureHistogram, cache: PovmCache,
                   g=None) -> float:
    """Binned log-likelihood, including the failure term for heralded tensors."""
    prob = _Problem(hist, cache, E.dimH, g)
    _check_dims(E, prob)
    return prob.loglik(*prob.probabilities(E))


def build_R(E: ProcessTensor, hist: QuadratureHistogram, cache: PovmCache, g=None,
            config: IterationConfig | None = None) -> np.ndarray:
    """Update operator ``R`` at ``E``, normalized by the total event count."""
    config = config or IterationConfig()
    prob = _Problem(hist, cache, E.dimH, g, config.phase_invariant)
    _check_dims(E, prob)
    probs, p_fail = prob.probabilities(E)
    prob.loglik(probs, p_fail)
    return prob.R(probs, p_fail)


def _check_dims(E: ProcessTensor, prob: _Problem):
    if (E.dimH, E.dimK, E.heralded) != (prob.dimH, prob.dimK, prob.heralded):
        raise ValueError(
            f"tensor dims ({E.dimH}, {E.dimK}, heralded={E.heralded}) do not match the "
            f"problem ({prob.dimH}, {prob.dimK}, heralded={prob.heralded})")


def dilute(R: np.ndarray, mu: float, reference: np.ndarray | None = None) -> np.ndarray:
    """``mu R + (1 - mu) reference``; the reference defaults to the identity."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if reference is None:
        return mu * R + (1.0 - mu) * np.eye(R.shape[0])
    return mu * R + (1.0 - mu) * reference


def lagrange_operator(E: ProcessTensor, R: np.ndarray) -> np.ndarray:
    """``lambda (x) I_K`` with ``lambda = sqrt(Tr_K[R E R])`` for the current iterate."""
    lam = psd_sqrt(partial_trace_K(R @ E.matrix @ R.conj().T, E.dimH, E.dimK))
    return np.kron(lam, np.eye(E.dimK))


def iterate_once(E: ProcessTensor, R: np.ndarray, floor: float = 1e-12):
    """One ``L^-1 R E R L^-1`` step. Returns ``(E_next, lambda)``.

    ``floor`` is relative to the largest eigenvalue of lambda.
    """
    dH, dK = E.dimH, E.dimK
    RER = R @ E.matrix @ R.conj().T
    lam = psd_sqrt(partial_trace_K(RER, dH, dK))
    top = float(np.linalg.eigvalsh(lam)[-1])
    lam_inv = psd_pinv(lam, floor * top if top > 0 else floor)
    X = RER.reshape(dH, dK, dH, dK)
    X = np.einsum("am,mjnk,nb->ajbk", lam_inv, X, lam_inv).reshape(dH * dK, dH * dK)
    return ProcessTensor(dH, dK, hermitian_part(X), E.heralded), lam


def initial_tensor(dimH: int, dimK: int, heralded: bool = False) -> ProcessTensor:
    return ProcessTensor(dimH, dimK, np.eye(dimH * dimK) / dimK, heralded)


def reconstruct(data, n_max: int, config: IterationConfig | None = None, *,
                dimK_phys: int | None = None, heralded: bool | None = None,
                crop_to: int | None = None, E0: ProcessTensor | None = None,
                bins: dict | None = None, callback=None) -> ReconstructionReport:
    """Run the likelihood iteration on a histogram (or a raw dataset, binned first).

    ``n_max`` sets the input cutoff (dimH = n_max + 1); the physical output
    cutoff defaults to the same. Heralded mode is on whenever some g_m < 1.
    """
    config = config or IterationConfig()
    hist = data if isinstance(data, QuadratureHistogram) else bin(data, **(bins or {}))
    dimH = n_max + 1
    dimKp = dimK_phys or dimH
    heralded = hist.heralded if heralded is None else heralded
    g = hist.g * config.g_rescale if heralded else np.ones(hist.n_probes)
    if heralded and np.any(g >= 1.0):
        raise ValueError(f"rescaled success fractions must stay below 1, got {g}")
    cache = PovmCache(hist, dimKp, config.eta, heralded)
    prob = _Problem(hist, cache, dimH, g, config.phase_invariant)
    dimK = prob.dimK

    E = E0 if E0 is not None else initial_tensor(dimH, dimK, heralded)
    _check_dims(E, prob)
    if config.phase_invariant:
        E = mask(E)
    t0 = time.perf_counter()
    probs, p_fail = prob.probabilities(E)
    L = prob.loglik(probs, p_fail)
    trace, mus, defects, mineigs = [L], [], [], []
    mu = config.mu
    settling = config.mu_schedule == "adaptive"
    streak = quiet = 0
    converged = singular = False
    it = 0
    while it < config.max_iters:
        it += 1
        R = prob.R(probs, p_fail)
        # over-relaxation extrapolates about the Lagrange operator, which is scale-free
        # and leaves the fixed point unchanged; dilution uses the identity
        ref = lagrange_operator(E, R) if mu > 1.0 else None
        E_new, lam = iterate_once(E, dilute(R, mu, ref), config.eigen_floor)
        w = np.linalg.eigvalsh(lam)
        if not singular and w[0] < config.eigen_floor * w[-1]:
            singular = True
            if mu >= 1.0:
                log.warning("lambda is singular at iteration %d; the probes do not span the "
                            "input space, use mu < 1 to keep the update well conditioned", it)
        if config.phase_invariant:
            E_new = mask(E_new)
        probs_new, p_fail_new = prob.probabilities(E_new)
        L_new = prob.loglik(probs_new, p_fail_new)
        mus.append(mu)

        if config.mu_schedule == "adaptive" and mu > 1.0 and L_new < L:
            # overshoot: discard the step and fall back to the plain iteration
            mu = 1.0
            continue

        rel = (L_new - L) / abs(L) if L != 0 else L_new - L
        E, probs, p_fail, L = E_new, probs_new, p_fail_new, L_new
        trace.append(L)
        if config.track_constraints:
            defects.append(trace_defect(E))
            mineigs.append(E.min_eigenvalue())
        if callback is not None:
            callback(it, E, L, mu)

        if config.mu_schedule == "adaptive":
            if rel > 0:
                streak += 1
                if settling and streak >= config.settle_iters:
                    settling, mu = False, max(mu, 1.0)
                elif not settling:
                    mu = min(mu + config.mu_step, config.mu_max)
            else:
                streak = 0
                if not settling:
                    settling, mu = True, config.mu

        quiet = quiet + 1 if 0 <= rel < config.ll_rel_tol else 0
        if quiet >= config.patience:
            converged = True
            break

    wall = time.perf_counter() - t0
    log.info("reconstruction %s after %d iterations, loglik %.6f",
             "converged" if converged else "stopped", it, L)
    E_raw = E
    E_est = strip_heralding(E).scaled(1.0 / config.g_rescale) if heralded else E
    if crop_to is not None:
        E_est = crop(E_est, crop_to)
    return ReconstructionReport(
        E_est=E_est, E_raw=E_raw, loglik_trace=trace, iterations=it, converged=converged,
        trace_defect=trace_defect(E_raw), min_eigenvalue=E_raw.min_eigenvalue(),
        mu_history=mus, wall_time=wall, defect_history=defects, min_eig_history=mineigs,
        lambda_singular=singular)
