"""Fidelity-based comparison of process tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import psd_sqrt
from .process import ProcessTensor, strip_heralding

ZERO_TRACE = 1e-14


@dataclass
class WorstCaseConfig:
    """Monte Carlo search over input density matrices ``T^dag T / Tr(T^dag T)``.

    ``n_input_max=None`` means one below the tensor's input cutoff, so that the
    image of photon addition still fits in the output space. ``fock_start`` adds
    one walk started from the worst number state to the random restarts.
    """

    n_input_max: int | None = None
    walk_steps: int = 20000
    step_sigma: float = 0.02
    restarts: int = 5
    seed: int = 0
    fock_start: bool = True

    def __post_init__(self):
        if self.walk_steps < 1:
            raise ValueError("walk_steps must be >= 1")
        if self.step_sigma <= 0:
            raise ValueError("step_sigma must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` after normalizing both states to unit trace."""
    tr_r = float(np.real(np.trace(rho)))
    tr_s = float(np.real(np.trace(sigma)))
    if tr_r <= ZERO_TRACE or tr_s <= ZERO_TRACE:
        raise ValueError("fidelity is undefined for zero-trace operators")
    s = psd_sqrt(rho / tr_r)
    w = np.linalg.eigvalsh(s @ (sigma / tr_s) @ s)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def _physical(E: ProcessTensor) -> ProcessTensor:
    return strip_heralding(E) if E.heralded else E


@dataclass
class WorstCaseResult:
    fidelity: float
    rho: np.ndarray
    restart_minima: list[float]
    accepted: list[list[float]]


def worst_case_search(E_true: ProcessTensor, E_est: ProcessTensor,
                      config: WorstCaseConfig | None = None) -> WorstCaseResult:
    """Stochastic descent of the output fidelity over input states; keeps the history."""
    config = config or WorstCaseConfig()
    A, B = _physical(E_true), _physical(E_est)
    if (A.dimH, A.dimK) != (B.dimH, B.dimK):
        raise ValueError(f"dimension mismatch: {(A.dimH, A.dimK)} vs {(B.dimH, B.dimK)}")
    n_in = A.dimH - 2 if config.n_input_max is None else config.n_input_max
    d = max(n_in, 0) + 1
    if d > A.dimH:
        raise ValueError(f"input cutoff {n_in} exceeds the tensor's input space")
    A4 = A.matrix.reshape(A.dimH, A.dimK, A.dimH, A.dimK)[:d, :, :d, :]
    B4 = B.matrix.reshape(B.dimH, B.dimK, B.dimH, B.dimK)[:d, :, :d, :]

    def fid(T):
        rho = T.conj().T @ T
        rho /= np.real(np.trace(rho))
        out_a = np.einsum("mjnk,mn->jk", A4, rho)
        out_b = np.einsum("mjnk,mn->jk", B4, rho)
        if np.real(np.trace(out_a)) <= ZERO_TRACE or np.real(np.trace(out_b)) <= ZERO_TRACE:
            return np.inf, rho
        return uhlmann_fidelity(out_a, out_b), rho

    def walk(T, rng):
        f, rho = fid(T)
        T = T / np.linalg.norm(T)
        accepted = [f]
        for _ in range(config.walk_steps):
            step = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            T_new = T + config.step_sigma * step / np.sqrt(2.0)
            f_new, rho_new = fid(T_new)
            if f_new < f:
                T, f, rho = T_new / np.linalg.norm(T_new), f_new, rho_new
                accepted.append(f)
        return f, rho, accepted

    streams = np.random.SeedSequence(config.seed).spawn(config.restarts + 1)
    starts = []
    for ss in streams[:-1]:
        rng = np.random.default_rng(ss)
        T = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        while not np.isfinite(fid(T)[0]):
            T = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        starts.append((T, rng))
    if config.fock_start:
        # random full-rank starts rarely reach near-pure minima, so one extra walk
        # begins at the number state with the lowest output fidelity
        fock = [np.diag(np.eye(d)[n]).astype(complex) for n in range(d)]
        scores = [fid(T)[0] for T in fock]
        starts.append((fock[int(np.argmin(scores))], np.random.default_rng(streams[-1])))

    best_f, best_rho = np.inf, None
    minima, histories = [], []
    for T, rng in starts:
        f, rho, accepted = walk(T, rng)
        minima.append(f)
        histories.append(accepted)
        if f < best_f:
            best_f, best_rho = f, rho
    return WorstCaseResult(float(best_f), best_rho, minima, histories)


def worst_case_fidelity(E_true: ProcessTensor, E_est: ProcessTensor,
                        config: WorstCaseConfig | None = None) -> tuple[float, np.ndarray]:
    """Minimum output fidelity over input states, with the minimizing input."""
    res = worst_case_search(E_true, E_est, config)
    return res.fidelity, res.rho


def diag_table(E: ProcessTensor, scale: float = 1.0) -> np.ndarray:
    """Rows ``(m, k, E^{mm}_{kk} / scale)`` over the physical output levels."""
    P = _physical(E)
    d = np.einsum("mmkk->mk", P.tensor())
    if np.max(np.abs(d.imag), initial=0.0) > 1e-8:
        raise ValueError("diagonal tensor elements have non-negligible imaginary parts")
    m, k = np.meshgrid(np.arange(P.dimH), np.arange(P.dimK), indexing="ij")
    return np.column_stack([m.ravel(), k.ravel(), d.real.ravel() / scale])


def diag_matrix(E: ProcessTensor, scale: float = 1.0) -> np.ndarray:
    """``E^{mm}_{kk} / scale`` as a (dimH, dimK_phys) real array."""
    P = _physical(E)
    return np.real(np.einsum("mmkk->mk", P.tensor())) / scale


def suggest_cutoff(alpha_max: complex, n_total: float) -> tuple[int, float]:
    """Fock cutoff whose probe overlap ``|<alpha_max|n>|^2`` sits nearest to ``1/n_total``.

    Only the decreasing tail ``n >= floor(|alpha|^2)`` is searched. The first
    level at or below ``1/n_total`` is compared with its predecessor on a log
    scale and the closer one wins; a level with zero overlap always wins.
    Returns ``(n, overlap)``.
    """
    from .hilbert import fock_overlap

    if n_total < 1:
        raise ValueError("the number of measurements must be >= 1")
    target = np.log(1.0 / n_total)
    n = int(np.floor(abs(alpha_max) ** 2))
    start = n
    while fock_overlap(alpha_max, n) > 1.0 / n_total:
        n += 1
    ov = fock_overlap(alpha_max, n)
    if n > start and ov > 0.0:
        prev = fock_overlap(alpha_max, n - 1)
        if abs(np.log(prev) - target) < abs(np.log(ov) - target):
            return n - 1, prev
    return n, ov
