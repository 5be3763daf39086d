"""Truncated Fock-space numerics.

Conventions used throughout the package:

* quadrature wavefunctions are ``psi_n(x) = pi**-0.25 H_n(x) exp(-x**2/2) / sqrt(2**n n!)``
  so the vacuum quadrature variance is 1/2;
* ``<n|theta, x> = exp(i n theta) psi_n(x)``;
* operators on H (x) K are flattened with ``row = m * dimK + j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

#: negative eigenvalues above -REJECT_TOL are round-off and clamped to zero;
#: anything below means the operator is genuinely indefinite
REJECT_TOL = 1e-6
#: coherent-state truncation deficit above which a warning is issued
DEFICIT_WARN = 1e-4


class TruncationWarning(UserWarning):
    """The Fock cutoff is too small to hold a probe state."""


@dataclass(frozen=True)
class LossModel:
    """Beam-splitter loss with intensity transmission ``eta``."""

    eta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    @property
    def lossless(self) -> bool:
        return self.eta == 1.0


def hermite(m: int, x):
    """Physicists' Hermite polynomial H_m(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for k in range(1, m):
        h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


def _log_norm(m: int) -> float:
    # log of 1 / sqrt(2**m m!)
    return -0.5 * (m * np.log(2.0) + gammaln(m + 1))


def quad_overlap(m: int, theta: float, x: float) -> complex:
    """``<m|theta, x>`` evaluated directly from the Hermite polynomial."""
    radial = np.pi ** -0.25 * hermite(m, x) * np.exp(_log_norm(m) - 0.5 * x * x)
    return complex(np.exp(1j * m * theta) * radial)


def hermite_functions(dim: int, x) -> np.ndarray:
    """Normalized oscillator wavefunctions psi_0..psi_{dim-1} on ``x``.

    Uses the normalized recurrence, which does not overflow for large ``m``.
    Returns an array of shape ``(dim,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((dim,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if dim > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, dim - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def quad_vectors(dim: int, theta, x) -> np.ndarray:
    """Rows ``v[b, m] = <m|theta_b, x_b>`` for paired arrays of phases and quadratures."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta, x = np.broadcast_arrays(theta, x)
    psi = hermite_functions(dim, x)  # (dim, N)
    phase = np.exp(1j * np.outer(theta, np.arange(dim)))  # (N, dim)
    return phase * psi.T


def projector(theta: float, x: float, dim: int) -> np.ndarray:
    """Rank-one quadrature projector ``|theta,x><theta,x|`` in the Fock basis."""
    v = quad_vectors(dim, theta, x)[0]
    return np.outer(v, v.conj())


def bernoulli_weights(eta: float, dim: int) -> np.ndarray:
    """``B[n + k, n] = sqrt(C(n + k, k) eta**n (1 - eta)**k)`` on a ``dim x dim`` grid.

    Entry ``[a, n]`` holds ``B_{a, n}`` for ``a >= n`` and zero otherwise.
    """
    a = np.arange(dim)[:, None]
    n = np.arange(dim)[None, :]
    k = a - n
    valid = k >= 0
    kk = np.where(valid, k, 0)
    log_binom = gammaln(a + 1) - gammaln(n + 1) - gammaln(kk + 1)
    log_eta = np.log(eta)
    log_loss = np.log1p(-eta) if eta < 1.0 else -np.inf
    with np.errstate(invalid="ignore"):
        logs = log_binom + n * log_eta + np.where(kk > 0, kk * log_loss, 0.0)
    return np.where(valid, np.exp(0.5 * logs), 0.0)


def loss_kraus(loss: LossModel, dim: int) -> list[np.ndarray]:
    """Operators ``A_k`` with ``A_k[n + k, n] = B_{n+k, n}``, for k = 0..dim-1.

    ``apply_loss(rho) = sum_k A_k^dag rho A_k`` and the loss-corrected POVM
    element is ``sum_k A_k Pi A_k^dag``. Only ``k = 0`` survives when lossless.
    """
    B = bernoulli_weights(loss.eta, dim)
    ops = []
    for k in range(dim if not loss.lossless else 1):
        A = np.zeros((dim, dim))
        idx = np.arange(dim - k)
        A[idx + k, idx] = B[idx + k, idx]
        ops.append(A)
    return ops


def lossy_projector(theta: float, x: float, loss: LossModel, dim: int) -> np.ndarray:
    """POVM element of an ideal projector seen through a detector of efficiency eta."""
    pi = projector(theta, x, dim)
    return sum(A @ pi @ A.T for A in loss_kraus(loss, dim))


def apply_loss(rho: np.ndarray, loss: LossModel) -> np.ndarray:
    """Beam-splitter absorption of a density matrix (dual of :func:`lossy_projector`)."""
    rho = np.asarray(rho)
    return sum(A.T @ rho @ A for A in loss_kraus(loss, rho.shape[0]))


def coherent_vector(alpha: complex, dim: int, *, return_deficit: bool = False,
                    warn_above: float | None = None):
    """Fock amplitudes of ``|alpha>`` truncated to ``dim`` (not renormalized).

    With ``return_deficit`` the pair ``(amplitudes, 1 - sum |amplitudes|**2)``
    is returned. A :class:`TruncationWarning` is raised when the deficit
    exceeds ``warn_above``.
    """
    n = np.arange(dim)
    r = abs(alpha)
    if r == 0.0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
    else:
        log_mag = -0.5 * r * r + n * np.log(r) - 0.5 * gammaln(n + 1)
        amps = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    deficit = max(0.0, 1.0 - float(np.sum(np.abs(amps) ** 2)))
    if warn_above is not None and deficit > warn_above:
        warnings.warn(f"|alpha={alpha}> loses {deficit:.2e} of its norm at dim={dim}",
                      TruncationWarning, stacklevel=2)
    if return_deficit:
        return amps, deficit
    return amps


def fock_overlap(alpha: complex, n: int) -> float:
    """``|<alpha|n>|**2``, the Poisson weight of photon number n."""
    r2 = abs(alpha) ** 2
    if r2 == 0.0:
        return 1.0 if n == 0 else 0.0
    return float(np.exp(-r2 + n * np.log(r2) - gammaln(n + 1)))


def coherent_dm(alpha: complex, dim: int) -> np.ndarray:
    v = coherent_vector(alpha, dim)
    return np.outer(v, v.conj())


def hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def _clamped_eigh(M: np.ndarray):
    w, U = np.linalg.eigh(hermitian_part(M))
    if w.size and w.min() < -REJECT_TOL * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError(
            f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), U


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Hermitian square root of a PSD matrix via eigendecomposition."""
    w, U = _clamped_eigh(M)
    return (U * np.sqrt(w)) @ U.conj().T


def psd_pinv(M: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse of a PSD matrix; eigenvalues below ``floor`` map to zero."""
    w, U = _clamped_eigh(M)
    inv = np.zeros_like(w)
    keep = w >= floor
    inv[keep] = 1.0 / w[keep]
    return (U * inv) @ U.conj().T


def partial_trace_K(M: np.ndarray, dimH: int, dimK: int) -> np.ndarray:
    """Trace out the second (output) factor of an operator on H (x) K."""
    M = np.asarray(M)
    if M.shape != (dimH * dimK, dimH * dimK):
        raise ValueError(f"expected shape {(dimH * dimK,) * 2}, got {M.shape}")
    return np.einsum("mjnj->mn", M.reshape(dimH, dimK, dimH, dimK))


def partial_trace_H(M: np.ndarray, dimH: int, dimK: int) -> np.ndarray:
    """Trace out the first (input) factor of an operator on H (x) K."""
    M = np.asarray(M)
    if M.shape != (dimH * dimK, dimH * dimK):
        raise ValueError(f"expected shape {(dimH * dimK,) * 2}, got {M.shape}")
    return np.einsum("mjmk->jk", M.reshape(dimH, dimK, dimH, dimK))
