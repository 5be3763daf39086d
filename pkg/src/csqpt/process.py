"""Process tensors in the Jamiolkowski representation and analytic reference channels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import LossModel, bernoulli_weights, hermitian_part, partial_trace_K

FLATTENING = "row=m*dimK+j"


@dataclass(frozen=True, eq=False)
class ProcessTensor:
    """Jamiolkowski operator ``E`` on H (x) K.

    ``matrix[m * dimK + j, n * dimK + k]`` is the tensor element E^{mn}_{jk}
    = <j| E(|m><n|) |k>. When ``heralded`` is set, the last K index is the
    fictitious failure state and ``dimK`` counts it.
    """

    dimH: int
    dimK: int
    matrix: np.ndarray = field(repr=False)
    heralded: bool = False

    def __post_init__(self):
        D = self.dimH * self.dimK
        M = np.array(self.matrix, dtype=complex)
        if M.shape != (D, D):
            raise ValueError(f"matrix shape {M.shape} does not match dims ({self.dimH}, {self.dimK})")
        if self.heralded and self.dimK < 2:
            raise ValueError("a heralded tensor needs at least one physical output level")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def dimK_phys(self) -> int:
        return self.dimK - 1 if self.heralded else self.dimK

    def tensor(self) -> np.ndarray:
        """Rank-4 view indexed ``[m, n, j, k]``."""
        return self.matrix.reshape(self.dimH, self.dimK, self.dimH, self.dimK).transpose(0, 2, 1, 3)

    @classmethod
    def from_elements(cls, elements, heralded: bool = False) -> "ProcessTensor":
        """Assemble from an array ``elements[m, n, j, k]``."""
        el = np.asarray(elements, dtype=complex)
        dH, dH2, dK, dK2 = el.shape
        if dH != dH2 or dK != dK2:
            raise ValueError(f"elements must have shape (dH, dH, dK, dK), got {el.shape}")
        M = el.transpose(0, 2, 1, 3).reshape(dH * dK, dH * dK)
        return cls(dH, dK, M, heralded)

    @classmethod
    def from_kraus(cls, ops, dimH: int, dimK: int) -> "ProcessTensor":
        """Channel ``rho -> sum_l K_l rho K_l^dag`` with ``K_l`` of shape (dimK, dimH)."""
        M = np.zeros((dimH * dimK,) * 2, dtype=complex)
        for K in ops:
            w = np.asarray(K).T.reshape(-1)
            M += np.outer(w, w.conj())
        return cls(dimH, dimK, hermitian_part(M))

    def physical(self) -> np.ndarray:
        """Matrix restricted to H (x) K_phys."""
        if not self.heralded:
            return self.matrix
        dH, dK, dKp = self.dimH, self.dimK, self.dimK_phys
        idx = (np.arange(dH)[:, None] * dK + np.arange(dKp)[None, :]).ravel()
        return self.matrix[np.ix_(idx, idx)]

    def scaled(self, factor: float) -> "ProcessTensor":
        return ProcessTensor(self.dimH, self.dimK, self.matrix * factor, self.heralded)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(hermitian_part(self.matrix))[0])


def tensor_element(E: ProcessTensor, m: int, n: int, j: int, k: int) -> complex:
    if not (0 <= m < E.dimH and 0 <= n < E.dimH and 0 <= j < E.dimK and 0 <= k < E.dimK):
        raise IndexError(f"({m}, {n}, {j}, {k}) out of range for dims ({E.dimH}, {E.dimK})")
    return complex(E.matrix[m * E.dimK + j, n * E.dimK + k])


def apply(E: ProcessTensor, rho_in: np.ndarray, include_fail: bool = False) -> np.ndarray:
    """Output state ``Tr_H[E (rho^T (x) I)]``; physical block only unless ``include_fail``."""
    rho_in = np.asarray(rho_in)
    if rho_in.shape != (E.dimH, E.dimH):
        raise ValueError(f"input state must be {E.dimH}x{E.dimH}, got {rho_in.shape}")
    E4 = E.matrix.reshape(E.dimH, E.dimK, E.dimH, E.dimK)
    out = np.einsum("mjnk,mn->jk", E4, rho_in)
    if E.heralded and not include_fail:
        out = out[:-1, :-1]
    return out


def trace_defect(E: ProcessTensor) -> float:
    """Largest absolute entry of ``Tr_K[E] - I``."""
    tk = partial_trace_K(E.matrix, E.dimH, E.dimK)
    return float(np.max(np.abs(tk - np.eye(E.dimH))))


def success_probability(E: ProcessTensor, rho: np.ndarray) -> float:
    return float(np.real(np.trace(apply(E, rho))))


def charges(dimH: int, dimK: int, heralded: bool = False) -> np.ndarray:
    """Photon-number transfer ``j - m`` of each flattened index.

    The failure slot gets a distinct label per input number so that it forms
    its own phase-invariant sector (diagonal in m).
    """
    m = np.repeat(np.arange(dimH), dimK)
    j = np.tile(np.arange(dimK), dimH)
    q = j - m
    if heralded:
        fail = j == dimK - 1
        q = np.where(fail, dimH + dimK + m, q)
    return q


def mask_matrix(dimH: int, dimK: int, heralded: bool = False) -> np.ndarray:
    q = charges(dimH, dimK, heralded)
    return q[:, None] == q[None, :]


def mask(E: ProcessTensor) -> ProcessTensor:
    """Zero every element with ``m - n != j - k``."""
    keep = mask_matrix(E.dimH, E.dimK, E.heralded)
    return ProcessTensor(E.dimH, E.dimK, np.where(keep, E.matrix, 0.0), E.heralded)


def crop(E: ProcessTensor, n_prime_max: int) -> ProcessTensor:
    """Keep only elements whose four photon-number indices are at most ``n_prime_max``."""
    if not (0 <= n_prime_max < E.dimH and n_prime_max < E.dimK_phys):
        raise ValueError(f"n'_max={n_prime_max} out of range for dims ({E.dimH}, {E.dimK_phys})")
    d = n_prime_max + 1
    idx = (np.arange(d)[:, None] * E.dimK + np.arange(d)[None, :]).ravel()
    return ProcessTensor(d, d, E.matrix[np.ix_(idx, idx)])


def strip_heralding(E_tilde: ProcessTensor) -> ProcessTensor:
    """Project a failure-extended tensor onto H (x) K_phys."""
    if not E_tilde.heralded:
        raise ValueError("tensor has no failure slot")
    return ProcessTensor(E_tilde.dimH, E_tilde.dimK_phys, E_tilde.physical())


def with_fail_slot(E: ProcessTensor) -> ProcessTensor:
    """Trace-preserving extension: append a failure level carrying ``I - Tr_K[E]``."""
    if E.heralded:
        return E
    dH, dK = E.dimH, E.dimK
    fail = np.eye(dH) - partial_trace_K(E.matrix, dH, dK)
    el = np.zeros((dH, dH, dK + 1, dK + 1), dtype=complex)
    el[:, :, :dK, :dK] = E.tensor()
    el[:, :, dK, dK] = fail
    return ProcessTensor.from_elements(el, heralded=True)


@dataclass(frozen=True)
class ProcessModel:
    """Analytic test channels: identity, attenuation, phase shift, photon creation."""

    kind: str = "identity"
    param: float = 0.0

    KINDS = ("identity", "attenuation", "phase_shift", "photon_creation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "attenuation" and not 0.0 < self.param <= 1.0:
            raise ValueError(f"attenuation transmission must lie in (0, 1], got {self.param}")
        if self.kind == "photon_creation" and not self.param > 0.0:
            raise ValueError(f"photon creation needs g_sq > 0, got {self.param}")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def attenuation(cls, eta_p: float):
        return cls("attenuation", eta_p)

    @classmethod
    def phase_shift(cls, phi: float):
        return cls("phase_shift", phi)

    @classmethod
    def photon_creation(cls, g_sq: float):
        return cls("photon_creation", g_sq)

    @property
    def deterministic(self) -> bool:
        return self.kind != "photon_creation"

    def success_probability(self, alpha: complex) -> float:
        """Success probability for a coherent input (untruncated)."""
        if self.deterministic:
            return 1.0
        return self.param * (1.0 + abs(alpha) ** 2)

    def kraus(self, dimH: int, dimK: int) -> list[np.ndarray]:
        d = min(dimH, dimK)
        if self.kind == "identity":
            return [np.eye(dimK, dimH)]
        if self.kind == "phase_shift":
            U = np.zeros((dimK, dimH), dtype=complex)
            U[np.arange(d), np.arange(d)] = np.exp(1j * np.arange(d) * self.param)
            return [U]
        if self.kind == "attenuation":
            B = bernoulli_weights(self.param, dimH)
            ops = []
            for k in range(dimH):
                A = np.zeros((dimK, dimH))
                out = np.arange(min(dimH - k, dimK))
                A[out, out + k] = B[out + k, out]
                if A.any():
                    ops.append(A)
            return ops
        # photon creation: g a^dag, amplitudes leaving K are dropped
        A = np.zeros((dimK, dimH))
        m = np.arange(min(dimH, dimK - 1))
        A[m + 1, m] = np.sqrt(self.param * (m + 1))
        return [A]


def reference_tensor(model: ProcessModel, dimH: int, dimK: int | None = None) -> ProcessTensor:
    """Exact process tensor of ``model`` truncated to the given dimensions."""
    dimK = dimH if dimK is None else dimK
    if dimH < 1 or dimK < 1:
        raise ValueError("dimensions must be positive")
    return ProcessTensor.from_kraus(model.kraus(dimH, dimK), dimH, dimK)


def phase_unitary(phi: float, dim: int) -> np.ndarray:
    return np.diag(np.exp(1j * np.arange(dim) * phi))


def detector_loss(E: ProcessTensor, loss: LossModel) -> ProcessTensor:
    """Compose a channel with beam-splitter loss on its physical output."""
    from .hilbert import loss_kraus

    if E.heralded:
        raise ValueError("compose loss with the physical tensor, not the extended one")
    ops = loss_kraus(loss, E.dimK)
    el = E.tensor()
    out = sum(np.einsum("aj,mnjk,bk->mnab", A.T, el, A.T) for A in ops)
    return ProcessTensor.from_elements(out)
