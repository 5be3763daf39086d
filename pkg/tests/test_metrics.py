import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csqpt.hilbert import coherent_dm
from csqpt.metrics import (
    WorstCaseConfig,
    diag_matrix,
    diag_table,
    suggest_cutoff,
    uhlmann_fidelity,
    worst_case_fidelity,
    worst_case_search,
)
from csqpt.process import ProcessModel, ProcessTensor, apply, reference_tensor, with_fail_slot

FAST = WorstCaseConfig(walk_steps=2000, restarts=2)


def random_pure(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_state(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


# -- Uhlmann fidelity -------------------------------------------------------------------

@given(st.integers(1, 6), st.integers(0, 2**31))
@settings(max_examples=30)
def test_fidelity_with_itself(d, seed):
    rho = random_state(np.random.default_rng(seed), d)
    assert uhlmann_fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)


def test_fidelity_orthogonal():
    assert uhlmann_fidelity(np.diag([1.0, 0]), np.diag([0, 1.0])) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(2, 6), st.integers(0, 2**31))
@settings(max_examples=30)
def test_fidelity_pure_states(d, seed):
    rng = np.random.default_rng(seed)
    psi, phi = random_pure(rng, d), random_pure(rng, d)
    F = uhlmann_fidelity(np.outer(psi, psi.conj()), np.outer(phi, phi.conj()))
    assert F == pytest.approx(abs(np.vdot(psi, phi)), abs=1e-7)


@given(st.integers(2, 6), st.integers(0, 2**31))
@settings(max_examples=30)
def test_fidelity_symmetric_and_bounded(d, seed):
    rng = np.random.default_rng(seed)
    r, s = random_state(rng, d), random_state(rng, d)
    F = uhlmann_fidelity(r, s)
    assert F == pytest.approx(uhlmann_fidelity(s, r), abs=1e-8)
    assert -1e-12 <= F <= 1 + 1e-9


def test_fidelity_normalizes_inputs():
    rho = random_state(np.random.default_rng(1), 3)
    sig = random_state(np.random.default_rng(2), 3)
    assert uhlmann_fidelity(0.2 * rho, 3 * sig) == pytest.approx(uhlmann_fidelity(rho, sig))


def test_fidelity_rejects_zero_trace():
    with pytest.raises(ValueError):
        uhlmann_fidelity(np.zeros((2, 2)), np.eye(2))


# -- worst-case search -------------------------------------------------------------------

@pytest.mark.parametrize("model", [ProcessModel.identity(), ProcessModel.attenuation(0.9),
                                   ProcessModel.photon_creation(0.1)], ids=lambda m: m.kind)
def test_worst_case_self(model):
    E = reference_tensor(model, 5)
    F, rho = worst_case_fidelity(E, E, FAST)
    assert F == pytest.approx(1.0, abs=1e-9)
    assert np.trace(rho).real == pytest.approx(1.0)


def test_worst_case_phase_flip():
    # the output fidelity of rho and Z rho Z vanishes for |+>, so the minimum is |cos(pi/2)| = 0
    I = reference_tensor(ProcessModel.identity(), 4)
    P = reference_tensor(ProcessModel.phase_shift(np.pi), 4)
    res = worst_case_search(I, P, WorstCaseConfig(n_input_max=1, walk_steps=4000, restarts=3))
    assert res.fidelity <= 0.02
    assert abs(res.rho[0, 1]) == pytest.approx(0.5, abs=0.02)


def test_worst_case_bounded_by_tested_inputs():
    T = reference_tensor(ProcessModel.attenuation(0.9), 6)
    E = reference_tensor(ProcessModel.attenuation(0.8), 6)
    res = worst_case_search(T, E, WorstCaseConfig(walk_steps=3000, restarts=2))
    d = 5
    inputs = [np.diag(np.eye(6)[n]) for n in range(d)]
    inputs += [np.pad(coherent_dm(a, d), ((0, 1), (0, 1))) for a in (0.3, 0.8 + 0.4j, 1.2)]
    for rho in inputs:
        assert res.fidelity <= uhlmann_fidelity(apply(T, rho), apply(E, rho)) + 1e-12


def test_accepted_moves_strictly_decrease():
    T = reference_tensor(ProcessModel.attenuation(0.9), 5)
    E = reference_tensor(ProcessModel.attenuation(0.7), 5)
    res = worst_case_search(T, E, WorstCaseConfig(walk_steps=1500, restarts=3))
    # the random restarts move; the extra number-state walk may already sit at a minimum
    assert all(len(hist) >= 2 for hist in res.accepted[:3])
    for hist in res.accepted:
        assert np.all(np.diff(hist) < 0)
    assert res.fidelity == min(res.restart_minima)


def test_restart_stability_across_seeds():
    T = reference_tensor(ProcessModel.photon_creation(0.1), 7)
    E = reference_tensor(ProcessModel.photon_creation(0.1), 7).matrix.copy()
    rng = np.random.default_rng(0)
    A = 0.05 * (rng.normal(size=E.shape) + 1j * rng.normal(size=E.shape))
    E = ProcessTensor(7, 7, E + A @ A.conj().T)
    minima = [worst_case_fidelity(T, E, WorstCaseConfig(walk_steps=4000, restarts=2, seed=s))[0]
              for s in range(5)]
    assert max(minima) - min(minima) <= 0.01


def test_worst_case_strips_heralding():
    E = reference_tensor(ProcessModel.photon_creation(0.1), 4)
    assert worst_case_fidelity(with_fail_slot(E), E, FAST)[0] == pytest.approx(1.0, abs=1e-9)


def test_worst_case_dimension_mismatch():
    with pytest.raises(ValueError):
        worst_case_fidelity(reference_tensor(ProcessModel.identity(), 3),
                            reference_tensor(ProcessModel.identity(), 4), FAST)


def test_worst_case_config_validation():
    with pytest.raises(ValueError):
        WorstCaseConfig(walk_steps=0)
    with pytest.raises(ValueError):
        WorstCaseConfig(step_sigma=0.0)


# -- diagonal tables -----------------------------------------------------------------------

def test_diag_identity():
    np.testing.assert_allclose(diag_matrix(reference_tensor(ProcessModel.identity(), 5)),
                               np.eye(5), atol=1e-14)


def test_diag_attenuation_row():
    tab = diag_table(reference_tensor(ProcessModel.attenuation(0.9), 4))
    row = tab[tab[:, 0] == 2]
    np.testing.assert_allclose(row[:, 2], [0.01, 0.18, 0.81, 0.0], atol=1e-12)
    np.testing.assert_array_equal(row[:, 1], [0, 1, 2, 3])


def test_diag_photon_creation_scaled():
    d = diag_matrix(reference_tensor(ProcessModel.photon_creation(0.1), 6), scale=0.1)
    expected = np.zeros((6, 6))
    for m in range(5):
        expected[m, m + 1] = m + 1
    np.testing.assert_allclose(d, expected, atol=1e-12)


def test_diag_rejects_complex_diagonal():
    M = np.eye(4, dtype=complex)
    M[1, 1] = 1 + 1e-3j
    with pytest.raises(ValueError):
        diag_table(ProcessTensor(2, 2, M))


# -- cutoff guideline -------------------------------------------------------------------------

def test_guideline_reference_case():
    n, ov = suggest_cutoff(0.6, 4.8e5)
    assert n == 6
    assert float(f"{ov:.2g}") == 2.1e-6


def test_guideline_vacuum():
    assert suggest_cutoff(0.0, 4.8e5) == (1, 0.0)


@given(st.floats(0.0, 3.0), st.floats(1.0, 1e9), st.floats(1.0, 100.0))
def test_guideline_monotone_in_sample_size(alpha, n_total, factor):
    assert suggest_cutoff(alpha, n_total * factor)[0] >= suggest_cutoff(alpha, n_total)[0]


def test_guideline_rejects_empty_data():
    with pytest.raises(ValueError):
        suggest_cutoff(0.5, 0.5)
