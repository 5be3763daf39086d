from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csqpt.hilbert import coherent_dm, projector
from csqpt.metrics import WorstCaseConfig, worst_case_fidelity
from csqpt.mle import (
    IterationConfig,
    LikelihoodError,
    PovmCache,
    QuadratureHistogram,
    bin,
    build_R,
    dilute,
    initial_tensor,
    iterate_once,
    log_likelihood,
    reconstruct,
)
from csqpt.process import (
    ProcessModel,
    ProcessTensor,
    apply,
    mask_matrix,
    reference_tensor,
    success_probability,
    trace_defect,
    with_fail_slot,
)
from csqpt.simulator import (
    HomodyneDataset,
    ProbeSpec,
    exact_bin_weights,
    marginal_pdf,
    probe_grid,
    simulate_dataset,
)

COARSE = {"dtheta": 2 * np.pi / 16, "dx": 12 / 48}


def exact_hist(model, dH, alpha_max=0.9375, count=4, coarse=True):
    """Expected counts generated by the model truncated to the reconstruction cutoff.

    Truncating the generator as well keeps the estimation problem exactly well specified;
    for heralded models g_m is taken from the truncated channel.
    """
    probes = probe_grid(alpha_max, count)
    hist = exact_bin_weights(model, probes, 1e5, sim_dim=dH, **(COARSE if coarse else {}))
    if not model.deterministic:
        T = reference_tensor(model, dH, dH + 1)
        g = [success_probability(T, coherent_dm(p.alpha, dH)) / np.trace(coherent_dm(p.alpha, dH)).real
             for p in probes]
        hist = replace(hist, g=np.array(g))
    return hist


def random_psd_tensor(rng, dH, dK):
    A = rng.normal(size=(dH * dK,) * 2) + 1j * rng.normal(size=(dH * dK,) * 2)
    return ProcessTensor(dH, dK, A @ A.conj().T)


# -- binning -------------------------------------------------------------------------

def test_single_record_bin():
    ds = HomodyneDataset([ProbeSpec(0.0)], [np.array([[0.1, 0.2]])], [1.0])
    h = bin(ds, dtheta=0.2, dx=0.4)
    assert len(h.bins[0]) == 1 and h.counts[0][0] == 1
    th, x = h.centers(0)
    assert th[0] == pytest.approx(0.1) and x[0] == pytest.approx(0.2)


@given(st.integers(1, 400), st.integers(0, 2**31), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
@settings(max_examples=30)
def test_binning_preserves_counts(n, seed, dtheta, dx):
    rng = np.random.default_rng(seed)
    rec = np.column_stack([rng.uniform(0, 2 * np.pi, n), rng.normal(0, 1, n)])
    h = bin(HomodyneDataset([ProbeSpec(0.0)], [rec], [1.0]), dtheta=dtheta, dx=dx)
    assert h.counts[0].sum() == n
    assert np.all(h.counts[0] > 0)


def test_binning_rejects_bad_widths():
    ds = HomodyneDataset([ProbeSpec(0.0)], [np.zeros((1, 2))], [1.0])
    with pytest.raises(ValueError):
        bin(ds, dtheta=0.0)


def test_one_record_per_bin_matches_unbinned_likelihood():
    model = ProcessModel.attenuation(0.8)
    ds = simulate_dataset(model, probe_grid(0.9, 2), 50, seed=4)
    E = reference_tensor(model, 6)
    h = bin(ds, dtheta=2 * np.pi / 2**40, dx=1e-13)
    assert all(len(b) == 50 for b in h.bins)
    binned = log_likelihood(E, h, PovmCache(h, 6))
    direct = 0.0
    for probe, rec in zip(ds.probes, ds.records):
        out = apply(E, coherent_dm(probe.alpha, 6))
        direct += sum(np.log(np.trace(out @ projector(t, x, 6)).real) for t, x in rec)
    assert binned == pytest.approx(direct, abs=1e-9)


# -- likelihood ------------------------------------------------------------------------

def test_loglik_cross_entropy_identity():
    hist = exact_bin_weights(ProcessModel.identity(), probe_grid(0.9375, 4), 1e5)
    E = reference_tensor(ProcessModel.identity(), 10)
    L = log_likelihood(E, hist, PovmCache(hist, 10))
    # independent evaluation through the simulator's density at every bin centre
    ref = 0.0
    for m, alpha in enumerate(hist.alphas):
        th, x = hist.centers(m)
        p = np.array([marginal_pdf(E, ProbeSpec(alpha), t, np.array([xi]))[0]
                      for t, xi in zip(th, x)])
        ref += np.dot(hist.counts[m], np.log(p))
    assert L == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_loglik_linear_in_counts():
    hist = exact_hist(ProcessModel.attenuation(0.9), 4)
    E = initial_tensor(4, 4)
    cache = PovmCache(hist, 4)
    assert log_likelihood(E, hist.scaled(2.0), cache) == pytest.approx(2 * log_likelihood(E, hist, cache))


def test_loglik_probe_order_invariant():
    hist = exact_hist(ProcessModel.photon_creation(0.1), 3)
    E = with_fail_slot(reference_tensor(ProcessModel.photon_creation(0.1), 3, 4))
    L = log_likelihood(E, hist, PovmCache(hist, 4, heralded=True))
    rev = hist.reordered([3, 1, 0, 2])
    assert log_likelihood(E, rev, PovmCache(rev, 4, heralded=True)) == pytest.approx(L, rel=1e-13)


def test_loglik_reports_impossible_bin():
    hist = exact_hist(ProcessModel.identity(), 3)
    E = ProcessTensor(3, 3, np.zeros((9, 9)))
    with pytest.raises(LikelihoodError) as info:
        log_likelihood(E, hist, PovmCache(hist, 3))
    assert info.value.probe == 0


def test_cache_must_cover_histogram():
    h1 = exact_hist(ProcessModel.identity(), 3)
    h2 = exact_hist(ProcessModel.identity(), 3, coarse=False)
    with pytest.raises(ValueError):
        log_likelihood(initial_tensor(3, 3), h2, PovmCache(h1, 3))


# -- update operator ---------------------------------------------------------------------

def test_R_single_bin_entrywise():
    hist = QuadratureHistogram(0.5, 0.5, -6.0, [0.4], [1.0], [[[3, 12]]], [[7.0]])
    E = reference_tensor(ProcessModel.attenuation(0.9), 3)
    R = build_R(E, hist, PovmCache(hist, 3), config=IterationConfig(phase_invariant=False))
    th, x = hist.centers(0)
    P = projector(th[0], x[0], 3)
    rho = coherent_dm(0.4, 3)
    p = np.trace(apply(E, rho) @ P).real
    np.testing.assert_allclose(R, np.kron(rho.T, P) / p, atol=1e-13)


def test_masked_R_obeys_selection_rule():
    hist = exact_hist(ProcessModel.attenuation(0.9), 4)
    R = build_R(initial_tensor(4, 4), hist, PovmCache(hist, 4))
    assert not np.any(R[~mask_matrix(4, 4)])


@pytest.mark.parametrize("model", [ProcessModel.identity(), ProcessModel.attenuation(0.9),
                                   ProcessModel.photon_creation(0.1)], ids=lambda m: m.kind)
def test_truth_is_stationary_on_exact_data(model):
    dH = 5
    hist = exact_hist(model, dH, coarse=False)
    heralded = not model.deterministic
    T = reference_tensor(model, dH, dH + 1)
    if heralded:
        T = with_fail_slot(T)
    R = build_R(T, hist, PovmCache(hist, dH + 1, heralded=heralded), hist.g)
    E_next, _ = iterate_once(T, R)
    assert np.max(np.abs(E_next.matrix - T.matrix)) <= 1e-6


def test_dilute_examples():
    R = 3 * np.eye(4)
    np.testing.assert_array_equal(dilute(R, 1.0), R)
    np.testing.assert_array_equal(dilute(R, 0.0), np.eye(4))
    np.testing.assert_allclose(dilute(R, 0.5), 2 * np.eye(4))


@given(st.integers(0, 2**31))
@settings(max_examples=20)
def test_identity_R_is_fixed_point(seed):
    rng = np.random.default_rng(seed)
    # a random trace-preserving tensor: normalize a PSD operator by Tr_K on the left and right
    E = random_psd_tensor(rng, 3, 4)
    from csqpt.hilbert import partial_trace_K, psd_pinv, psd_sqrt

    s = psd_pinv(psd_sqrt(partial_trace_K(E.matrix, 3, 4)))
    E = ProcessTensor(3, 4, np.kron(s, np.eye(4)) @ E.matrix @ np.kron(s, np.eye(4)))
    E_next, _ = iterate_once(E, np.eye(12))
    np.testing.assert_allclose(E_next.matrix, E.matrix, atol=1e-12)


def test_trace_defect_after_random_iterations():
    rng = np.random.default_rng(7)
    E = random_psd_tensor(rng, 3, 4)
    for _ in range(100):
        E, _ = iterate_once(E, random_psd_tensor(rng, 3, 4).matrix)
        assert trace_defect(E) <= 1e-8
        assert E.min_eigenvalue() >= -1e-8


def test_first_step_increases_likelihood():
    hist = exact_hist(ProcessModel.identity(), 4)
    cache = PovmCache(hist, 4)
    E0 = initial_tensor(4, 4)
    E1, _ = iterate_once(E0, build_R(E0, hist, cache))
    assert log_likelihood(E1, hist, cache) > log_likelihood(E0, hist, cache)


# -- full reconstructions ----------------------------------------------------------------------

def test_reconstruct_exact_data_high_fidelity():
    model = ProcessModel.attenuation(0.9)
    rep = reconstruct(exact_hist(model, 5), 4, IterationConfig(max_iters=3000, ll_rel_tol=1e-12))
    F, _ = worst_case_fidelity(reference_tensor(model, 5), rep.E_est,
                               WorstCaseConfig(n_input_max=2, walk_steps=3000, restarts=2))
    assert F >= 0.999


def test_reconstruct_masks_and_tracks_constraints():
    rep = reconstruct(exact_hist(ProcessModel.attenuation(0.9), 4), 3, IterationConfig(max_iters=60))
    assert not np.any(rep.E_est.matrix[~mask_matrix(4, 4)])
    assert len(rep.defect_history) == rep.iterations
    assert max(rep.defect_history) <= 1e-8
    assert min(rep.min_eig_history) >= -1e-8


def test_reconstruct_flags_non_convergence():
    rep = reconstruct(exact_hist(ProcessModel.identity(), 4), 3, IterationConfig(max_iters=3))
    assert not rep.converged and rep.iterations == 3 and rep.status == "max_iters"
    assert len(rep.loglik_trace) == 4


def test_small_dilution_is_monotone():
    ds = simulate_dataset(ProcessModel.photon_creation(0.1), probe_grid(0.9375, 4), 2000, seed=2)
    rep = reconstruct(ds, 3, IterationConfig(mu=0.05, max_iters=100, ll_rel_tol=1e-300),
                      bins=COARSE)
    L = np.array(rep.loglik_trace)
    assert np.all(np.diff(L) >= -1e-10 * np.abs(L[1:]))


def test_adaptive_schedule_over_relaxes():
    hist = exact_hist(ProcessModel.attenuation(0.9), 4)
    fixed = reconstruct(hist, 3, IterationConfig(max_iters=4000, ll_rel_tol=1e-13))
    adaptive = reconstruct(hist, 3, IterationConfig(max_iters=4000, ll_rel_tol=1e-13,
                                                    mu_schedule="adaptive", mu=0.5))
    assert max(adaptive.mu_history) > 1.0
    # same iteration budget: the over-relaxed run gets at least as close to the optimum
    assert adaptive.loglik_trace[-1] >= fixed.loglik_trace[-1] - 1e-9 * abs(fixed.loglik_trace[-1])
    L = np.array(adaptive.loglik_trace)
    # rejected overshoots never enter the trace
    assert np.all(np.diff(L) >= -1e-10 * np.abs(L[1:]))


def test_g_rescale_equivariance():
    model = ProcessModel.photon_creation(0.1)
    hist = exact_hist(model, 2, alpha_max=0.6, count=3)
    ests = [reconstruct(hist, 1, IterationConfig(max_iters=20000, ll_rel_tol=1e-15, g_rescale=c),
                        dimK_phys=3).E_est.matrix for c in (1.0, 2.0)]
    assert np.max(np.abs(ests[0] - ests[1])) <= 1e-6


def test_heralded_reconstruction_recovers_success_probability():
    model = ProcessModel.photon_creation(0.1)
    hist = exact_hist(model, 3)
    rep = reconstruct(hist, 2, IterationConfig(max_iters=2000), dimK_phys=4)
    assert rep.E_raw.heralded and not rep.E_est.heralded
    assert trace_defect(rep.E_raw) <= 1e-8
    for alpha, g in zip(hist.alphas, hist.g):
        rho = coherent_dm(alpha, 3)
        assert success_probability(rep.E_est, rho) / np.trace(rho).real == pytest.approx(g, rel=1e-3)


def test_reconstruct_crop():
    rep = reconstruct(exact_hist(ProcessModel.identity(), 5), 4, IterationConfig(max_iters=5),
                      crop_to=2)
    assert (rep.E_est.dimH, rep.E_est.dimK) == (3, 3)


def test_rescaled_g_must_stay_below_one():
    hist = exact_hist(ProcessModel.photon_creation(0.1), 3)
    with pytest.raises(ValueError):
        reconstruct(hist, 2, IterationConfig(g_rescale=10.0), dimK_phys=4)


def test_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(mu=0.0)
    with pytest.raises(ValueError):
        IterationConfig(ll_rel_tol=0.0)
    with pytest.raises(ValueError):
        IterationConfig(mu_schedule="chaotic")
    with pytest.raises(ValueError):
        IterationConfig(eta=1.5)
