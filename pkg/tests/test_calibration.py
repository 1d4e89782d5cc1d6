import numpy as np
import pytest

from mblprobe import units
from mblprobe.basis import enumerate_basis
from mblprobe.calibration import (StaircasePlan, fit_offsets, gauge_fix, iterate_calibration,
                                  random_offsets_mhz, simulate_staircase, trace_cost)
from mblprobe.hamiltonian import DisorderRealization, ModelSpec, build_hamiltonian
from mblprobe.propagator import evolve_unitary, fock_state


def test_step_in_j1_units():
    plan = StaircasePlan.from_mhz(4)
    assert plan.step == pytest.approx(5.0 / 11.5)
    assert plan.times.size == 40 and plan.times[-1] == 10.0


def test_zero_offsets_mirror_symmetry():
    n = 5
    spec = ModelSpec.uniform(n)
    traces = simulate_staircase(spec, np.zeros(n), StaircasePlan.from_mhz(n))
    # a sign flip of the staircase equals a site reversal (up to a global shift)
    plus, minus = traces[:, :, 0, :], traces[:, :, 1, :]
    np.testing.assert_allclose(minus, plus[::-1, :, ::-1], atol=1e-12)


def test_two_site_rabi_oscillation():
    spec = ModelSpec.uniform(2)
    plan = StaircasePlan(2, 1e-300, np.linspace(0, 3, 13))
    traces = simulate_staircase(spec, np.zeros(2), plan)
    np.testing.assert_allclose(traces[1, :, 0, 0], np.sin(plan.times) ** 2, atol=1e-12)


def test_matches_generic_propagator():
    n = 6
    gen = np.random.default_rng(0)
    spec = ModelSpec.uniform(n)
    offsets = gen.uniform(-1, 1, n)
    plan = StaircasePlan.from_mhz(n, times=np.linspace(0, 10, 7))
    traces = simulate_staircase(spec, offsets, plan)
    basis = enumerate_basis(n, 1, spec.n_max)
    for c, sign in enumerate((1, -1)):
        onsite = plan.detunings(sign) + offsets
        h = build_hamiltonian(spec, DisorderRealization(float(np.abs(onsite).max()), onsite),
                              basis)
        for e in range(n):
            config = np.eye(n, dtype=int)[e]
            states = evolve_unitary(h, fock_state(basis, config), plan.times,
                                    method="dense").states
            pops = np.abs(states) ** 2 @ basis.states
            np.testing.assert_allclose(pops.T, traces[:, :, c, e], atol=1e-10)


def test_global_shift_leaves_traces_unchanged():
    spec = ModelSpec.uniform(4)
    plan = StaircasePlan.from_mhz(4)
    x = np.array([0.1, -0.3, 0.2, 0.0])
    np.testing.assert_allclose(simulate_staircase(spec, x, plan),
                               simulate_staircase(spec, x + 0.7, plan), atol=1e-12)


def test_zero_offsets_start_is_optimal():
    spec = ModelSpec.uniform(4)
    plan = StaircasePlan.from_mhz(4)
    obs = simulate_staircase(spec, np.zeros(4), plan)
    est = fit_offsets(obs, spec, plan)
    assert est.cost == 0.0
    np.testing.assert_array_equal(est.offsets, 0.0)


def test_cost_at_truth_and_nonnegative():
    spec = ModelSpec.uniform(5)
    plan = StaircasePlan.from_mhz(5)
    truth = units.mhz_to_j1(random_offsets_mhz(5, 15.4, np.random.default_rng(1)))
    obs = simulate_staircase(spec, truth, plan)
    assert trace_cost(truth, obs, spec, plan) <= 1e-12
    for shift in np.random.default_rng(2).normal(size=(5, 5)):
        assert trace_cost(truth + shift, obs, spec, plan) >= 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_known_truth_recovery(seed):
    n = 6
    spec = ModelSpec.uniform(n)
    plan = StaircasePlan.from_mhz(n)
    truth = random_offsets_mhz(n, 15.4, np.random.default_rng(seed))
    assert np.abs(truth).max() == pytest.approx(15.4)
    obs = simulate_staircase(spec, units.mhz_to_j1(truth), plan)
    est = fit_offsets(obs, spec, plan)
    assert np.abs(est.offsets_mhz - gauge_fix(truth)).max() < 0.5
    assert est.offsets.mean() == pytest.approx(0, abs=1e-12)


def test_error_grows_with_trace_noise():
    n = 4
    spec = ModelSpec.uniform(n)
    plan = StaircasePlan.from_mhz(n)
    truth = random_offsets_mhz(n, 8.0, np.random.default_rng(3))
    clean = simulate_staircase(spec, units.mhz_to_j1(truth), plan)
    errors = []
    for sigma in (0.005, 0.02):
        gen = np.random.default_rng(4)
        errs = []
        for _ in range(3):
            obs = clean + gen.normal(0, sigma, clean.shape)
            est = fit_offsets(obs, spec, plan, start=units.mhz_to_j1(truth))
            errs.append(np.sqrt(np.mean((est.offsets_mhz - gauge_fix(truth)) ** 2)))
        errors.append(np.mean(errs))
    ratio = errors[1] / errors[0]
    # error is linear in sigma: a 4x noise increase gives about 4x the error
    assert 2.0 < ratio < 8.0


def test_iterated_rounds_shrink_residual():
    n = 6
    spec = ModelSpec.uniform(n)
    plan = StaircasePlan.from_mhz(n)
    gen = np.random.default_rng(5)
    truth = random_offsets_mhz(n, 15.4, gen)
    history = iterate_calibration(spec, plan, truth, 3, gen)
    maxima = [np.abs(r.residual_before_mhz).max() for r in history]
    maxima.append(np.abs(history[-1].residual_after_mhz).max())
    assert all(b < a for a, b in zip(maxima, maxima[1:]))
    assert maxima[1] < 4.9
