import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mblprobe.basis import enumerate_basis
from mblprobe.observables import (BlockNumberDistribution, ConfigDistribution, EstimationError,
                                  ShotTable, autocorrelation, block_number_distribution,
                                  hamming_distance, number_entropy, site_populations)
from mblprobe.propagator import fock_state


def random_state(basis, seed):
    gen = np.random.default_rng(seed)
    psi = gen.normal(size=basis.dim) + 1j * gen.normal(size=basis.dim)
    return psi / np.linalg.norm(psi)


def test_trivial_values_on_initial_fock_state():
    basis = enumerate_basis(6, 3, 3)
    s0 = np.array([1, 0, 1, 1, 0, 0])
    psi = fock_state(basis, s0)
    assert autocorrelation(site_populations(psi, basis), s0) == 1.0
    assert hamming_distance(psi, basis, s0) == 0.0
    for m in range(1, 4):
        assert number_entropy(block_number_distribution(psi, basis, m)) == 0.0


def test_uniform_half_filling_hamming_is_one_half():
    n = 8
    configs = np.array([c for c in itertools.product((0, 1), repeat=n) if sum(c) == n // 2])
    uniform = ConfigDistribution(configs, np.full(len(configs), 1.0 / len(configs)))
    for s0 in configs[:5]:
        assert hamming_distance(uniform, None, s0) == pytest.approx(0.5, abs=1e-14)
    # thermal populations give C = 0
    assert autocorrelation(site_populations(uniform), configs[0]) == pytest.approx(0, abs=1e-14)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_bounds(seed, m):
    basis = enumerate_basis(6, 3, 3)
    psi = random_state(basis, seed)
    s0 = np.array([0, 1, 1, 0, 1, 0])
    c = autocorrelation(site_populations(psi, basis), s0)
    d = hamming_distance(psi, basis, s0)
    dist = block_number_distribution(psi, basis, m)
    s = number_entropy(dist)
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert 0 <= d <= 1
    assert dist.p.sum() == pytest.approx(1.0)
    assert 0 <= s <= np.log(min(3, 3 * m) + 1) + 1e-12


def test_entropy_of_known_distribution():
    assert number_entropy(BlockNumberDistribution(1, np.array([0.5, 0.5]))) == pytest.approx(np.log(2))
    assert number_entropy(BlockNumberDistribution(1, np.array([1.0, 0.0, 0.0]))) == 0.0


def test_autocorrelation_formula():
    # explicit (1/N) sum (2n_t - 1)(2n_0 - 1)
    pop_t, pop_0 = np.array([0.2, 0.9, 0.5]), np.array([0, 1, 1])
    expected = ((-0.6) * (-1) + 0.8 * 1 + 0.0 * 1) / 3
    assert autocorrelation(pop_t, pop_0) == pytest.approx(expected)
    with pytest.raises(ValueError):
        autocorrelation([0.1, 0.2], [1, 0, 0])


def test_shots_and_amplitudes_agree():
    basis = enumerate_basis(4, 2, 3)
    psi = random_state(basis, 1)
    probs = np.abs(psi) ** 2
    shots = ShotTable(basis.states, probs * 1000)
    s0 = np.array([1, 1, 0, 0])
    np.testing.assert_allclose(site_populations(shots), site_populations(psi, basis))
    assert hamming_distance(shots, None, s0) == pytest.approx(hamming_distance(psi, basis, s0))
    np.testing.assert_allclose(block_number_distribution(shots, None, 2).p,
                               block_number_distribution(psi, basis, 2).p[:len(
                                   block_number_distribution(shots, None, 2).p)])


def test_empty_shot_table_signalled():
    with pytest.raises(EstimationError):
        site_populations(ShotTable(np.zeros((0, 4))))


def test_invalid_block_size():
    basis = enumerate_basis(4, 2, 3)
    with pytest.raises(ValueError):
        block_number_distribution(fock_state(basis, [1, 1, 0, 0]), basis, 5)
