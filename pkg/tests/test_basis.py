import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mblprobe.basis import NotInSectorError, enumerate_basis, sector_dimension, state_index


def brute_force(n_sites, n_total, n_max):
    return [c for c in itertools.product(range(n_max + 1), repeat=n_sites) if sum(c) == n_total]


@pytest.mark.parametrize("n_sites,n_total,n_max,dim", [
    (12, 6, 3, 11440),
    (12, 6, 1, 924),
    (4, 2, 3, 10),
    (1, 0, 3, 1),
])
def test_known_dimensions(n_sites, n_total, n_max, dim):
    assert sector_dimension(n_sites, n_total, n_max) == dim
    assert enumerate_basis(n_sites, n_total, n_max).dim == dim


def test_hard_core_dimension_is_binomial():
    for n in range(1, 11):
        for k in range(n + 1):
            assert sector_dimension(n, k, 1) == comb(n, k)


sizes = st.integers(1, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(0, 3)).flatmap(
        lambda t: st.tuples(st.just(t[0]), st.integers(0, t[0] * t[1]), st.just(t[1]))))


@given(sizes)
def test_matches_brute_force_enumeration(args):
    n_sites, n_total, n_max = args
    basis = enumerate_basis(n_sites, n_total, n_max)
    expected = brute_force(n_sites, n_total, n_max)
    assert basis.dim == len(expected) == sector_dimension(n_sites, n_total, n_max)
    # itertools.product already yields lexicographic order with site 1 most significant
    assert [tuple(s) for s in basis.states] == expected


@given(sizes)
def test_rank_round_trip(args):
    basis = enumerate_basis(*args)
    for i, s in enumerate(basis.states):
        assert basis.index(s) == i
        assert state_index(basis, s) == i
    np.testing.assert_array_equal(basis.rank(basis.states), np.arange(basis.dim))


def test_lexicographic_order_example():
    basis = enumerate_basis(2, 1, 1)
    assert [tuple(s) for s in basis.states] == [(0, 1), (1, 0)]


def test_states_are_read_only():
    basis = enumerate_basis(4, 2, 3)
    with pytest.raises(ValueError):
        basis.states[0, 0] = 1


@pytest.mark.parametrize("config", [(1, 1, 1, 0), (4, 0, 0, 0), (0, 0, 0, -1)])
def test_foreign_configurations_rejected(config):
    basis = enumerate_basis(4, 2, 3)
    with pytest.raises(NotInSectorError):
        basis.index(config)


def test_wrong_length_is_a_parameter_error():
    with pytest.raises(ValueError):
        enumerate_basis(4, 2, 3).index((1, 0, 0))


def test_vectorized_rank_flags_outsiders():
    basis = enumerate_basis(4, 2, 3)
    ranks = basis.rank(np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 0, 0, 4]]))
    assert ranks[0] >= 0 and ranks[1] == -1 and ranks[2] == -1


@pytest.mark.parametrize("args", [(0, 0, 3), (3, 10, 3), (3, -1, 3), (3, 1, -1)])
def test_invalid_sector_parameters(args):
    with pytest.raises(ValueError):
        sector_dimension(*args)
