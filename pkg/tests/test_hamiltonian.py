import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mblprobe.basis import enumerate_basis
from mblprobe.hamiltonian import (DEFAULT_J2, DEFAULT_U, DisorderRealization, ModelSpec,
                                  build_hamiltonian, realization_for, sample_disorder)


def full_space_hamiltonian(spec, offsets):
    """Dense H on the full truncated Fock space from Kronecker products."""
    d = spec.n_max + 1
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    n_op = np.diag(np.arange(d, dtype=float))
    eye = np.eye(d)

    def site(op, l):
        out = np.array([[1.0]])
        for k in range(spec.n_sites):
            out = np.kron(out, op if k == l else eye)
        return out

    ops_a = [site(a, l) for l in range(spec.n_sites)]
    ops_n = [site(n_op, l) for l in range(spec.n_sites)]
    dim = d ** spec.n_sites
    h = np.zeros((dim, dim))
    for l in range(spec.n_sites):
        h += (spec.omega + offsets[l]) * ops_n[l]
        h += 0.5 * spec.u * ops_n[l] @ (ops_n[l] - np.eye(dim))
    for dist, js in ((1, spec.j1), (2, spec.j2)):
        for l, j in enumerate(js):
            hop = ops_a[l].T @ ops_a[l + dist]
            h += j * (hop + hop.T)
    return h


def project(h_full, basis, n_max):
    d = n_max + 1
    weights = d ** np.arange(basis.n_sites - 1, -1, -1)
    idx = basis.states @ weights
    return h_full[np.ix_(idx, idx)]


@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_matches_kronecker_oracle(n_sites, n_max, seed):
    gen = np.random.default_rng(seed)
    spec = ModelSpec(n_sites, gen.normal(1, 0.1, n_sites - 1), gen.normal(0.1, 0.02, max(n_sites - 2, 0)),
                     u=gen.uniform(-25, 0), omega=gen.uniform(-1, 1), n_max=n_max)
    n_total = int(gen.integers(0, n_sites * n_max + 1))
    basis = enumerate_basis(n_sites, n_total, n_max)
    offsets = gen.uniform(-3, 3, n_sites)
    h = build_hamiltonian(spec, DisorderRealization(3.0, offsets), basis).toarray()
    ref = project(full_space_hamiltonian(spec, offsets), basis, n_max)
    np.testing.assert_allclose(h, ref, atol=1e-12)


@pytest.mark.parametrize("n_sites", [4, 6, 8])
def test_hermitian_and_real(n_sites):
    spec = ModelSpec.uniform(n_sites)
    basis = enumerate_basis(n_sites, n_sites // 2, 3)
    h = build_hamiltonian(spec, sample_disorder(3.0, n_sites, 1), basis)
    assert np.isrealobj(h.data)
    assert abs(h - h.T).max() == 0


def test_defaults():
    spec = ModelSpec.uniform(12)
    assert spec.u == DEFAULT_U == -22.0
    np.testing.assert_allclose(spec.j2, 1.2 / 11.5)
    assert DEFAULT_J2 == pytest.approx(0.104347826)
    assert spec.j1.shape == (11,) and spec.j2.shape == (10,)


def test_omega_shifts_sector_energy_only():
    base = ModelSpec.uniform(4)
    basis = enumerate_basis(4, 2, 3)
    dis = sample_disorder(2.0, 4, 3)
    h0 = build_hamiltonian(base, dis, basis).toarray()
    h1 = build_hamiltonian(base.replace(omega=5.0), dis, basis).toarray()
    np.testing.assert_allclose(h1 - h0, 5.0 * 2 * np.eye(basis.dim), atol=1e-12)


def test_disorder_bounds_and_determinism():
    for h in (0.0, 1.0, 7.0):
        d = sample_disorder(h, 12, 42)
        assert np.all(np.abs(d.offsets) <= h)
        np.testing.assert_array_equal(d.offsets, sample_disorder(h, 12, 42).offsets)
    a = realization_for(2021, 3, 4, 2.5, 12)
    b = realization_for(2021, 3, 4, 2.5, 12)
    c = realization_for(2021, 4, 4, 2.5, 12)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    assert not np.array_equal(a.offsets, c.offsets)


def test_uniform_disorder_statistics():
    offsets = np.concatenate([sample_disorder(2.0, 1000, s).offsets for s in range(20)])
    # U[-2, 2]: mean 0, variance 4/3
    assert abs(offsets.mean()) < 4 * np.sqrt(4 / 3 / offsets.size)
    assert offsets.var() == pytest.approx(4 / 3, rel=0.05)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        sample_disorder(-1.0, 4, 0)
    with pytest.raises(ValueError):
        DisorderRealization(1.0, [0.0, 2.0])
    with pytest.raises(ValueError):
        ModelSpec(4, [1.0, 1.0], [0.1, 0.1])
    spec = ModelSpec.uniform(4)
    with pytest.raises(ValueError):
        build_hamiltonian(spec, sample_disorder(1.0, 5, 0), enumerate_basis(4, 2, 3))
