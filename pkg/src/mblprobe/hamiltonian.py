"""Disordered Bose-Hubbard chain with nearest and next-nearest hopping.

    H = sum_l J1_l (a+_l a_{l+1} + h.c.) + sum_l J2_l (a+_l a_{l+2} + h.c.)
        + sum_l [(omega + h_l) n_l + U/2 n_l (n_l - 1)]

restricted to one number sector.  Energies are in units of the mean J1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import rng
from .basis import SectorBasis
from .units import J1_MHZ, J2_MHZ

DEFAULT_J2 = J2_MHZ / J1_MHZ
DEFAULT_U = -22.0


@dataclass(frozen=True)
class ModelSpec:
    n_sites: int
    j1: np.ndarray
    j2: np.ndarray
    u: float = DEFAULT_U
    omega: float = 0.0
    n_max: int = 3

    def __post_init__(self):
        j1 = np.asarray(self.j1, dtype=float).reshape(-1)
        j2 = np.asarray(self.j2, dtype=float).reshape(-1)
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if j1.size != max(self.n_sites - 1, 0):
            raise ValueError(f"j1 needs {self.n_sites - 1} bonds, got {j1.size}")
        if j2.size != max(self.n_sites - 2, 0):
            raise ValueError(f"j2 needs {max(self.n_sites - 2, 0)} bonds, got {j2.size}")
        if not (np.isfinite(self.u) and np.isfinite(self.omega)):
            raise ValueError("u and omega must be finite")
        if not (np.isfinite(j1).all() and np.isfinite(j2).all()):
            raise ValueError("couplings must be finite")
        object.__setattr__(self, "j1", j1)
        object.__setattr__(self, "j2", j2)

    @classmethod
    def uniform(cls, n_sites: int, j1: float = 1.0, j2: float = DEFAULT_J2,
                u: float = DEFAULT_U, omega: float = 0.0, n_max: int = 3) -> "ModelSpec":
        return cls(
            n_sites,
            np.full(max(n_sites - 1, 0), j1),
            np.full(max(n_sites - 2, 0), j2),
            u=u, omega=omega, n_max=n_max,
        )

    def replace(self, **changes) -> "ModelSpec":
        fields = dict(n_sites=self.n_sites, j1=self.j1, j2=self.j2, u=self.u,
                      omega=self.omega, n_max=self.n_max)
        fields.update(changes)
        return ModelSpec(**fields)


@dataclass(frozen=True)
class DisorderRealization:
    h: float
    offsets: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if self.h < 0:
            raise ValueError("disorder strength must be >= 0")
        if np.any(np.abs(offsets) > self.h):
            raise ValueError("offsets must lie in [-h, h]")
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_sites(self) -> int:
        return self.offsets.size


def sample_disorder(h: float, n_sites: int, seed: int) -> DisorderRealization:
    """Draw h_l ~ U[-h, h] independently on each site."""
    if h < 0:
        raise ValueError(f"disorder strength must be >= 0, got {h}")
    gen = np.random.default_rng(seed)
    if h == 0:
        offsets = np.zeros(n_sites)
    else:
        offsets = gen.uniform(-h, h, size=n_sites)
    return DisorderRealization(float(h), offsets, seed)


def realization_for(master_seed: int, r: int, h_index: int, h: float,
                    n_sites: int) -> DisorderRealization:
    """The r-th realization at grid point ``h_index`` of a sweep."""
    return sample_disorder(h, n_sites, rng.derive_seed(master_seed, "disorder", r, h_index))


def _hopping_entries(basis: SectorBasis, couplings, distance: int):
    states = basis.states.astype(np.int64)
    rows, cols, vals = [], [], []
    for left, coupling in enumerate(couplings):
        if coupling == 0.0:
            continue
        right = left + distance
        # <c'| a+_left a_right |c>
        mask = (states[:, right] > 0) & (states[:, left] < basis.n_max)
        src = np.nonzero(mask)[0]
        if src.size == 0:
            continue
        new = states[src].copy()
        amp = np.sqrt((new[:, left] + 1.0) * new[:, right])
        new[:, left] += 1
        new[:, right] -= 1
        dst = basis.rank(new)
        if np.any(dst < 0):
            raise AssertionError("hopping left the number sector")
        rows.append(dst)
        cols.append(src)
        vals.append(coupling * amp)
    return rows, cols, vals


class SectorModel:
    """Hamiltonian factory for one (spec, basis) pair.

    The hopping block is assembled once; :meth:`hamiltonian` only rewrites
    the diagonal, which is what changes between disorder realizations.
    """

    def __init__(self, spec: ModelSpec, basis: SectorBasis):
        if spec.n_sites != basis.n_sites:
            raise ValueError(f"spec has {spec.n_sites} sites, basis has {basis.n_sites}")
        if spec.n_max != basis.n_max:
            raise ValueError(f"spec n_max={spec.n_max} but basis n_max={basis.n_max}")
        self.spec = spec
        self.basis = basis
        self.occupations = basis.states.astype(float)
        occ = self.occupations
        self.interaction = 0.5 * spec.u * (occ * (occ - 1.0)).sum(axis=1)

        rows, cols, vals = [], [], []
        for couplings, d in ((spec.j1, 1), (spec.j2, 2)):
            r, c, v = _hopping_entries(basis, couplings, d)
            rows += r + c
            cols += c + r
            vals += v + v
        dim = basis.dim
        # explicit diagonal so every realization shares one sparsity pattern
        rows.append(np.arange(dim))
        cols.append(np.arange(dim))
        vals.append(np.ones(dim))
        h = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        ).tocsr()
        h.sum_duplicates()
        h.sort_indices()
        self._template = h
        self._diag_pos = self._locate_diagonal(h)

    @staticmethod
    def _locate_diagonal(h: sp.csr_matrix) -> np.ndarray:
        pos = np.empty(h.shape[0], dtype=np.int64)
        for i in range(h.shape[0]):
            lo, hi = h.indptr[i], h.indptr[i + 1]
            pos[i] = lo + np.searchsorted(h.indices[lo:hi], i)
        return pos

    def diagonal(self, offsets) -> np.ndarray:
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (self.spec.n_sites,):
            raise ValueError(f"need {self.spec.n_sites} offsets, got shape {offsets.shape}")
        return self.occupations @ (self.spec.omega + offsets) + self.interaction

    def hamiltonian(self, offsets) -> sp.csr_matrix:
        h = self._template.copy()
        h.data[self._diag_pos] = self.diagonal(offsets)
        return h


def build_hamiltonian(spec: ModelSpec, dis: DisorderRealization,
                      basis: SectorBasis) -> sp.csr_matrix:
    """Sparse real-symmetric matrix of H on ``basis``."""
    if dis.n_sites != spec.n_sites:
        raise ValueError("realization and spec disagree on the number of sites")
    return SectorModel(spec, basis).hamiltonian(dis.offsets)
