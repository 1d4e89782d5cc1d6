"""Number-conserving bosonic Fock basis with a per-site occupation cap.

States are ordered lexicographically with site 1 most significant, so
``(0, 1) < (1, 0)``.  Ranking uses a table of restricted-composition counts,
which gives an O(N) lookup without any hashing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class NotInSectorError(KeyError):
    """Raised when a configuration does not belong to the basis sector."""


def _composition_counts(n_sites: int, n_total: int, n_max: int) -> np.ndarray:
    """counts[k, r] = number of ways to put r bosons on k sites, each <= n_max."""
    counts = np.zeros((n_sites + 1, n_total + 1), dtype=np.int64)
    counts[0, 0] = 1
    for k in range(1, n_sites + 1):
        for r in range(n_total + 1):
            lo = max(0, r - n_max)
            counts[k, r] = counts[k - 1, lo : r + 1].sum()
    return counts


def sector_dimension(n_sites: int, n_total: int, n_max: int) -> int:
    """Coefficient of x**n_total in (1 + x + ... + x**n_max)**n_sites."""
    _check_bounds(n_sites, n_total, n_max)
    return int(_composition_counts(n_sites, n_total, n_max)[n_sites, n_total])


def _check_bounds(n_sites: int, n_total: int, n_max: int) -> None:
    if n_sites < 1:
        raise ValueError(f"need at least one site, got N={n_sites}")
    if n_max < 0:
        raise ValueError(f"per-site cap must be >= 0, got n_max={n_max}")
    if not 0 <= n_total <= n_sites * n_max:
        raise ValueError(
            f"n_total={n_total} outside [0, N*n_max] = [0, {n_sites * n_max}]"
        )


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """All occupation vectors of ``n_sites`` sites holding ``n_total`` bosons.

    ``states`` is an ``(dim, N)`` integer array in lexicographic order; it is
    marked read-only so the basis can be shared between workers.
    """

    n_sites: int
    n_total: int
    n_max: int
    states: np.ndarray = field(repr=False)
    _counts: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return self.dim

    @cached_property
    def _weights(self) -> np.ndarray:
        # weights[pos, r, v]: number of sector states that precede a prefix
        # ending with value v at ``pos`` when r bosons remain before ``pos``.
        n, nt, nm = self.n_sites, self.n_total, self.n_max
        w = np.zeros((n, nt + 1, nm + 2), dtype=np.int64)
        for pos in range(n):
            rest = n - pos - 1
            for r in range(nt + 1):
                acc = 0
                for v in range(nm + 1):
                    w[pos, r, v] = acc
                    if v <= r:
                        acc += self._counts[rest, r - v]
                w[pos, r, nm + 1] = acc
        return w

    def index(self, config) -> int:
        """Ordinal of ``config``; raises :class:`NotInSectorError` otherwise."""
        c = np.asarray(config, dtype=np.int64)
        if c.shape != (self.n_sites,):
            raise ValueError(f"configuration must have {self.n_sites} entries")
        idx = self.rank(c[None, :])[0]
        if idx < 0:
            raise NotInSectorError(tuple(int(x) for x in c))
        return int(idx)

    def rank(self, configs: np.ndarray) -> np.ndarray:
        """Vectorized ranking; rows outside the sector map to -1."""
        configs = np.asarray(configs, dtype=np.int64)
        if configs.ndim != 2 or configs.shape[1] != self.n_sites:
            raise ValueError("configs must have shape (k, N)")
        valid = (
            (configs >= 0).all(axis=1)
            & (configs <= self.n_max).all(axis=1)
            & (configs.sum(axis=1) == self.n_total)
        )
        out = np.full(configs.shape[0], -1, dtype=np.int64)
        if not valid.any():
            return out
        good = configs[valid]
        remaining = np.full(good.shape[0], self.n_total, dtype=np.int64)
        idx = np.zeros(good.shape[0], dtype=np.int64)
        w = self._weights
        for pos in range(self.n_sites):
            v = good[:, pos]
            idx += w[pos, remaining, v]
            remaining -= v
        out[valid] = idx
        return out


def enumerate_basis(n_sites: int, n_total: int, n_max: int = 3) -> SectorBasis:
    """Build the lexicographically ordered sector basis."""
    _check_bounds(n_sites, n_total, n_max)
    counts = _composition_counts(n_sites, n_total, n_max)
    dim = int(counts[n_sites, n_total])
    states = np.zeros((dim, n_sites), dtype=np.int8)

    # Fill column by column: each prefix block is split by the value at ``pos``.
    blocks = [(0, dim, n_total)]
    for pos in range(n_sites):
        rest = n_sites - pos - 1
        nxt = []
        for start, _stop, remaining in blocks:
            cursor = start
            for v in range(min(n_max, remaining) + 1):
                size = int(counts[rest, remaining - v])
                if size:
                    states[cursor : cursor + size, pos] = v
                    nxt.append((cursor, cursor + size, remaining - v))
                    cursor += size
        blocks = nxt

    states.setflags(write=False)
    return SectorBasis(n_sites, n_total, n_max, states, counts)


def state_index(basis: SectorBasis, config) -> int:
    return basis.index(config)
