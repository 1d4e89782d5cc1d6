"""Auto-correlation, block number entropy and Hamming distance.

Every observable accepts an amplitude vector over a :class:`SectorBasis`, a
:class:`ShotTable` of measured configurations, or a
:class:`ConfigDistribution` (explicit probabilities over configurations, as
produced by the open-system solver).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import SectorBasis


class EstimationError(ValueError):
    pass


@dataclass
class ShotTable:
    shots: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.shots = np.asarray(self.shots, dtype=np.int64)
        if self.shots.ndim != 2:
            self.shots = self.shots.reshape(len(self.shots), -1)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if self.weights.size != self.shots.shape[0]:
                raise ValueError("one weight per shot required")

    def __len__(self) -> int:
        return self.shots.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum()) if self.weights is not None else float(len(self))


@dataclass
class ConfigDistribution:
    configs: np.ndarray
    probs: np.ndarray


@dataclass
class BlockNumberDistribution:
    m: int
    p: np.ndarray


def _distribution(source, basis: SectorBasis | None):
    """(configs, normalized weights) for any supported source."""
    if isinstance(source, ShotTable):
        if len(source) == 0 or source.total_weight <= 0:
            raise EstimationError("empty shot table")
        w = source.weights if source.weights is not None else np.ones(len(source))
        return source.shots, w / w.sum()
    if isinstance(source, ConfigDistribution):
        p = np.asarray(source.probs, dtype=float)
        return np.asarray(source.configs), p / p.sum()
    if basis is None:
        raise ValueError("amplitude vectors need their basis")
    psi = np.asarray(source)
    if psi.shape != (basis.dim,):
        raise ValueError(f"state has shape {psi.shape}, basis dimension is {basis.dim}")
    return basis.states, np.abs(psi) ** 2


def site_populations(source, basis: SectorBasis | None = None) -> np.ndarray:
    configs, p = _distribution(source, basis)
    return p @ configs


def autocorrelation(pop_t, pop_0) -> float:
    """C = (1/N) sum_l (2 n_l(t) - 1)(2 n_l(0) - 1)."""
    pop_t = np.asarray(pop_t, dtype=float)
    pop_0 = np.asarray(pop_0, dtype=float)
    if pop_t.shape != pop_0.shape:
        raise ValueError(f"population vectors differ in length: {pop_t.shape} vs {pop_0.shape}")
    return float(np.mean((2 * pop_t - 1) * (2 * pop_0 - 1)))


def block_number_distribution(source, basis: SectorBasis | None = None,
                              m: int = 1) -> BlockNumberDistribution:
    """Distribution of the boson count on sites 1..m."""
    configs, p = _distribution(source, basis)
    n_sites = configs.shape[1]
    if not 1 <= m <= n_sites:
        raise ValueError(f"block size must be in [1, {n_sites}], got {m}")
    counts = configs[:, :m].sum(axis=1).astype(np.int64)
    length = int(counts.max()) + 1 if counts.size else 1
    if basis is not None:
        length = max(length, min(basis.n_total, m * basis.n_max) + 1)
    return BlockNumberDistribution(m, np.bincount(counts, weights=p, minlength=length))


def block_number_distributions(source, basis: SectorBasis | None, sizes) -> list:
    """Several block sizes from one pass over the configurations."""
    configs, p = _distribution(source, basis)
    cums = np.cumsum(configs, axis=1)
    out = []
    for m in sizes:
        counts = cums[:, m - 1].astype(np.int64)
        length = int(counts.max()) + 1
        if basis is not None:
            length = max(length, min(basis.n_total, m * basis.n_max) + 1)
        out.append(BlockNumberDistribution(m, np.bincount(counts, weights=p, minlength=length)))
    return out


def number_entropy(dist: BlockNumberDistribution) -> float:
    """Shannon entropy (natural log) with 0 log 0 = 0."""
    p = np.asarray(dist.p, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def hamming_distance(source, basis: SectorBasis | None, s0) -> float:
    """Expected fraction of sites whose occupation differs from ``s0``.

    Any occupation other than the reference 0/1 value counts as one flip,
    which keeps the distance in [0, 1] for multiply-occupied outcomes.
    """
    configs, p = _distribution(source, basis)
    s0 = np.asarray(s0)
    if s0.shape != (configs.shape[1],):
        raise ValueError("reference configuration has the wrong length")
    d = (configs != s0).mean(axis=1)
    return float(p @ d)
