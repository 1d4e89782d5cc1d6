"""Quench protocol: prepare, evolve, measure, reduce to equilibrium values.

A sweep is a grid of independent cells (initial state, realization,
disorder strength).  Disorder offsets for realization ``r`` at grid point
``h_index`` come from the stream ``(master_seed, "disorder", r, h_index)`` and
are shared by all initial states; shot sampling draws from
``(master_seed, "shots", state, r, h_index, time_index)``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import rng
from .basis import SectorBasis, enumerate_basis
from .chebyshev import ChebyshevPropagator
from .hamiltonian import ModelSpec, SectorModel, realization_for
from .observables import (ConfigDistribution, EstimationError, ShotTable, autocorrelation,
                          block_number_distributions, hamming_distance, number_entropy,
                          site_populations)
from .propagator import NoiseSpec, evolve_lindblad, evolve_unitary, truncation_leakage
from .table import Cell, EnsembleTable

log = logging.getLogger(__name__)

# The ten half-filled product states of the 12-site experiment.
DEVICE_STATES = np.array([
    [0, 1, 1, 0, 1, 0, 1, 1, 1, 0, 0, 0],
    [0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0],
    [0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 0, 0],
    [0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 0],
    [0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0],
    [1, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1],
    [1, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 0],
    [1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0, 1],
    [1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 0],
    [1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 0, 1],
], dtype=np.int64)

DEFAULT_H_GRID = np.linspace(1.0, 7.0, 13)
DEFAULT_EQ_TIMES = np.linspace(7.9, 10.8, 5)


class QuenchError(RuntimeError):
    pass


def half_filled_states(n_sites: int, count: int, seed: int = 0) -> np.ndarray:
    """Distinct random half-filled 0/1 states (for chains other than N=12)."""
    if n_sites % 2:
        raise ValueError("half filling needs an even number of sites")
    gen = rng.stream(seed, "misc", n_sites, count)
    seen, out = set(), []
    base = np.array([1] * (n_sites // 2) + [0] * (n_sites // 2))
    if count > comb(n_sites, n_sites // 2):
        raise ValueError("not enough distinct half-filled states")
    while len(out) < count:
        s = tuple(gen.permutation(base))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return np.array(out, dtype=np.int64)


@dataclass
class RunPlan:
    initial_states: np.ndarray = field(default_factory=lambda: DEVICE_STATES.copy())
    disorder_grid: np.ndarray = field(default_factory=lambda: DEFAULT_H_GRID.copy())
    realizations: int = 60
    eq_times: np.ndarray = field(default_factory=lambda: DEFAULT_EQ_TIMES.copy())
    shots: int = 3000
    readout: tuple | None = None
    master_seed: int = 2021
    extra_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    entropy_blocks: tuple = ()
    postselect: bool = True

    def __post_init__(self):
        self.initial_states = np.atleast_2d(np.asarray(self.initial_states, dtype=np.int64))
        self.disorder_grid = np.asarray(self.disorder_grid, dtype=float).reshape(-1)
        self.eq_times = np.asarray(self.eq_times, dtype=float).reshape(-1)
        self.extra_times = np.asarray(self.extra_times, dtype=float).reshape(-1)
        n = self.n_sites
        totals = self.initial_states.sum(axis=1)
        if not np.all(np.isin(self.initial_states, (0, 1))):
            raise ValueError("initial states must be 0/1 product states")
        if not np.all(2 * totals == n):
            raise ValueError("every initial state must be at half filling")
        if self.eq_times.size == 0 or np.any(np.diff(self.eq_times) <= 0):
            raise ValueError("eq_times must be strictly increasing")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if np.any(self.disorder_grid < 0):
            raise ValueError("disorder strengths must be >= 0")
        if self.shots < 1:
            raise ValueError("shots must be positive")
        for m in self.entropy_blocks:
            if not 1 <= m <= n // 2:
                raise ValueError(f"entropy block size {m} outside 1..N/2")
        if self.readout is not None:
            f00, f11 = (np.asarray(x, dtype=float).reshape(-1) for x in self.readout)
            if f00.size != n or f11.size != n:
                raise ValueError("readout fidelities need one entry per site")
            self.readout = (f00, f11)

    @property
    def n_sites(self) -> int:
        return self.initial_states.shape[1]

    @property
    def n_total(self) -> int:
        return int(self.initial_states[0].sum())

    @property
    def record_times(self) -> np.ndarray:
        return np.union1d(self.eq_times, self.extra_times)

    @property
    def quantities(self) -> list:
        return ["C", "S", "D"] + [f"S{m}" for m in self.entropy_blocks]

    def n_cells(self) -> int:
        return (len(self.quantities) * len(self.initial_states) * self.realizations
                * self.disorder_grid.size)


# -- measurement -----------------------------------------------------------


def sample_shots(psi, basis: SectorBasis, n_shots: int, readout=None, seed=None,
                 binarize: bool = True) -> ShotTable:
    """Projective measurements of all sites, aggregated into unique outcomes.

    With ``binarize`` each site reports min(n, 1), as a two-level dispersive
    readout would.  ``readout = (f00, f11)`` then flips a reported 0 with
    probability 1 - f00 and a reported 1 with probability 1 - f11.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = np.abs(np.asarray(psi)) ** 2
    p = p / p.sum()
    counts = gen.multinomial(n_shots, p)
    hit = np.nonzero(counts)[0]
    configs = basis.states[hit].astype(np.int64)
    weights = counts[hit].astype(float)
    if binarize:
        configs = np.minimum(configs, 1)
    if readout is not None:
        return apply_readout(ShotTable(configs, weights), readout, gen)
    if binarize:
        configs, inverse = np.unique(configs, axis=0, return_inverse=True)
        weights = np.bincount(inverse.reshape(-1), weights=weights, minlength=configs.shape[0])
    return ShotTable(configs, weights)


def apply_readout(shots: ShotTable, readout, gen) -> ShotTable:
    """Independent per-site bit flips; occupations are read as min(n, 1)."""
    f00, f11 = (np.asarray(x, dtype=float) for x in readout)
    w = shots.weights if shots.weights is not None else np.ones(len(shots))
    rows = np.minimum(np.repeat(shots.shots, w.astype(np.int64), axis=0), 1)
    u = gen.random(rows.shape)
    flip = np.where(rows == 0, u < 1.0 - f00, u < 1.0 - f11)
    rows = np.where(flip, 1 - rows, rows)
    configs, inverse = np.unique(rows, axis=0, return_inverse=True)
    weights = np.bincount(inverse.reshape(-1), minlength=configs.shape[0]).astype(float)
    return ShotTable(configs, weights)


@dataclass
class PostSelection:
    table: ShotTable
    retention: float

    @property
    def empty(self) -> bool:
        return len(self.table) == 0


def post_select(shots: ShotTable, n_total: int) -> PostSelection:
    """Keep only outcomes with the conserved total occupation."""
    keep = shots.shots.sum(axis=1) == n_total
    w = shots.weights if shots.weights is not None else np.ones(len(shots))
    total = w.sum()
    kept = ShotTable(shots.shots[keep], w[keep])
    return PostSelection(kept, float(w[keep].sum() / total) if total > 0 else 0.0)


def measure(source, basis, s0, block_sizes) -> dict:
    """All diagnostics at one time for one source."""
    pops = site_populations(source, basis)
    dists = block_number_distributions(source, basis, block_sizes)
    return {
        "populations": pops,
        "C": autocorrelation(pops, s0),
        "entropies": {d.m: number_entropy(d) for d in dists},
        "distributions": {d.m: d for d in dists},
        "D": hamming_distance(source, basis, s0),
    }


@dataclass
class QuenchRecord:
    state_index: int
    realization: int
    h_index: int
    h: float
    seed: int
    times: np.ndarray
    populations: np.ndarray
    autocorrelation: np.ndarray
    entropies: np.ndarray
    hamming: np.ndarray
    retention: np.ndarray
    block_distributions: list = field(default_factory=list)
    raw_shots: list | None = None
    post_shots: list | None = None
    eq_mask: np.ndarray | None = None
    block_sizes: tuple = ()
    half: int = 1

    def series(self, quantity: str) -> np.ndarray:
        if quantity == "C":
            return self.autocorrelation
        if quantity == "D":
            return self.hamming
        m = self.half if quantity == "S" else int(quantity[1:])
        return self.entropies[:, self.block_sizes.index(m)]

    def q_eq(self, quantity: str) -> float:
        return float(np.mean(self.series(quantity)[self.eq_mask]))


def _shot_source(psi, basis, plan, gen):
    raw = sample_shots(psi, basis, plan.shots, plan.readout, gen, binarize=True)
    if not plan.postselect:
        return raw, raw, 1.0
    ps = post_select(raw, plan.n_total)
    if ps.empty:
        raise EstimationError("post-selection rejected every shot")
    return raw, ps.table, ps.retention


def _build_record(plan, s_index, r, h_index, seed, times, sources, basis, keep_shots):
    """sources: per time, (raw_shots or None, measured source, retention)."""
    s0 = plan.initial_states[s_index]
    blocks = tuple(range(1, plan.n_sites // 2 + 1))
    res = [measure(src, basis if not isinstance(src, (ShotTable, ConfigDistribution)) else None,
                   s0, blocks) for _, src, _ in sources]
    return QuenchRecord(
        state_index=s_index, realization=r, h_index=h_index,
        h=float(plan.disorder_grid[h_index]), seed=seed, times=times,
        populations=np.array([x["populations"] for x in res]),
        autocorrelation=np.array([x["C"] for x in res]),
        entropies=np.array([[x["entropies"][m] for m in blocks] for x in res]),
        hamming=np.array([x["D"] for x in res]),
        retention=np.array([ret for _, _, ret in sources]),
        block_distributions=[x["distributions"] for x in res],
        raw_shots=[raw for raw, _, _ in sources] if keep_shots else None,
        post_shots=[src for _, src, _ in sources] if keep_shots else None,
        eq_mask=np.isin(times, plan.eq_times),
        block_sizes=blocks, half=plan.n_sites // 2,
    )


def run_quench(spec: ModelSpec, plan: RunPlan, state_index: int, realization: int,
               h_index: int, *, mode: str = "exact", noise: NoiseSpec | None = None,
               method: str = "krylov", tol: float = 1e-9, open_method: str = "trajectories",
               n_trajectories: int = 200, basis: SectorBasis | None = None,
               model: SectorModel | None = None) -> QuenchRecord:
    """One (initial state, realization, h) cell of the protocol."""
    if mode not in ("exact", "shots"):
        raise ValueError(f"unknown mode {mode!r}")
    h = float(plan.disorder_grid[h_index])
    try:
        if basis is None:
            basis = enumerate_basis(plan.n_sites, plan.n_total, spec.n_max)
        if model is None:
            model = SectorModel(spec, basis)
        dis = realization_for(plan.master_seed, realization, h_index, h, spec.n_sites)
        s0 = plan.initial_states[state_index]
        psi0 = np.zeros(basis.dim, dtype=complex)
        psi0[basis.index(s0)] = 1.0
        times = plan.record_times
        sources = []
        if noise is None:
            traj = evolve_unitary(model.hamiltonian(dis.offsets), psi0, times,
                                  method=method, tol=tol)
            for ti, psi in enumerate(traj.states):
                if mode == "exact":
                    sources.append((None, psi, 1.0))
                else:
                    gen = rng.stream(plan.master_seed, "shots", state_index, realization,
                                     h_index, ti)
                    sources.append(_shot_source(psi, basis, plan, gen))
        else:
            gen = rng.stream(plan.master_seed, "trajectories", state_index, realization, h_index)
            rec = evolve_lindblad(spec, dis, noise, psi0, times, n_total=plan.n_total,
                                  method=open_method, n_trajectories=n_trajectories,
                                  seed=gen, sample_shots=(mode == "shots"), tol=tol)
            for ti in range(times.size):
                if mode == "shots":
                    raw = ShotTable(np.minimum(np.array(rec.shots[ti]), 1))
                    if plan.readout is not None:
                        raw = apply_readout(raw, plan.readout, gen)
                    if plan.postselect:
                        ps = post_select(raw, plan.n_total)
                        if ps.empty:
                            raise EstimationError("post-selection rejected every shot")
                        sources.append((raw, ps.table, ps.retention))
                    else:
                        sources.append((raw, raw, 1.0))
                else:
                    dist = ConfigDistribution(rec.configs, rec.probabilities[ti])
                    if plan.postselect:
                        keep = rec.configs.sum(axis=1) == plan.n_total
                        ret = float(rec.probabilities[ti][keep].sum())
                        dist = ConfigDistribution(rec.configs[keep], rec.probabilities[ti][keep])
                        sources.append((None, dist, ret))
                    else:
                        sources.append((None, dist, 1.0))
        return _build_record(plan, state_index, realization, h_index, dis.seed, times,
                             sources, basis, keep_shots=(mode == "shots"))
    except Exception as exc:
        raise QuenchError(
            f"state {state_index}, realization {realization}, h={h:g}: {exc}") from exc


# -- sweep -----------------------------------------------------------------


@dataclass
class SweepSettings:
    mode: str = "exact"
    method: str = "chebyshev"
    tol: float = 1e-9
    noise: NoiseSpec | None = None
    open_method: str = "trajectories"
    n_trajectories: int = 200


_CTX: dict = {}


def _init_worker(spec, plan, settings):
    basis = enumerate_basis(plan.n_sites, plan.n_total, spec.n_max)
    _CTX.update(spec=spec, plan=plan, settings=settings, basis=basis,
                model=SectorModel(spec, basis))


def _evolve_block(spec, plan, basis, model, h_index, r, tol):
    """Yield (time index, state block) for all initial states of one unit."""
    h = float(plan.disorder_grid[h_index])
    dis = realization_for(plan.master_seed, r, h_index, h, spec.n_sites)
    prop = ChebyshevPropagator(model.hamiltonian(dis.offsets), tol=min(tol, 1e-12))
    block = np.zeros((basis.dim, len(plan.initial_states)), dtype=complex)
    for k, s0 in enumerate(plan.initial_states):
        block[basis.index(s0), k] = 1.0
    t_prev = 0.0
    for ti, t in enumerate(plan.record_times):
        block = prop.advance(block, t - t_prev)
        t_prev = t
        yield ti, block


def _unit_chebyshev(ctx, h_index, r):
    spec, plan, settings = ctx["spec"], ctx["plan"], ctx["settings"]
    basis = ctx["basis"]
    dis_seed = rng.derive_seed(plan.master_seed, "disorder", r, h_index)
    times = plan.record_times
    per_state = [[] for _ in plan.initial_states]
    for ti, block in _evolve_block(spec, plan, basis, ctx["model"], h_index, r, settings.tol):
        for k in range(block.shape[1]):
            psi = block[:, k]
            if settings.mode == "exact":
                per_state[k].append((None, psi, 1.0))
            else:
                gen = rng.stream(plan.master_seed, "shots", k, r, h_index, ti)
                per_state[k].append(_shot_source(psi, basis, plan, gen))
    return [_build_record(plan, k, r, h_index, dis_seed, times, per_state[k], basis, False)
            for k in range(len(plan.initial_states))]


def max_truncation_leakage(spec: ModelSpec, plan: RunPlan, h_index: int, *,
                           realizations=None, tol: float = 1e-9) -> dict:
    """Largest ladder-truncation error over sites, eq times, states and realizations."""
    basis = enumerate_basis(plan.n_sites, plan.n_total, spec.n_max)
    model = SectorModel(spec, basis)
    eq = np.isin(plan.record_times, plan.eq_times)
    worst = {"leakage": 0.0, "state": None, "realization": None, "site": None, "time": None}
    for r in range(plan.realizations) if realizations is None else realizations:
        for ti, block in _evolve_block(spec, plan, basis, model, h_index, r, tol):
            if not eq[ti]:
                continue
            probs = np.abs(block) ** 2
            for k in range(probs.shape[1]):
                for site in range(plan.n_sites):
                    value = truncation_leakage(probs[:, k], basis, site)
                    if value > worst["leakage"]:
                        worst = {"leakage": value, "state": k, "realization": r,
                                 "site": site, "time": float(plan.record_times[ti])}
    return worst


def _run_unit(h_index, r):
    ctx = _CTX
    settings = ctx["settings"]
    try:
        if settings.noise is None and settings.method == "chebyshev":
            return h_index, r, _unit_chebyshev(ctx, h_index, r), None
        records = [
            run_quench(ctx["spec"], ctx["plan"], k, r, h_index, mode=settings.mode,
                       noise=settings.noise, method=settings.method, tol=settings.tol,
                       open_method=settings.open_method,
                       n_trajectories=settings.n_trajectories,
                       basis=ctx["basis"], model=ctx["model"])
            for k in range(len(ctx["plan"].initial_states))
        ]
        return h_index, r, records, None
    except Exception as exc:  # recorded per cell, sweep continues
        log.warning("unit h_index=%d r=%d failed: %s", h_index, r, exc)
        return h_index, r, None, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: ModelSpec, plan: RunPlan, settings: SweepSettings | None = None,
              jobs: int = 1, config_hash: str = "", progress=None) -> EnsembleTable:
    """Fill an :class:`EnsembleTable` with every cell of ``plan``."""
    settings = settings or SweepSettings()
    units = [(hi, r) for hi in range(plan.disorder_grid.size) for r in range(plan.realizations)]
    table = EnsembleTable(plan.disorder_grid, config_hash, plan.master_seed)
    failures = []

    def consume(result):
        hi, r, records, error = result
        h = float(plan.disorder_grid[hi])
        seed = rng.derive_seed(plan.master_seed, "disorder", r, hi)
        for k in range(len(plan.initial_states)):
            for q in plan.quantities:
                if records is None:
                    table.add(q, k, r, hi, Cell(None, (), 0.0, seed, "missing"))
                    continue
                rec = records[k]
                series = rec.series(q)[rec.eq_mask]
                table.add(q, k, r, hi, Cell(float(np.mean(series)),
                                            tuple(float(x) for x in series),
                                            float(np.mean(rec.retention[rec.eq_mask])),
                                            seed, "ok"))
        if error:
            failures.append((hi, r, h, error))
        if progress is not None:
            progress(hi, r)

    if jobs <= 1:
        _init_worker(spec, plan, settings)
        for unit in units:
            consume(_run_unit(*unit))
    else:
        jobs = min(jobs, os.cpu_count() or 1, len(units))
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(spec, plan, settings)) as pool:
            futures = [pool.submit(_run_unit, *u) for u in units]
            for fut in futures:
                consume(fut.result())
    table.failures = failures
    return table
