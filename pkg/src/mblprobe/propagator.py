"""Time evolution: closed-system unitary propagation and the Lindblad model.

The open system carries decay (Gamma/2) D[a_l] and dephasing (gamma/2) D[n_l]
with D[O] rho = 2 O rho O+ - rho O+ O - O+ O rho, i.e. jump operators
sqrt(Gamma) a_l and sqrt(gamma) n_l.  Decay lowers the boson number, so the
open-system state lives on the direct sum of sectors 0..n_total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .basis import SectorBasis, enumerate_basis
from .chebyshev import ChebyshevPropagator
from .hamiltonian import DisorderRealization, ModelSpec, SectorModel
from .krylov import KrylovPropagator, real_matvec

log = logging.getLogger(__name__)

NORM_TOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass
class NoiseSpec:
    decay_rates: np.ndarray
    dephasing_rates: np.ndarray

    def __post_init__(self):
        self.decay_rates = np.asarray(self.decay_rates, dtype=float).reshape(-1)
        self.dephasing_rates = np.asarray(self.dephasing_rates, dtype=float).reshape(-1)
        if self.decay_rates.shape != self.dephasing_rates.shape:
            raise ValueError("decay and dephasing vectors must have equal length")
        if (self.decay_rates < 0).any() or (self.dephasing_rates < 0).any():
            raise ValueError("rates must be non-negative")

    @classmethod
    def zeros(cls, n_sites: int) -> "NoiseSpec":
        return cls(np.zeros(n_sites), np.zeros(n_sites))

    @property
    def is_zero(self) -> bool:
        return not (self.decay_rates.any() or self.dephasing_rates.any())


@dataclass
class Trajectory:
    """Recorded evolution.  ``states`` is (T, dim) for the unitary solver."""

    times: np.ndarray
    states: np.ndarray | None = None
    stats: dict = field(default_factory=dict)


@dataclass
class LindbladRecord:
    """Expectation records of an open-system run.

    ``configs`` enumerates the direct-sum basis (all sectors <= n_total) and
    ``probabilities[t]`` is the diagonal of rho(t) on it (averaged over
    trajectories for the stochastic solver).  Standard errors are zero for
    the dense solver.
    """

    times: np.ndarray
    configs: np.ndarray
    probabilities: np.ndarray
    populations: np.ndarray
    population_se: np.ndarray
    trace: np.ndarray
    method: str
    shots: list | None = None


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("need at least one time")
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-negative and strictly increasing")
    return times


def _check_state(psi0, dim: int) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    if psi0.size != dim:
        raise ValueError(f"state has {psi0.size} amplitudes, operator has dimension {dim}")
    norm = np.linalg.norm(psi0)
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (norm {norm!r})")
    return psi0


def fock_state(basis: SectorBasis, config) -> np.ndarray:
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index(config)] = 1.0
    return psi


def evolve_unitary(H, psi0, times, *, method: str = "krylov", tol: float = 1e-9,
                   m_max: int = 40) -> Trajectory:
    """Record exp(-i t H) psi0 at each requested time.

    ``method`` is ``"krylov"`` (adaptive Lanczos), ``"chebyshev"`` or
    ``"dense"`` (full eigendecomposition; for checks on small systems).
    """
    times = _check_times(times)
    dim = H.shape[0]
    psi = _check_state(psi0, dim)
    out = np.empty((times.size, dim), dtype=complex)
    stats = {}
    if method == "dense":
        evals, evecs = np.linalg.eigh(H.toarray() if sp.issparse(H) else np.asarray(H))
        coeff = evecs.conj().T @ psi
        for i, t in enumerate(times):
            out[i] = psi if t == 0 else evecs @ (np.exp(-1j * evals * t) * coeff)
        return Trajectory(times, out, stats)

    if method == "krylov":
        mv = real_matvec(H) if np.isrealobj(H.data if sp.issparse(H) else H) else (lambda v: H @ v)
        prop = KrylovPropagator(mv, dim, tol=tol, m_max=min(m_max, dim))
    elif method == "chebyshev":
        prop = ChebyshevPropagator(H, tol=min(tol, 1e-12))
    else:
        raise ValueError(f"unknown method {method!r}")

    t_prev = 0.0
    for i, t in enumerate(times):
        if t > t_prev:
            psi = prop.advance(psi, t - t_prev)
        out[i] = psi
        t_prev = t
    if isinstance(prop, KrylovPropagator):
        stats = {"steps": prop.stats.steps, "matvecs": prop.stats.matvecs,
                 "max_step_error": float(prop.stats.max_error)}
    else:
        stats = {"matvecs": prop.matvecs}
    return Trajectory(times, out, stats)


def truncation_leakage(psi, basis: SectorBasis, site: int) -> float:
    """|<[a_l, a_l+]> - 1| for the truncated ladder algebra.

    With the cap at n_max the commutator is 1 - (n_max + 1) |n_max><n_max|,
    so the deviation is (n_max + 1) * P(n_l = n_max).  ``psi`` may be an
    amplitude vector or a probability vector over ``basis``.
    """
    psi = np.asarray(psi)
    probs = np.abs(psi) ** 2 if np.iscomplexobj(psi) else psi.astype(float)
    at_cap = basis.states[:, site] == basis.n_max
    return float((basis.n_max + 1) * probs[at_cap].sum())


# --------------------------------------------------------------------------
# open system


class _DirectSum:
    """Sectors 0..n_total of one model, stacked into a single index space."""

    def __init__(self, spec: ModelSpec, offsets, n_total: int):
        self.spec = spec
        self.n_total = n_total
        self.bases = [enumerate_basis(spec.n_sites, n, spec.n_max) for n in range(n_total + 1)]
        self.models = [SectorModel(spec, b) for b in self.bases]
        self.hams = [m.hamiltonian(offsets) for m in self.models]
        dims = [b.dim for b in self.bases]
        self.starts = np.concatenate([[0], np.cumsum(dims)])
        self.dim = int(self.starts[-1])
        self.configs = np.vstack([b.states for b in self.bases]).astype(np.int64)
        # lowering maps a_l: sector n -> sector n-1
        self.lower = [None]
        for n in range(1, n_total + 1):
            src_basis, dst_basis = self.bases[n], self.bases[n - 1]
            ops = []
            for site in range(spec.n_sites):
                src = np.nonzero(src_basis.states[:, site] > 0)[0]
                new = src_basis.states[src].astype(np.int64)
                amp = np.sqrt(new[:, site].astype(float))
                new[:, site] -= 1
                dst = dst_basis.rank(new)
                ops.append(sp.csr_matrix((amp, (dst, src)),
                                         shape=(dst_basis.dim, src_basis.dim)))
            self.lower.append(ops)

    def sector_of(self, flat_index: int) -> int:
        return int(np.searchsorted(self.starts, flat_index, side="right") - 1)

    def full_operators(self):
        """H and the per-site a_l, n_l on the stacked space (sparse)."""
        h = sp.block_diag(self.hams, format="csr")
        occ = self.configs.astype(float)
        annihilators = []
        for site in range(self.spec.n_sites):
            a = sp.lil_matrix((self.dim, self.dim))
            for n in range(1, self.n_total + 1):
                blk = self.lower[n][site]
                a[self.starts[n - 1]:self.starts[n], self.starts[n]:self.starts[n + 1]] = blk
            annihilators.append(a.tocsr())
        numbers = [sp.diags(occ[:, site]).tocsr() for site in range(self.spec.n_sites)]
        return h, annihilators, numbers


def _liouvillian(h, jumps):
    """Row-major vectorisation: vec(A rho B) = kron(A, B.T) vec(rho)."""
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr")
    lv = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for c in jumps:
        cdc = (c.conj().T @ c).tocsr()
        lv = lv + sp.kron(c, c.conj()) - 0.5 * (sp.kron(cdc, eye) + sp.kron(eye, cdc.T))
    return sp.csr_matrix(lv)


def _embed(ds: _DirectSum, psi0) -> np.ndarray:
    full = np.zeros(ds.dim, dtype=complex)
    n = ds.n_total
    full[ds.starts[n]:ds.starts[n + 1]] = psi0
    return full


def _lindblad_dense(ds, noise, psi0, times, rtol, atol):
    h, annihilators, numbers = ds.full_operators()
    jumps = []
    for site in range(ds.spec.n_sites):
        if noise.decay_rates[site] > 0:
            jumps.append(np.sqrt(noise.decay_rates[site]) * annihilators[site])
        if noise.dephasing_rates[site] > 0:
            jumps.append(np.sqrt(noise.dephasing_rates[site]) * numbers[site])
    lv = _liouvillian(h, jumps)
    psi = _embed(ds, psi0)
    rho0 = np.outer(psi, psi.conj()).ravel()

    def rhs(_t, y):
        return lv @ y

    if times[-1] == 0:
        ys = rho0[:, None]
    else:
        sol = solve_ivp(rhs, (0.0, float(times[-1])), rho0, method="DOP853",
                        t_eval=times, rtol=rtol, atol=atol)
        if not sol.success:
            raise SolverError(f"master-equation integration failed: {sol.message}")
        ys = sol.y
    dim = ds.dim
    probs = np.empty((times.size, dim))
    trace = np.empty(times.size)
    for i in range(times.size):
        rho = ys[:, i].reshape(dim, dim)
        diag = np.real(np.diag(rho))
        probs[i] = diag
        trace[i] = diag.sum()
    return probs, trace


class _SectorEvolver:
    """exp(-i t H_eff) on one sector; dense eigen-solution for small blocks."""

    dense_limit = 400

    def __init__(self, h, anti_hermitian_diag, tol):
        self.dim = h.shape[0]
        heff = h.astype(complex) - 0.5j * sp.diags(anti_hermitian_diag)
        if self.dim <= self.dense_limit:
            evals, right = np.linalg.eig(heff.toarray())
            self.evals, self.right = evals, right
            self.left = np.linalg.inv(right)
            self.krylov = None
        else:
            heff = sp.csr_matrix(heff)
            self.krylov = KrylovPropagator(lambda v: heff @ v, self.dim,
                                           hermitian=False, tol=tol)

    def advance(self, psi, t):
        if t == 0:
            return psi.copy()
        if self.krylov is not None:
            return self.krylov.advance(psi, t)
        return self.right @ (np.exp(-1j * self.evals * t) * (self.left @ psi))


def _lindblad_trajectories(ds, noise, psi0, times, n_traj, gen, tol, time_resolution,
                           sample_shots):
    n_sites = ds.spec.n_sites
    occ_by_sector = [b.states.astype(float) for b in ds.bases]
    evolvers = []
    for n, b in enumerate(ds.bases):
        occ = occ_by_sector[n]
        k = occ @ noise.decay_rates + (occ ** 2) @ noise.dephasing_rates
        evolvers.append(_SectorEvolver(ds.hams[n], k, tol))

    n_t = times.size
    prob_sum = np.zeros((n_t, ds.dim))
    pop_sum = np.zeros((n_t, n_sites))
    pop_sq = np.zeros((n_t, n_sites))
    shots = [[] for _ in range(n_t)] if sample_shots else None

    def jump(psi, n):
        occ = occ_by_sector[n]
        p2 = np.abs(psi) ** 2
        weights = np.concatenate([noise.decay_rates * (p2 @ occ),
                                  noise.dephasing_rates * (p2 @ occ ** 2)])
        total = weights.sum()
        if total <= 0:
            return psi, n
        k = int(gen.choice(weights.size, p=weights / total))
        if k < n_sites:
            new = ds.lower[n][k] @ psi
            n -= 1
        else:
            new = occ[:, k - n_sites] * psi
        return new / np.linalg.norm(new), n

    for _ in range(n_traj):
        psi = np.asarray(psi0, dtype=complex).copy()
        n = ds.n_total
        t = 0.0
        threshold = gen.random()
        for i, t_out in enumerate(times):
            while t < t_out:
                trial = evolvers[n].advance(psi, t_out - t)
                if np.vdot(trial, trial).real > threshold:
                    psi, t = trial, t_out
                    break
                # bisect for the time where |psi|^2 crosses the threshold
                lo, hi = 0.0, t_out - t
                while hi - lo > time_resolution * max(hi, 1e-300):
                    mid = 0.5 * (lo + hi)
                    cand = evolvers[n].advance(psi, mid)
                    if np.vdot(cand, cand).real > threshold:
                        lo = mid
                    else:
                        hi = mid
                psi = evolvers[n].advance(psi, hi)
                t += hi
                psi, n = jump(psi, n)
                threshold = gen.random()
            p2 = np.abs(psi) ** 2
            p2 /= p2.sum()
            lo_i, hi_i = ds.starts[n], ds.starts[n + 1]
            prob_sum[i, lo_i:hi_i] += p2
            pops = p2 @ occ_by_sector[n]
            pop_sum[i] += pops
            pop_sq[i] += pops ** 2
            if sample_shots:
                shots[i].append(ds.configs[lo_i + gen.choice(p2.size, p=p2)])
    probs = prob_sum / n_traj
    mean = pop_sum / n_traj
    if n_traj > 1:
        var = np.maximum(pop_sq / n_traj - mean ** 2, 0.0) * n_traj / (n_traj - 1)
        se = np.sqrt(var / n_traj)
    else:
        se = np.full_like(mean, np.nan)
    return probs, mean, se, shots


def evolve_lindblad(spec: ModelSpec, dis: DisorderRealization, noise: NoiseSpec,
                    psi0, times, *, n_total: int, method: str = "trajectories",
                    n_trajectories: int = 500, seed=None, dense_dim_cap: int = 200,
                    rtol: float = 1e-10, atol: float = 1e-12, tol: float = 1e-9,
                    time_resolution: float = 1e-6, sample_shots: bool = False,
                    ) -> LindbladRecord:
    """Open-system evolution of ``psi0`` (a state in the n_total sector)."""
    times = _check_times(times)
    if noise.decay_rates.size != spec.n_sites:
        raise ValueError("noise vectors must have one entry per site")
    ds = _DirectSum(spec, dis.offsets, n_total)
    psi0 = _check_state(psi0, ds.bases[n_total].dim)

    if method == "dense":
        if ds.dim > dense_dim_cap:
            raise SolverError(
                f"dense master equation needs dimension {ds.dim} > cap {dense_dim_cap}; "
                "use method='trajectories'"
            )
        probs, trace = _lindblad_dense(ds, noise, psi0, times, rtol, atol)
        pops = probs @ ds.configs
        return LindbladRecord(times, ds.configs, probs, pops, np.zeros_like(pops),
                              trace, "dense")
    if method == "trajectories":
        gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        probs, pops, se, shots = _lindblad_trajectories(
            ds, noise, psi0, times, n_trajectories, gen, tol, time_resolution, sample_shots)
        return LindbladRecord(times, ds.configs, probs, pops, se, probs.sum(axis=1),
                              "trajectories", shots)
    raise ValueError(f"unknown method {method!r}")
