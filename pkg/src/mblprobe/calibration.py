"""Site-frequency calibration from staircase single-excitation dynamics.

One excitation is placed on a site of a chain whose bare frequencies form a
staircase (+step or -step per site, plus unknown static offsets).  The
population traces of both staircases and every excited site are fitted with
Nelder-Mead.  A common shift of all offsets leaves every trace unchanged, so
estimates are reported with zero mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import units
from .hamiltonian import ModelSpec

log = logging.getLogger(__name__)

CASES = (+1, -1)


@dataclass(frozen=True)
class StaircasePlan:
    n_sites: int
    step: float                    # J1 units
    times: np.ndarray
    center: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).reshape(-1))
        if self.n_sites < 2:
            raise ValueError("need at least two sites")
        if self.step <= 0:
            raise ValueError("step magnitude must be positive")

    @classmethod
    def from_mhz(cls, n_sites: int, step_mhz: float = 5.0, times=None, center_mhz: float = 0.0):
        times = np.linspace(0.0, 10.0, 40) if times is None else times
        return cls(n_sites, units.mhz_to_j1(step_mhz), times, units.mhz_to_j1(center_mhz))

    def detunings(self, sign: int) -> np.ndarray:
        return self.center + sign * self.step * np.arange(self.n_sites)


def single_particle_hamiltonian(spec: ModelSpec, onsite) -> np.ndarray:
    """N x N hopping matrix of the one-boson sector (interaction drops out)."""
    n = spec.n_sites
    h = np.diag(np.asarray(onsite, dtype=float))
    idx = np.arange(n - 1)
    h[idx, idx + 1] = h[idx + 1, idx] = spec.j1
    if n > 2:
        idx = np.arange(n - 2)
        h[idx, idx + 2] = h[idx + 2, idx] = spec.j2
    return h


def simulate_staircase(spec: ModelSpec, offsets, plan: StaircasePlan) -> np.ndarray:
    """Populations P[site, time, case, excited site] for both staircases."""
    if spec.n_sites != plan.n_sites:
        raise ValueError("model and plan disagree on the number of sites")
    offsets = np.asarray(offsets, dtype=float)
    out = np.empty((plan.n_sites, plan.times.size, len(CASES), plan.n_sites))
    for c, sign in enumerate(CASES):
        evals, evecs = np.linalg.eigh(single_particle_hamiltonian(
            spec, plan.detunings(sign) + offsets))
        phases = np.exp(-1j * np.outer(plan.times, evals))          # (T, k)
        # amp[t, site, excited] = sum_k V[site, k] e^{-i E_k t} V[excited, k]
        amp = np.einsum("sk,tk,ek->ste", evecs, phases, evecs, optimize=True)
        out[:, :, c, :] = np.abs(amp) ** 2
    return out


def gauge_fix(offsets) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=float)
    return offsets - offsets.mean()


@dataclass
class OffsetEstimate:
    offsets: np.ndarray          # J1 units, zero mean
    cost: float
    iterations: int
    evaluations: int
    converged: bool
    message: str = ""

    @property
    def offsets_mhz(self) -> np.ndarray:
        return units.j1_to_mhz(self.offsets)


def trace_cost(offsets, observed, spec: ModelSpec, plan: StaircasePlan) -> float:
    diff = simulate_staircase(spec, offsets, plan) - observed
    return float(np.sum(diff * diff))


def _nelder_mead(cost, x, spread, xatol, maxiter, restarts):
    """Nelder-Mead restarted from the best point until a restart stops helping.

    Each restart builds a fresh simplex of size ``spread`` around the current
    optimum, which lets the search leave the collapsed simplex of the previous
    run.
    """
    n = x.size
    best = cost(x)
    iterations = evaluations = 0
    converged, message = best == 0.0, "start is optimal"
    for _ in range(restarts + 1):
        if best == 0.0:
            break
        simplex = np.vstack([x, x + spread * np.eye(n)])
        res = minimize(cost, x, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": xatol, "fatol": np.inf,
                                "maxiter": maxiter, "maxfev": 10 * maxiter})
        iterations += res.nit
        evaluations += res.nfev
        converged, message = bool(res.success), str(res.message)
        improved = res.fun < best * (1 - 1e-9)
        if res.fun < best:
            x, best = res.x, float(res.fun)
        if not improved:
            break
    return x, best, iterations, evaluations, converged, message


def fit_offsets(observed, spec: ModelSpec, plan: StaircasePlan, start=None, *,
                spread_mhz: float = 2.0, xatol_mhz: float = 1e-3, maxiter: int = 5000,
                restarts: int = 8, windows=(0.25, 0.5, 1.0)) -> OffsetEstimate:
    """Least-squares offsets by Nelder-Mead over growing time windows.

    Late-time traces make the cost landscape rugged, so the fit first uses
    the earliest fraction of the record and feeds each optimum into the next,
    longer window.  The reported cost is that of the full record.
    """
    observed = np.asarray(observed, dtype=float)
    x = np.zeros(plan.n_sites) if start is None else np.asarray(start, dtype=float).copy()
    spread = units.mhz_to_j1(spread_mhz)
    xatol = units.mhz_to_j1(xatol_mhz)
    t0, t1 = plan.times.min(), plan.times.max()
    iterations = evaluations = 0
    converged, message = False, ""
    for frac in windows:
        keep = plan.times <= t0 + frac * (t1 - t0) + 1e-12
        sub = StaircasePlan(plan.n_sites, plan.step, plan.times[keep], plan.center)
        obs = observed[:, keep]

        def cost(v, sub=sub, obs=obs):
            return trace_cost(v, obs, spec, sub)

        x, best, nit, nfev, converged, message = _nelder_mead(
            cost, x, spread, xatol, maxiter, restarts)
        iterations += nit
        evaluations += nfev
    if not converged:
        log.warning("offset fit stopped without converging: %s", message)
    return OffsetEstimate(gauge_fix(x), best, iterations, evaluations, converged, message)


def random_offsets_mhz(n_sites: int, max_offset_mhz: float, gen) -> np.ndarray:
    """Zero-mean random offsets whose largest magnitude equals ``max_offset_mhz``."""
    v = gauge_fix(gen.uniform(-1.0, 1.0, n_sites))
    return max_offset_mhz * v / np.max(np.abs(v))


@dataclass
class CalibrationRound:
    residual_before_mhz: np.ndarray
    estimate: OffsetEstimate
    residual_after_mhz: np.ndarray


def iterate_calibration(spec: ModelSpec, plan: StaircasePlan, offsets_mhz, rounds: int, gen, *,
                        trace_noise: float = 0.0, correction_error: float = 0.3,
                        **fit_options) -> list:
    """Repeated measure-fit-correct cycles on a synthetic device.

    The device applies each correction with a per-site relative error drawn
    uniformly from [-correction_error, correction_error], so residuals shrink
    geometrically rather than vanishing after one round.  Residuals are
    gauge-fixed before reporting.
    """
    truth = np.asarray(offsets_mhz, dtype=float)
    history = []
    for _ in range(rounds):
        observed = simulate_staircase(spec, units.mhz_to_j1(truth), plan)
        if trace_noise > 0:
            observed = observed + gen.normal(0.0, trace_noise, observed.shape)
        est = fit_offsets(observed, spec, plan, **fit_options)
        applied = est.offsets_mhz * (1 + gen.uniform(-correction_error, correction_error,
                                                     truth.size))
        after = gauge_fix(truth - applied)
        history.append(CalibrationRound(gauge_fix(truth), est, after))
        truth = after
    return history
