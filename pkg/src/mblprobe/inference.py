"""Hierarchical normal model for fusing per-state transition points.

    Y[i, j] | theta_i  ~ N(theta_i, delta^2)     i: quantity, j: initial state
    theta_i | mu, tau  ~ N(mu, tau^2)

Priors: flat on mu, p(delta^2) ~ 1/delta^2, flat on tau in (0, tau_cap].
All full conditionals are standard, so the sampler is plain Gibbs:

    theta_i  ~ N((n_i ybar_i / delta^2 + mu / tau^2) / P_i, 1 / P_i)
    mu       ~ N(mean(theta), tau^2 / I)
    delta^2  = SSE / chi2(n)                 SSE = sum_ij (Y_ij - theta_i)^2
    tau^2    = sum_i (theta_i - mu)^2 / chi2(I - 1), redrawn while tau > tau_cap
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .statistics import silverman_bandwidth

# Keeps the variances strictly positive when the data leave no spread at all.
VARIANCE_FLOOR = 1e-12
_CHUNK = 50_000


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PosteriorSamples:
    names: list
    draws: np.ndarray            # (chains, kept, parameters)
    iterations: int
    burn_in: int
    thin: int
    seed: int
    tau_cap: float
    fixed: dict = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return self.draws.shape[0]

    @property
    def kept(self) -> int:
        return self.draws.shape[1]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]


def _group_stats(y):
    """Per-group counts, means and within-group sums of squares."""
    groups = [np.asarray(g, dtype=float).reshape(-1) for g in y]
    n = np.array([g.size for g in groups], dtype=float)
    ybar = np.array([g.mean() for g in groups])
    within = np.array([((g - g.mean()) ** 2).sum() for g in groups])
    return n, ybar, within


def _run_chain(y, iterations, burn_in, thin, gen, tau_cap, fixed):
    n, ybar, within = _group_stats(y)
    n_groups = n.size
    n_obs = n.sum()
    all_y = np.concatenate([np.asarray(g, dtype=float).reshape(-1) for g in y])
    spread = max(float(all_y.std()), 0.1)
    center = float(all_y.mean())

    # Overdispersed start: data mean +- 2 data std.
    mu = center + 2 * spread * gen.standard_normal()
    delta2 = fixed.get("delta2", spread ** 2 * math.exp(gen.standard_normal()))
    tau2 = fixed.get("tau2", min(spread ** 2 * math.exp(gen.standard_normal()), tau_cap ** 2))
    theta = [0.0] * n_groups
    n_l, ybar_l, within_l = n.tolist(), ybar.tolist(), within.tolist()
    fix_delta, fix_tau = "delta2" in fixed, "tau2" in fixed
    tau_df = n_groups - 1
    if tau_df < 1 and not fix_tau:
        raise ValueError("tau needs at least two groups unless it is fixed")

    kept = (iterations - burn_in) // thin
    out = np.empty((kept, 3 + n_groups))
    k = 0
    done = 0
    while done < iterations:
        m = min(_CHUNK, iterations - done)
        z_theta = gen.standard_normal((m, n_groups)).tolist()
        z_mu = gen.standard_normal(m).tolist()
        c_delta = gen.chisquare(n_obs, m).tolist()
        c_tau = gen.chisquare(tau_df, m).tolist() if tau_df >= 1 else [1.0] * m
        for it in range(m):
            zt = z_theta[it]
            inv_tau2 = 1.0 / tau2
            inv_delta2 = 1.0 / delta2
            for i in range(n_groups):
                prec = n_l[i] * inv_delta2 + inv_tau2
                mean = (n_l[i] * ybar_l[i] * inv_delta2 + mu * inv_tau2) / prec
                theta[i] = mean + zt[i] / math.sqrt(prec)
            theta_mean = sum(theta) / n_groups
            mu = theta_mean + z_mu[it] * math.sqrt(tau2 / n_groups)
            if not fix_delta:
                sse = 0.0
                for i in range(n_groups):
                    d = ybar_l[i] - theta[i]
                    sse += within_l[i] + n_l[i] * d * d
                delta2 = max(sse / c_delta[it], VARIANCE_FLOOR)
            if not fix_tau:
                ss = 0.0
                for i in range(n_groups):
                    d = theta[i] - mu
                    ss += d * d
                tau2 = ss / c_tau[it]
                while tau2 > tau_cap * tau_cap:
                    tau2 = ss / gen.chisquare(tau_df)
                tau2 = max(tau2, VARIANCE_FLOOR)
            step = done + it + 1
            if step > burn_in and (step - burn_in) % thin == 0:
                row = out[k]
                row[0] = mu
                row[1] = math.sqrt(tau2)
                row[2] = math.sqrt(delta2)
                row[3:] = theta
                k += 1
        done += m
    return out


def gibbs_run(y, *, chains: int = 3, iterations: int = 1_000_000, burn_in: int = 800_000,
              thin: int = 10, seed: int = 2021, tau_cap: float = 50.0, group_names=None,
              fixed: dict | None = None) -> PosteriorSamples:
    """Sample the hierarchical model; ``y`` is a list of per-group observations.

    A 2-D array is read row-wise (one row per group).  ``fixed`` may pin
    ``delta2`` and/or ``tau2`` to constants, which turns the sampler into the
    textbook conjugate cases used for validation.
    """
    groups = [np.asarray(g, dtype=float).reshape(-1) for g in y]
    if not groups or any(g.size == 0 for g in groups):
        raise ValueError("every group needs at least one observation")
    if not all(np.isfinite(g).all() for g in groups):
        raise ValueError("observations must be finite")
    if burn_in >= iterations or (iterations - burn_in) % thin:
        raise ValueError("need burn_in < iterations and (iterations - burn_in) divisible by thin")
    fixed = dict(fixed or {})
    if any(v <= 0 for v in fixed.values()) or set(fixed) - {"delta2", "tau2"}:
        raise ValueError("fixed may only pin positive delta2 / tau2")
    names = ["mu", "tau", "delta"] + [
        f"theta_{g}" for g in (group_names or range(len(groups)))]
    draws = np.stack([
        _run_chain(groups, iterations, burn_in, thin, rng.stream(seed, "gibbs", c), tau_cap, fixed)
        for c in range(chains)
    ])
    return PosteriorSamples(names, draws, iterations, burn_in, thin, seed, tau_cap, fixed)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of an (m chains, n draws) array."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("the diagnostic needs at least two chains")
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def convergence_diagnostic(samples: PosteriorSamples) -> dict:
    return {name: gelman_rubin(samples[name]) for name in samples.names}


def kde_mode(draws, bins: int = 4096) -> float:
    """Mode of a Gaussian KDE (Silverman bandwidth) of a large draw set.

    Draws are binned on a fine grid and smoothed by convolution, which is
    exact up to the bin width for the sample sizes involved.
    """
    x = np.asarray(draws, dtype=float).reshape(-1)
    lo, hi = float(x.min()), float(x.max())
    if hi - lo == 0:
        return lo
    bw = silverman_bandwidth(x)
    if bw <= 0:
        return float(np.median(x))
    lo, hi = lo - 4 * bw, hi + 4 * bw
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    half = int(math.ceil(4 * bw / width))
    offsets = np.arange(-half, half + 1) * width
    kernel = np.exp(-0.5 * (offsets / bw) ** 2)
    smooth = np.convolve(counts, kernel, mode="same")
    centers = 0.5 * (edges[1:] + edges[:-1])
    return float(centers[np.argmax(smooth)])


def summarize(samples: PosteriorSamples, threshold: float = 1.01) -> dict:
    rhat = convergence_diagnostic(samples) if samples.chains > 1 else {}
    params = {}
    for name in samples.names:
        x = samples[name].reshape(-1)
        lo, hi = np.percentile(x, [2.5, 97.5])
        params[name] = {"mode": kde_mode(x), "mean": float(x.mean()), "std": float(x.std()),
                        "ci95": [float(lo), float(hi)]}
    converged = bool(rhat) and all(v < threshold for v in rhat.values())
    return {
        "parameters": params,
        "rhat": rhat,
        "converged": converged,
        "flag": None if converged else "unconverged",
        "schedule": {"chains": samples.chains, "iterations": samples.iterations,
                     "burn_in": samples.burn_in, "thin": samples.thin,
                     "kept_per_chain": samples.kept, "seed": samples.seed},
        "priors": {"mu": "flat", "delta2": "1/delta2", "tau": f"flat on (0, {samples.tau_cap:g}]",
                   "fixed": samples.fixed},
    }


def draws_to_csv(samples: PosteriorSamples, path=None, config_hash: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_hash", "seed", "chain", "draw"] + samples.names)
    for c in range(samples.chains):
        for d in range(samples.kept):
            w.writerow([config_hash, samples.seed, c, d]
                       + [repr(float(v)) for v in samples.draws[c, d]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
