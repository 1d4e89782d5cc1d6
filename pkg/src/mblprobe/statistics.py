"""Ensemble reductions: disorder curves, fitted distributions, transition peaks.

The spread of an equilibrium value over disorder realizations is the
population standard deviation (divide by R, not R - 1).  Initial-state
averages are pointwise means of the per-state mean and spread curves.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .table import EnsembleTable

DEFAULT_QUANTITIES = ("C", "S", "D")


class InsufficientDataError(ValueError):
    pass


class DegeneratePeakError(ValueError):
    pass


@dataclass
class DisorderCurve:
    h: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_eff: np.ndarray
    quantity: str = ""
    state: int | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        self.n_eff = np.asarray(self.n_eff, dtype=np.int64)
        if not self.h.shape == self.mean.shape == self.std.shape == self.n_eff.shape:
            raise ValueError("curve arrays must share one shape")
        if np.any(self.std[np.isfinite(self.std)] < 0):
            raise ValueError("spread must be non-negative")

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(x) else float(x) for x in a]
        return {"quantity": self.quantity, "state": self.state, "h": self.h.tolist(),
                "mean": clean(self.mean), "std": clean(self.std), "n_eff": self.n_eff.tolist()}


def population_std(values) -> float:
    """sqrt(sum (x - mean)^2 / R), computed in two passes."""
    x = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def disorder_curve(table: EnsembleTable, quantity: str, state: int,
                   min_realizations: int = 10) -> DisorderCurve:
    """Mean and spread of Q_eq over realizations at every disorder point.

    A point with fewer than ``min(min_realizations, planned R)`` usable
    cells (and never fewer than 2) is reported as NaN.
    """
    planned = len(table.realizations)
    need = max(2, min(min_realizations, planned))
    n = table.h_grid.size
    mean, std, count = np.full(n, np.nan), np.full(n, np.nan), np.zeros(n, dtype=np.int64)
    for hi in range(n):
        v = table.values(quantity, state, hi)
        count[hi] = v.size
        if v.size >= need:
            mean[hi] = v.mean()
            std[hi] = population_std(v)
    return DisorderCurve(table.h_grid.copy(), mean, std, count, quantity, state)


def average_over_states(curves) -> DisorderCurve:
    """Pointwise average of per-state mean and spread curves.

    Points missing for some states average over the states that have them.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to average")
    h = curves[0].h
    for c in curves[1:]:
        if c.h.shape != h.shape or not np.allclose(c.h, h, rtol=0, atol=1e-12):
            raise ValueError("curves are defined on different disorder grids")
    means = np.vstack([c.mean for c in curves])
    stds = np.vstack([c.std for c in curves])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(means, axis=0)
        std = np.nanmean(stds, axis=0)
    n_eff = np.vstack([c.n_eff for c in curves]).min(axis=0)
    qs = {c.quantity for c in curves}
    return DisorderCurve(h.copy(), mean, std, n_eff, qs.pop() if len(qs) == 1 else "", None)


def state_curves(table: EnsembleTable, quantity: str, min_realizations: int = 10) -> list:
    return [disorder_curve(table, quantity, s, min_realizations) for s in table.states]


# -- distributions ---------------------------------------------------------


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    n = x.size
    sigma = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sigma, (q75 - q25) / 1.349) if q75 > q25 else sigma
    return 0.9 * spread * n ** (-0.2)


def kde_bandwidth(samples) -> float:
    """Silverman's rule with a floor of 1% of the sample range.

    A degenerate sample (zero range) falls back to an absolute floor so the
    density stays finite.
    """
    x = np.asarray(samples, dtype=float)
    rng_ = float(np.ptp(x))
    return max(silverman_bandwidth(x), 0.01 * rng_, 1e-3)


def gaussian_kde(samples, grid, bandwidth: float) -> np.ndarray:
    x = np.asarray(samples, dtype=float)[:, None]
    z = (np.asarray(grid, dtype=float)[None, :] - x) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=0) / (x.size * bandwidth * np.sqrt(2 * np.pi))


def _normalize(grid, density) -> np.ndarray:
    area = np.trapezoid(density, grid)
    if not area > 0:
        raise InsufficientDataError("density vanishes on its grid")
    return density / area


@dataclass
class FittedDistribution:
    samples: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def cdf(self) -> np.ndarray:
        steps = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def quantile(self, q: float) -> float:
        cdf = self.cdf()
        return float(np.interp(q, cdf, self.grid))

    def iqr(self) -> float:
        return self.quantile(0.75) - self.quantile(0.25)

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def to_dict(self) -> dict:
        return {"samples": self.samples.tolist(), "bin_edges": self.bin_edges.tolist(),
                "counts": self.counts.tolist(), "grid": self.grid.tolist(),
                "density": self.density.tolist(), "bandwidth": self.bandwidth,
                "iqr": self.iqr()}


def _grid_for(samples_list, points: int) -> np.ndarray:
    lo = min(float(np.min(s)) - 5 * kde_bandwidth(s) for s in samples_list)
    hi = max(float(np.max(s)) + 5 * kde_bandwidth(s) for s in samples_list)
    return np.linspace(lo, hi, points)


def fit_distribution(samples, grid=None, points: int = 512, min_samples: int = 10,
                     bins="auto") -> FittedDistribution:
    """Histogram plus Gaussian KDE of one sample set."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    x = x[np.isfinite(x)]
    if x.size < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {x.size}")
    bw = kde_bandwidth(x)
    grid = _grid_for([x], points) if grid is None else np.asarray(grid, dtype=float)
    density = _normalize(grid, gaussian_kde(x, grid, bw))
    if np.ptp(x) > 0:
        counts, edges = np.histogram(x, bins=bins)
    else:
        counts, edges = np.array([x.size]), np.array([x[0] - bw, x[0] + bw])
    return FittedDistribution(x, edges, counts, grid, density, bw)


def fit_state_averaged(table: EnsembleTable, quantity: str, h_index: int, states=None,
                       points: int = 512, min_samples: int = 10):
    """(state-averaged distribution, per-state fits) at one disorder point.

    Every per-state density lives on a shared grid; the average density is
    their arithmetic mean.  The averaged object carries the pooled samples.
    """
    states = table.states if states is None else list(states)
    samples = [table.values(quantity, s, h_index) for s in states]
    usable = [(s, v) for s, v in zip(states, samples) if v.size >= min_samples]
    if not usable:
        raise InsufficientDataError(
            f"no state has {min_samples} usable samples for {quantity} at h_index {h_index}")
    grid = _grid_for([v for _, v in usable], points)
    fits = [fit_distribution(v, grid, min_samples=min_samples) for _, v in usable]
    pooled = np.concatenate([f.samples for f in fits])
    density = _normalize(grid, np.mean([f.density for f in fits], axis=0))
    counts, edges = np.histogram(pooled, bins="auto") if np.ptp(pooled) > 0 else \
        (np.array([pooled.size]), np.array([pooled[0] - 1e-3, pooled[0] + 1e-3]))
    avg = FittedDistribution(pooled, edges, counts, grid, density,
                             float(np.mean([f.bandwidth for f in fits])))
    return avg, dict(zip([s for s, _ in usable], fits))


# -- peaks -----------------------------------------------------------------


def find_peak(curve: DisorderCurve) -> float:
    """Disorder strength of the largest spread; ties go to the smaller h."""
    ok = np.isfinite(curve.std)
    if ok.sum() < 3:
        raise InsufficientDataError("a peak needs at least 3 usable grid points")
    h, s = curve.h[ok], curve.std[ok]
    if np.ptp(s) == 0:
        raise DegeneratePeakError("spread curve is flat; no peak")
    return float(h[s == s.max()].min())


@dataclass
class PeakTable:
    quantities: list
    states: list
    values: np.ndarray
    config_hash: str = ""
    master_seed: int = 0
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.quantities), len(self.states)):
            raise ValueError("peak matrix shape does not match its labels")

    def complete(self) -> np.ndarray:
        """Matrix restricted to states with no missing entries."""
        keep = np.all(np.isfinite(self.values), axis=0)
        return self.values[:, keep]

    def mean(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.values, axis=1)

    def std(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(self.values, axis=1)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config_hash", "master_seed", "state"] + list(self.quantities))
        for j, s in enumerate(self.states):
            w.writerow([self.config_hash, self.master_seed, s]
                       + ["" if not np.isfinite(v) else repr(float(v)) for v in self.values[:, j]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "PeakTable":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or rows[0][:3] != ["config_hash", "master_seed", "state"]:
            raise ValueError(f"{path} is not a peak table")
        quantities = rows[0][3:]
        body = rows[1:]
        values = np.array([[float(x) if x else np.nan for x in r[3:]] for r in body]).T
        return cls(quantities, [int(r[2]) for r in body], values, body[0][0], int(body[0][1]))

    def to_dict(self) -> dict:
        return {"quantities": list(self.quantities), "states": list(self.states),
                "peaks": [[None if not np.isfinite(v) else float(v) for v in row]
                          for row in self.values],
                "mean": self.mean().tolist(), "std": self.std().tolist()}


def peak_table(table: EnsembleTable, quantities=DEFAULT_QUANTITIES,
               min_realizations: int = 10) -> PeakTable:
    """Per-state transition points, one row per quantity."""
    states = table.states
    values = np.full((len(quantities), len(states)), np.nan)
    notes = []
    for i, q in enumerate(quantities):
        for j, s in enumerate(states):
            try:
                values[i, j] = find_peak(disorder_curve(table, q, s, min_realizations))
            except (InsufficientDataError, DegeneratePeakError) as exc:
                notes.append(f"{q}, state {s}: {exc}")
    return PeakTable(list(quantities), list(states), values, table.config_hash,
                     table.master_seed, notes)


def curves_to_csv(curves, path=None, config_hash: str = "", master_seed: int = 0) -> str:
    """Long-format curve table; the state column reads ``avg`` for state averages."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_hash", "master_seed", "quantity", "state", "h", "mean", "std", "n_eff"])
    for c in curves:
        state = "avg" if c.state is None else c.state
        for h, m, s, n in zip(c.h, c.mean, c.std, c.n_eff):
            w.writerow([config_hash, master_seed, c.quantity, state, repr(float(h)),
                        "" if not np.isfinite(m) else repr(float(m)),
                        "" if not np.isfinite(s) else repr(float(s)), int(n)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
