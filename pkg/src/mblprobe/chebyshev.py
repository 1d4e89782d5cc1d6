"""Chebyshev expansion of exp(-i t H) applied to a block of vectors.

Used by the sweep engine: all initial states of one disorder realization
share a Hamiltonian, and one polynomial in H serves every column.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import jv


def gershgorin_bounds(matrix) -> tuple[float, float]:
    """Rigorous spectral enclosure of a real symmetric sparse matrix."""
    m = sp.csr_matrix(matrix)
    diag = m.diagonal()
    radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
    return float((diag - radius).min()), float((diag + radius).max())


class ChebyshevPropagator:
    """exp(-i t H) X for real symmetric sparse H and complex blocks X."""

    def __init__(self, matrix, *, tol: float = 1e-12, bounds=None):
        self.matrix = sp.csr_matrix(matrix)
        lo, hi = bounds if bounds is not None else gershgorin_bounds(self.matrix)
        pad = 1e-3 * max(hi - lo, 1.0) + 1e-9
        lo, hi = lo - pad, hi + pad
        self.center = 0.5 * (hi + lo)
        self.half_width = 0.5 * (hi - lo)
        self.tol = tol
        self.matvecs = 0

    def coefficients(self, t: float) -> np.ndarray:
        z = self.half_width * t
        kmax = int(z + 12.0 * max(z, 1.0) ** (1 / 3) + 40)
        k = np.arange(kmax + 1)
        coef = jv(k, z) * (-1j) ** k
        coef[1:] *= 2.0
        mag = np.abs(coef)
        above = np.nonzero(mag > self.tol * 1e-2)[0]
        cut = int(above[-1]) + 1 if above.size else 1
        return coef[: max(cut, 1)]

    def _step(self, t_cur, t_prev):
        """2 * Hs @ t_cur - t_prev, computed in place where possible."""
        self.matvecs += t_cur.shape[1]
        y = self.matrix @ t_cur
        y -= self.center * t_cur
        y *= 2.0 / self.half_width
        y -= t_prev
        return y

    def advance(self, block, t: float) -> np.ndarray:
        """Evolve each column of ``block`` (dim x k, complex) by time t."""
        block = np.asarray(block, dtype=complex)
        squeeze = block.ndim == 1
        if squeeze:
            block = block[:, None]
        if t == 0:
            return block[:, 0].copy() if squeeze else block.copy()
        k = block.shape[1]
        coef = self.coefficients(t)
        # The recursion runs on the real block [Re X, Im X].  Coefficients
        # alternate between real (even order) and imaginary (odd order), so
        # two real accumulators suffice.
        t_prev = np.hstack([block.real, block.imag])
        acc_even = coef[0].real * t_prev
        acc_odd = np.zeros_like(t_prev)
        if coef.size > 1:
            t_cur = (self.matrix @ t_prev - self.center * t_prev) / self.half_width
            self.matvecs += t_prev.shape[1]
            acc_odd += coef[1].imag * t_cur
            for order in range(2, coef.size):
                t_prev, t_cur = t_cur, self._step(t_cur, t_prev)
                if order % 2:
                    acc_odd += coef[order].imag * t_cur
                else:
                    acc_even += coef[order].real * t_cur
        real = acc_even[:, :k] - acc_odd[:, k:]
        imag = acc_even[:, k:] + acc_odd[:, :k]
        out = (real + 1j * imag) * np.exp(-1j * self.center * t)
        return out[:, 0] if squeeze else out
