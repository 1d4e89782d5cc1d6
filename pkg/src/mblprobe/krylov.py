"""Adaptive Krylov approximation of exp(-i t H) v.

Lanczos (with full reorthogonalisation) is used for Hermitian H, Arnoldi for
the non-Hermitian effective Hamiltonians of the trajectory solver.  Each
step builds a Krylov space at the current vector and then takes the largest
time step whose a-posteriori error estimate

    err(dt) = beta_m * |[exp(-i dt T_m)]_{m,0}|

stays below ``tol`` (absolute, for unit-norm vectors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class KrylovError(RuntimeError):
    """Raised when the adaptive step size collapses."""


@dataclass
class KrylovStats:
    steps: int = 0
    matvecs: int = 0
    max_error: float = 0.0


def _small_expm_hermitian(evals, evecs, dt):
    # first column of exp(-i dt T) from its eigen-decomposition
    return evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())


def _small_expm_general(hess, dt):
    return sla.expm(-1j * dt * hess)[:, 0]


class KrylovPropagator:
    """Propagates vectors under a fixed operator given as a matvec."""

    def __init__(self, matvec, dim: int, *, hermitian: bool = True,
                 tol: float = 1e-9, m_max: int = 40, check_every: int = 4,
                 min_step: float = 1e-12):
        self.matvec = matvec
        self.dim = dim
        self.hermitian = hermitian
        self.tol = tol
        self.m_max = m_max
        self.check_every = check_every
        self.min_step = min_step
        self.stats = KrylovStats()
        self._basis = np.empty((m_max + 1, dim), dtype=complex)

    def _build(self, v, dt_goal):
        """Krylov space at ``v``; stops early once ``dt_goal`` is reachable."""
        V = self._basis
        m_max = self.m_max
        T = np.zeros((m_max + 1, m_max), dtype=float if self.hermitian else complex)
        V[0] = v
        m = 0
        beta_next = 0.0
        for j in range(m_max):
            w = self.matvec(V[j])
            self.stats.matvecs += 1
            # classical Gram-Schmidt against the whole basis, repeated once
            # when cancellation is severe
            w_norm = np.linalg.norm(w)
            for _ in range(2):
                coef = (V[: j + 1] @ w.conj()).conj()
                w -= coef @ V[: j + 1]
                if self.hermitian:
                    # off-diagonals come from the norms below
                    T[j, j] += coef[j].real
                else:
                    T[: j + 1, j] += coef
                beta_next = np.linalg.norm(w)
                if beta_next > 0.7 * w_norm:
                    break
                w_norm = beta_next
            m = j + 1
            if beta_next < 1e-13:
                beta_next = 0.0
                break
            T[j + 1, j] = beta_next
            if self.hermitian and j + 1 < m_max:
                T[j, j + 1] = beta_next
            V[j + 1] = w / beta_next
            if m >= 2 and (m % self.check_every == 0 or m == m_max):
                if self._error(T, m, beta_next, dt_goal) <= self.tol:
                    break
        return T, m, beta_next

    def _error(self, T, m, beta_next, dt):
        if beta_next == 0.0:
            return 0.0
        if self.hermitian:
            evals, evecs = sla.eigh_tridiagonal(np.diag(T[:m, :m]).copy(),
                                                np.diag(T[:m, :m], 1).copy())
            col = _small_expm_hermitian(evals, evecs, dt)
        else:
            col = _small_expm_general(T[:m, :m], dt)
        return beta_next * abs(col[m - 1])

    def step(self, v, dt_goal):
        """Advance ``v`` by at most ``dt_goal``; returns (new_v, dt_taken, err)."""
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return v.copy(), dt_goal, 0.0
        T, m, beta_next = self._build(v / norm, dt_goal)
        Tm = T[:m, :m]
        if self.hermitian:
            evals, evecs = sla.eigh_tridiagonal(np.diag(Tm).copy(), np.diag(Tm, 1).copy())
            col_at = lambda dt: _small_expm_hermitian(evals, evecs, dt)  # noqa: E731
        else:
            col_at = lambda dt: _small_expm_general(Tm, dt)  # noqa: E731

        dt = dt_goal
        col = col_at(dt)
        err = beta_next * abs(col[m - 1])
        while err > self.tol:
            dt *= 0.7
            if dt < self.min_step:
                raise KrylovError(
                    f"step size collapsed below {self.min_step} "
                    f"(Krylov dim {m}, beta {beta_next:.3e}, error {err:.3e})"
                )
            col = col_at(dt)
            err = beta_next * abs(col[m - 1])
        out = norm * (col @ self._basis[:m])
        self.stats.steps += 1
        self.stats.max_error = max(self.stats.max_error, err)
        return out, dt, err

    def advance(self, v, t):
        """exp(-i t H) v for t >= 0."""
        if t < 0:
            raise ValueError("negative time step")
        remaining = float(t)
        v = np.asarray(v, dtype=complex)
        while remaining > 0.0:
            v, dt, _ = self.step(v, remaining)
            remaining -= dt
            if remaining < 1e-14 * max(1.0, t):
                break
        return v


def real_matvec(matrix):
    """Fast complex-vector product for a real sparse matrix."""
    def mv(v):
        return matrix @ v.real + 1j * (matrix @ v.imag)
    return mv
