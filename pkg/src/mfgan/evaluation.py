"""Quadrature, error metrics, finite-difference checks, and an independent
1D finite-difference solver for the stationary ergodic system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var


class ZeroReference(ZeroDivisionError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs at least 2 points per axis")

    @property
    def points(self):
        axes = [np.arange(self.n) / self.n] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def weight(self):
        return self.n ** (-self.d)


def _values_on(fn, grid):
    if callable(fn):
        return np.asarray(fn(grid.points), dtype=float).ravel()
    return np.asarray(fn, dtype=float).ravel()


def quadrature_torus(fn, grid):
    """Rectangle rule on the torus; spectrally accurate for smooth periodic
    integrands."""
    return float(np.mean(_values_on(fn, grid)))


def rel_l2_error(f, g, grid):
    """sqrt(integral (f-g)^2 / integral g^2) by torus quadrature."""
    fv = _values_on(f, grid)
    gv = _values_on(g, grid)
    denom = np.mean(gv ** 2)
    if denom < 1e-300:
        raise ZeroReference("reference function vanishes on the grid")
    return float(np.sqrt(np.mean((fv - gv) ** 2) / denom))


def _eval_scalar(fn, x):
    """Evaluate an algebra-generic scalar function at points x (L, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tape = Tape(lanes=x.shape[0])
    xs = [Var(tape, tape.leaf(x[:, j])) for j in range(x.shape[1])]
    out = fn(xs)
    return out.values if isinstance(out, Var) else np.broadcast_to(out, x.shape[0])


def fd_check(fn, x, order="grad", h=1e-5):
    """Compare tape derivatives with central finite differences.

    Returns (autodiff value, finite-difference value, relative error); for
    `grad` the values are gradient vectors, for `laplacian` scalars.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    if order == "grad":
        auto = np.array([ad.directional_second(fn, x, i).first for i in range(d)])
        fd = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd[i] = (_eval_scalar(fn, x + e)[0] - _eval_scalar(fn, x - e)[0]) / (2 * h)
    elif order == "laplacian":
        auto = float(ad.laplacian(fn, x).value)
        fd = 0.0
        f0 = _eval_scalar(fn, x)[0]
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd += (_eval_scalar(fn, x + e)[0] - 2 * f0 + _eval_scalar(fn, x - e)[0]) / h ** 2
    else:
        raise ValueError(f"unknown order {order!r}")
    scale = max(np.max(np.abs(np.atleast_1d(auto))), np.max(np.abs(np.atleast_1d(fd))))
    rel = 0.0 if scale == 0 else float(
        np.max(np.abs(np.atleast_1d(auto) - np.atleast_1d(fd))) / scale)
    return auto, fd, rel


def _periodic_diff_matrices(n):
    h = 1.0 / n
    d1 = np.zeros((n, n))
    d2 = np.zeros((n, n))
    for k in range(n):
        d1[k, (k + 1) % n] = 1.0 / (2 * h)
        d1[k, (k - 1) % n] = -1.0 / (2 * h)
        d2[k, (k + 1) % n] = 1.0 / h ** 2
        d2[k, (k - 1) % n] = 1.0 / h ** 2
        d2[k, k] = -2.0 / h ** 2
    return d1, d2


def fd_reference_solver_1d(problem, n=256, damping=0.5, tol=1e-10, max_iter=500):
    """Damped fixed-point iteration on the discretized stationary system.

    Given m: Newton-solve the discrete HJB (with mean-zero constraint fixing
    Hbar); given u: solve the discrete stationary FP as a linear system with
    the unit-mass constraint.  Returns (u grid, m grid, Hbar).
    """
    if problem.flavor != "ergodic" or problem.d != 1:
        raise ValueError("reference solver handles 1D ergodic problems only")
    if n < 64:
        raise ValueError("grid too coarse; need n >= 64")
    x = np.arange(n) / n
    d1, d2 = _periodic_diff_matrices(n)
    eps = problem.epsilon
    tf = np.asarray(problem.tilde_f([x]), dtype=float)

    u = np.zeros(n)
    m = np.ones(n)
    hbar = 0.0

    def solve_hjb(m_cur, u0, h0):
        fk = np.asarray(problem.coupling([x], m_cur), dtype=float)
        u_cur, h_cur = u0.copy(), h0
        for _ in range(60):
            du = d1 @ u_cur
            res = eps * (d2 @ u_cur) + 0.5 * du ** 2 - tf - fk - h_cur
            jac = np.zeros((n + 1, n + 1))
            jac[:n, :n] = eps * d2 + du[:, None] * d1
            jac[:n, n] = -1.0
            jac[n, :n] = 1.0 / n
            rhs = np.concatenate([-res, [-np.mean(u_cur)]])
            delta = np.linalg.solve(jac, rhs)
            u_cur += delta[:n]
            h_cur += delta[n]
            if np.max(np.abs(res)) < 1e-12:
                break
        return u_cur, h_cur

    def solve_fp(u_cur):
        du = d1 @ u_cur
        a = eps * d2 - d1 @ np.diag(du)
        a[-1, :] = 1.0 / n          # unit mass replaces one (redundant) row
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        return np.linalg.solve(a, rhs)

    history = []
    for it in range(max_iter):
        u_new, hbar_new = solve_hjb(m, u, hbar)
        m_new = solve_fp(u_new)
        u_next = (1 - damping) * u + damping * u_new
        m_next = (1 - damping) * m + damping * m_new
        hbar_next = (1 - damping) * hbar + damping * hbar_new
        change = max(
            np.linalg.norm(u_next - u) / max(np.linalg.norm(u), 1e-30),
            np.linalg.norm(m_next - m) / max(np.linalg.norm(m), 1e-30),
        )
        u, m, hbar = u_next, m_next, hbar_next
        history.append(change)
        if np.any(m <= 0):
            raise NoConvergence("density went nonpositive",
                                {"iteration": it, "history": history})
        if change < tol:
            # finish with one undamped sweep so the discrete residuals are tight
            u, hbar = solve_hjb(m, u, hbar)
            m = solve_fp(u)
            return u, m, float(hbar)
    raise NoConvergence(f"no convergence after {max_iter} iterations",
                        {"history": history})
