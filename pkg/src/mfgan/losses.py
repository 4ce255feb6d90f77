"""Residual and penalty losses for ergodic and finite-horizon MFG systems.

Sign convention for the ergodic system (the unique one annihilated by the
explicit solution of the logarithmic-coupling problem, with eps = 1/2):

    r_u(x) = eps*Lap(u) + |grad u|^2/2 - tilde_f(x) - f(x, m(x)) - Hbar
    r_m(x) = eps*Lap(m) - div(m grad u)
           = eps*Lap(m) - grad(m).grad(u) - m*Lap(u)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import HyperDual, Tape, Var
from .networks import NetworkGraph


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    beta_val: float = 1.0    # terminal / mean-zero penalty weight
    beta_mf: float = 0.0     # initial / normalization penalty weight
    beta_per: float = 0.0    # periodicity penalty weight

    def __post_init__(self):
        if min(self.beta_val, self.beta_mf, self.beta_per) < 0:
            raise ValueError("loss weights must be nonnegative")


def _lift_axes(tape, x_vars, fn, extra=None):
    """Per-axis hyper-dual lifts of fn; returns (value, d1 list, d2 list)."""
    d = len(x_vars)
    zero = Var(tape, tape.const(0.0))
    one = Var(tape, tape.const(1.0))
    value = None
    d1, d2 = [], []
    for i in range(d):
        xs = [HyperDual(xv, one if j == i else zero, zero)
              for j, xv in enumerate(x_vars)]
        out = fn(xs) if extra is None else fn(extra, xs)
        if isinstance(out, Var):
            out = HyperDual(out, zero, zero)
        if value is None:
            value = out.v
        d1.append(out.d1)
        d2.append(out.d2)
    return value, d1, d2


def _point_vars(tape, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return [Var(tape, tape.leaf(x[:, j])) for j in range(x.shape[1])], x


def ergodic_hjb_residual(problem, u_fn, m_fn, hbar, x, tape=None):
    """r_u(x) as a graph node; differentiable in everything it touches."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tape is None:
        tape = Tape(lanes=x.shape[0])
    x_vars, _ = _point_vars(tape, x)
    _, du, d2u = _lift_axes(tape, x_vars, u_fn)
    lap_u = sum(d2u[1:], d2u[0])
    grad_sq = sum((ad.square(g) for g in du[1:]), ad.square(du[0]))
    m_val = m_fn(x_vars)
    return (problem.epsilon * lap_u + 0.5 * grad_sq
            - problem.tilde_f(x_vars) - problem.coupling(x_vars, m_val) - hbar)


def ergodic_fp_residual(problem, u_fn, m_fn, x, tape=None):
    """r_m(x) as a graph node."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tape is None:
        tape = Tape(lanes=x.shape[0])
    x_vars, _ = _point_vars(tape, x)
    _, du, d2u = _lift_axes(tape, x_vars, u_fn)
    m_val, dm, d2m = _lift_axes(tape, x_vars, m_fn)
    lap_u = sum(d2u[1:], d2u[0])
    lap_m = sum(d2m[1:], d2m[0])
    advect = sum((a * b for a, b in zip(dm[1:], du[1:])), dm[0] * du[0])
    return problem.epsilon * lap_m - advect - m_val * lap_u


def _fh_lift_time(tape, s_var, x_vars, fn):
    zero = Var(tape, tape.const(0.0))
    one = Var(tape, tape.const(1.0))
    s_hd = HyperDual(s_var, one, zero)
    xs = [HyperDual(xv, zero, zero) for xv in x_vars]
    out = fn(s_hd, xs)
    if isinstance(out, Var):
        out = HyperDual(out, zero, zero)
    return out


def _fh_vars(tape, s, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = np.broadcast_to(np.asarray(s, dtype=float), (x.shape[0],))
    s_var = Var(tape, tape.leaf(s))
    x_vars = [Var(tape, tape.leaf(x[:, j])) for j in range(x.shape[1])]
    return s_var, x_vars, x


def fh_hjb_residual(problem, u_fn, m_fn, s, x, tape=None):
    """d_s u + (sigma^2/2) Lap u + H(s, x, grad u) (+ optional forcing)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tape is None:
        tape = Tape(lanes=x.shape[0])
    s_var, x_vars, _ = _fh_vars(tape, s, x)
    ds_u = _fh_lift_time(tape, s_var, x_vars, u_fn).d1
    _, du, d2u = _lift_axes(tape, x_vars, lambda xs: u_fn(s_var, xs))
    lap_u = sum(d2u[1:], d2u[0])
    m_val = m_fn(s_var, x_vars)
    h = problem.hamiltonian(s_var, x_vars, du, m_val)
    r = ds_u + 0.5 * problem.sigma ** 2 * lap_u + h
    if problem.hjb_source is not None:
        r = r + problem.hjb_source(s_var, x_vars)
    return r


def fh_fp_residual(problem, u_fn, m_fn, s, x, tape=None):
    """d_s m + div(m b(alpha*)) - (sigma^2/2) Lap m (+ optional forcing)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tape is None:
        tape = Tape(lanes=x.shape[0])
    s_var, x_vars, _ = _fh_vars(tape, s, x)
    if problem.control_divergence is None:
        raise ValueError("problem supplies no control divergence for the FP residual")
    ds_m = _fh_lift_time(tape, s_var, x_vars, m_fn).d1
    _, du, d2u = _lift_axes(tape, x_vars, lambda xs: u_fn(s_var, xs))
    m_val, dm, d2m = _lift_axes(tape, x_vars, lambda xs: m_fn(s_var, xs))
    lap_m = sum(d2m[1:], d2m[0])
    div_mb = problem.control_divergence(s_var, x_vars, m_val, dm, du, d2u)
    r = ds_m + div_mb - 0.5 * problem.sigma ** 2 * lap_m
    if problem.fp_source is not None:
        r = r + problem.fp_source(s_var, x_vars)
    return r


def periodicity_pairs(d):
    """Distinct corner pairs (axis, z1, z2) with z2 = z1 flipped along axis."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if d > 12:
        raise ValueError("corner pair set explodes beyond dimension 12")
    pairs = []
    seen = set()
    for axis in range(d):
        for corner in itertools.product((0.0, 1.0), repeat=d):
            flipped = tuple(1.0 - c if j == axis else c
                            for j, c in enumerate(corner))
            key = (axis,) + tuple(sorted((corner, flipped)))
            if key in seen:
                continue
            seen.add(key)
            pairs.append((axis, corner, flipped))
    return pairs


@dataclass
class LossBreakdown:
    l_val: float
    l_mf: float
    l_hjb: float
    l_fp: float
    pen_val: float = 0.0     # mean-zero / terminal penalty (unweighted)
    pen_mf: float = 0.0      # normalization / initial penalty (unweighted)
    pen_per_u: float = 0.0
    pen_per_m: float = 0.0


def _corner_penalties(u_fn, m_fn, d):
    pairs = periodicity_pairs(d)
    corners = sorted({p[1] for p in pairs} | {p[2] for p in pairs})
    index = {c: i for i, c in enumerate(corners)}
    pts = np.asarray(corners, dtype=float)
    tape = Tape(lanes=pts.shape[0])
    x_vars, _ = _point_vars(tape, pts)
    u_vals = u_fn(x_vars).values
    m_vals = m_fn(x_vars).values
    pen_u = pen_m = 0.0
    for _, a, b in pairs:
        ia, ib = index[a], index[b]
        pen_u += (u_vals[ia] - u_vals[ib]) ** 2
        pen_m += (m_vals[ia] - m_vals[ib]) ** 2
    return float(pen_u), float(pen_m)


def empirical_losses(problem, u_fn, m_fn, batch, weights, hbar=0.0):
    """Mean-of-squares residual losses plus weighted penalties over a batch.

    For ergodic problems `batch` is an (B, d) array of points; for
    finite-horizon problems it is a pair (s, x) of arrays.
    """
    if problem.flavor == "ergodic":
        x = np.atleast_2d(np.asarray(batch, dtype=float))
        if x.size == 0:
            raise EmptyBatch("empirical loss needs at least one sample")
        tape = Tape(lanes=x.shape[0])
        r_u = ergodic_hjb_residual(problem, u_fn, m_fn, hbar, x, tape=tape)
        r_m = ergodic_fp_residual(problem, u_fn, m_fn, x, tape=tape)
        x_vars, _ = _point_vars(tape, x)
        u_vals = u_fn(x_vars).values
        m_vals = m_fn(x_vars).values
        l_hjb = float(np.mean(r_u.values ** 2))
        l_fp = float(np.mean(r_m.values ** 2))
        pen_val = float(np.mean(u_vals)) ** 2
        pen_mf = (float(np.mean(m_vals)) - 1.0) ** 2
        pen_per_u = pen_per_m = 0.0
        if weights.beta_per > 0:
            pen_per_u, pen_per_m = _corner_penalties(u_fn, m_fn, problem.d)
        return LossBreakdown(
            l_val=l_hjb + weights.beta_val * pen_val + weights.beta_per * pen_per_u,
            l_mf=l_fp + weights.beta_mf * pen_mf + weights.beta_per * pen_per_m,
            l_hjb=l_hjb, l_fp=l_fp, pen_val=pen_val, pen_mf=pen_mf,
            pen_per_u=pen_per_u, pen_per_m=pen_per_m)

    s, x = batch
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = np.broadcast_to(np.asarray(s, dtype=float), (x.shape[0],))
    if x.size == 0:
        raise EmptyBatch("empirical loss needs at least one sample")
    tape = Tape(lanes=x.shape[0])
    r_u = fh_hjb_residual(problem, u_fn, m_fn, s, x, tape=tape)
    r_m = fh_fp_residual(problem, u_fn, m_fn, s, x, tape=tape)
    l_hjb = float(np.mean(r_u.values ** 2))
    l_fp = float(np.mean(r_m.values ** 2))
    # terminal penalty at s = T, initial penalty at s = 0
    t_tape = Tape(lanes=x.shape[0])
    sT, xv, _ = _fh_vars(t_tape, np.full(x.shape[0], problem.T), x)
    uT = u_fn(sT, xv).values
    if problem.g is not None:
        mT = m_fn(sT, xv).values
        uT = uT - problem.g(x, mT)
    pen_val = float(np.mean(uT ** 2))
    pen_mf = 0.0
    if problem.m0 is not None:
        s0, xv0, _ = _fh_vars(t_tape, np.zeros(x.shape[0]), x)
        m0_vals = m_fn(s0, xv0).values
        pen_mf = float(np.mean((m0_vals - problem.m0(x)) ** 2))
    return LossBreakdown(
        l_val=l_hjb + weights.beta_val * pen_val,
        l_mf=l_fp + weights.beta_mf * pen_mf,
        l_hjb=l_hjb, l_fp=l_fp, pen_val=pen_val, pen_mf=pen_mf)


class ErgodicLossGraph:
    """Compiled residual-loss graphs for one ergodic problem.

    Builds the tapes once (topology is fixed by problem, architectures and
    batch size); training then only rewrites leaf rows and replays.  Value
    and density networks share the tapes; gradients are taken with one
    reverse sweep per loss, with the density-normalizer chain handled
    through a separate quadrature-grid tape.
    """

    def __init__(self, problem, u_arch, f_arch, batch_size, weights,
                 density_mode="normalized_grid", grid_n=None):
        if batch_size < 1:
            raise EmptyBatch("batch size must be >= 1")
        if density_mode not in ("normalized_grid", "penalty"):
            raise ValueError(f"unknown density mode {density_mode!r}")
        if density_mode == "normalized_grid" and problem.d > 2:
            raise ValueError("normalized_grid density requires dimension <= 2")
        self.problem = problem
        self.weights = weights
        self.batch_size = int(batch_size)
        self.density_mode = density_mode
        d = problem.d

        tape = Tape(lanes=self.batch_size)
        self.tape = tape
        self.x_leaves = [tape.leaf(0.5) for _ in range(d)]
        x_vars = [Var(tape, nid) for nid in self.x_leaves]
        self.u_net = NetworkGraph(tape, u_arch)
        self.f_net = NetworkGraph(tape, f_arch)
        self.hbar_leaf = tape.leaf(0.0)
        self.lnz_leaf = tape.leaf(0.0)
        lnz = Var(tape, self.lnz_leaf)
        hbar = Var(tape, self.hbar_leaf)

        zero = Var(tape, tape.const(0.0))
        one = Var(tape, tape.const(1.0))
        u_val = m_val = None
        du, d2u, dm, d2m = [], [], [], []
        for i in range(d):
            xs = [HyperDual(xv, one if j == i else zero, zero)
                  for j, xv in enumerate(x_vars)]
            hu = self.u_net(xs)
            hf = self.f_net(xs)
            hm = ad.exp(hf - HyperDual(lnz, zero, zero))
            if u_val is None:
                u_val, m_val = hu.v, hm.v
            du.append(hu.d1)
            d2u.append(hu.d2)
            dm.append(hm.d1)
            d2m.append(hm.d2)
        lap_u = sum(d2u[1:], d2u[0])
        lap_m = sum(d2m[1:], d2m[0])
        grad_sq = sum((ad.square(g) for g in du[1:]), ad.square(du[0]))
        advect = sum((a * b for a, b in zip(dm[1:], du[1:])), dm[0] * du[0])
        r_u = (problem.epsilon * lap_u + 0.5 * grad_sq
               - problem.tilde_f(x_vars) - problem.coupling(x_vars, m_val) - hbar)
        r_m = problem.epsilon * lap_m - advect - m_val * lap_u
        self.r_u, self.r_m = r_u.nid, r_m.nid
        self.u_val, self.m_val = u_val.nid, m_val.nid

        # periodicity corner tape
        self.corner_tape = None
        if weights.beta_per > 0:
            pairs = periodicity_pairs(d)
            corners = sorted({p[1] for p in pairs} | {p[2] for p in pairs})
            index = {c: i for i, c in enumerate(corners)}
            self.corner_pairs = [(index[a], index[b]) for _, a, b in pairs]
            pts = np.asarray(corners, dtype=float)
            ct = Tape(lanes=pts.shape[0])
            cx = [Var(ct, ct.leaf(pts[:, j])) for j in range(d)]
            self.c_u_net = NetworkGraph(ct, u_arch)
            self.c_f_net = NetworkGraph(ct, f_arch)
            self.c_lnz_leaf = ct.leaf(0.0)
            cu = self.c_u_net(cx)
            cm = ad.exp(self.c_f_net(cx) - Var(ct, self.c_lnz_leaf))
            self.c_u, self.c_m = cu.nid, cm.nid
            self.corner_tape = ct

        # quadrature grid tape for the density normalizer
        self.grid_tape = None
        if density_mode == "normalized_grid":
            if grid_n is None:
                grid_n = 1024 if d == 1 else 64
            axes = [np.arange(grid_n) / grid_n] * d
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=-1)
            gt = Tape(lanes=pts.shape[0])
            gx = [Var(gt, gt.leaf(pts[:, j])) for j in range(d)]
            self.g_f_net = NetworkGraph(gt, f_arch)
            self.g_exp = ad.exp(self.g_f_net(gx)).nid
            self.grid_tape = gt
        self.z = 1.0
        self._z_dirty = True
        self._fwd_dirty = True

    # -- state ------------------------------------------------------------

    def set_theta(self, theta, hbar=0.0):
        self.u_net.set_values(theta)
        self.tape.set_leaf(self.hbar_leaf, float(hbar))
        if self.corner_tape is not None:
            self.c_u_net.set_values(theta)
        self._fwd_dirty = True

    def set_omega(self, omega):
        self.f_net.set_values(omega)
        if self.corner_tape is not None:
            self.c_f_net.set_values(omega)
        if self.grid_tape is not None:
            self.g_f_net.set_values(omega)
        self._z_dirty = True
        self._fwd_dirty = True

    def set_params(self, theta, omega, hbar=0.0):
        self.set_theta(theta, hbar=hbar)
        self.set_omega(omega)

    def set_batch(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape != (self.batch_size, self.problem.d):
            raise ValueError(f"batch shape {x.shape} does not match graph")
        for nid, col in zip(self.x_leaves, x.T):
            self.tape.set_leaf(nid, col)
        self._fwd_dirty = True

    def _refresh(self):
        if self._z_dirty:
            lnz = 0.0
            if self.grid_tape is not None:
                self.grid_tape.forward()
                self.z = float(np.mean(self.grid_tape.values(self.g_exp)))
                lnz = float(np.log(self.z))
            self.tape.set_leaf(self.lnz_leaf, lnz)
            if self.corner_tape is not None:
                self.corner_tape.set_leaf(self.c_lnz_leaf, lnz)
            self._z_dirty = False
        if self._fwd_dirty:
            self.tape.forward()
            if self.corner_tape is not None:
                self.corner_tape.forward()
            self._fwd_dirty = False

    # -- values -----------------------------------------------------------

    def losses(self):
        self._refresh()
        w = self.weights
        ru = self.tape.values(self.r_u)
        rm = self.tape.values(self.r_m)
        u = self.tape.values(self.u_val)
        m = self.tape.values(self.m_val)
        l_hjb = float(np.mean(ru * ru))
        l_fp = float(np.mean(rm * rm))
        pen_val = float(np.mean(u)) ** 2
        pen_mf = (float(np.mean(m)) - 1.0) ** 2
        pen_per_u = pen_per_m = 0.0
        if self.corner_tape is not None:
            cu = self.corner_tape.values(self.c_u)
            cm = self.corner_tape.values(self.c_m)
            for ia, ib in self.corner_pairs:
                pen_per_u += (cu[ia] - cu[ib]) ** 2
                pen_per_m += (cm[ia] - cm[ib]) ** 2
        return LossBreakdown(
            l_val=l_hjb + w.beta_val * pen_val + w.beta_per * pen_per_u,
            l_mf=l_fp + w.beta_mf * pen_mf + w.beta_per * pen_per_m,
            l_hjb=l_hjb, l_fp=l_fp, pen_val=pen_val, pen_mf=pen_mf,
            pen_per_u=float(pen_per_u), pen_per_m=float(pen_per_m))

    # -- gradients --------------------------------------------------------

    def grad_val(self):
        """(d L_val / d theta, d L_val / d Hbar); density side held fixed."""
        self._refresh()
        w = self.weights
        B = self.batch_size
        ru = self.tape.values(self.r_u)
        u = self.tape.values(self.u_val)
        seeds = {self.r_u: (2.0 / B) * ru,
                 self.u_val: np.full(B, w.beta_val * 2.0 * np.mean(u) / B)}
        adj = self.tape.backward(seeds)
        g_theta = self.tape.grads(adj, self.u_net.param_ids)
        g_hbar = float(adj[self.hbar_leaf].sum())
        if self.corner_tape is not None:
            cu = self.corner_tape.values(self.c_u)
            seed = np.zeros_like(cu)
            for ia, ib in self.corner_pairs:
                diff = 2.0 * w.beta_per * (cu[ia] - cu[ib])
                seed[ia] += diff
                seed[ib] -= diff
            cadj = self.corner_tape.backward({self.c_u: seed})
            g_theta += self.corner_tape.grads(cadj, self.c_u_net.param_ids)
        return g_theta, g_hbar

    def grad_mf(self):
        """d L_mf / d omega; value side held fixed."""
        self._refresh()
        w = self.weights
        B = self.batch_size
        rm = self.tape.values(self.r_m)
        m = self.tape.values(self.m_val)
        seeds = {self.r_m: (2.0 / B) * rm,
                 self.m_val: np.full(B, w.beta_mf * 2.0 * (np.mean(m) - 1.0) / B)}
        adj = self.tape.backward(seeds)
        g_omega = self.tape.grads(adj, self.f_net.param_ids)
        dl_dlnz = float(adj[self.lnz_leaf].sum())
        if self.corner_tape is not None:
            cm = self.corner_tape.values(self.c_m)
            seed = np.zeros_like(cm)
            for ia, ib in self.corner_pairs:
                diff = 2.0 * w.beta_per * (cm[ia] - cm[ib])
                seed[ia] += diff
                seed[ib] -= diff
            cadj = self.corner_tape.backward({self.c_m: seed})
            g_omega += self.corner_tape.grads(cadj, self.c_f_net.param_ids)
            dl_dlnz += float(cadj[self.c_lnz_leaf].sum())
        if self.grid_tape is not None and dl_dlnz != 0.0:
            n_grid = self.grid_tape.lanes
            gadj = self.grid_tape.backward(
                {self.g_exp: dl_dlnz / (self.z * n_grid)})
            g_omega += self.grid_tape.grads(gadj, self.g_f_net.param_ids)
        return g_omega
