"""Alternating adversarial training of the density and value networks.

Outer loop of K iterations; within each, the density network takes N_omega
Adam steps on the mean-field loss, then the value network (plus the ergodic
constant) takes N_theta Adam steps on the value loss.  The update order is
configurable; density-first is the default.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import networks
from .autodiff import DomainError
from .losses import ErgodicLossGraph, LossWeights
from .networks import Architecture, LayerSpec
from .problems import problem_by_name


class NonFiniteLoss(RuntimeError):
    def __init__(self, message, report=None, diagnostic=None):
        super().__init__(message)
        self.report = report
        self.diagnostic = diagnostic or {}


@dataclass
class TrainConfig:
    problem: str = "ergodic_explicit"
    dim: int = 1
    outer_iters: int = 100            # K
    n_theta: int = 5
    n_omega: int = 2
    batch_g: int = 32
    batch_d: int = 32
    lr_g: float = 1e-3                # value-network (theta) rate
    lr_d: float = 1e-4                # density-network (omega) rate
    lr_decay: float = 0.0             # inverse-time decay, 0 = constant
    seed: int = 0
    log_stride: int = 100
    u_width: int = 4
    u_depth: int = 1
    u_kind: str = "dgm"
    u_activation: str = "tanh"
    f_width: int = 4
    f_depth: int = 1
    f_kind: str = "dgm"
    f_activation: str = "sigmoid"
    embedding: str = "fourier"
    density_mode: str = "normalized_grid"
    grid_n: int = 0                   # 0 = default for the dimension
    beta_val: float = 1.0
    beta_mf: float = 0.0
    beta_per: float = 0.0
    update_order: str = "density_first"
    strict_deterministic: bool = True
    eval_points: int = 256            # per axis (d <= 2), else total QMC points

    def validate(self):
        if self.outer_iters < 0 or self.n_theta < 0 or self.n_omega < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.batch_g < 1 or self.batch_d < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.update_order not in ("density_first", "value_first"):
            raise ValueError(f"unknown update order {self.update_order!r}")
        return self

    def u_arch(self):
        layers = tuple(LayerSpec(self.u_kind, self.u_width, self.u_activation)
                       for _ in range(self.u_depth))
        return Architecture(self.dim, layers, embedding=self.embedding)

    def f_arch(self):
        layers = tuple(LayerSpec(self.f_kind, self.f_width, self.f_activation)
                       for _ in range(self.f_depth))
        return Architecture(self.dim, layers, embedding=self.embedding)

    def weights(self):
        return LossWeights(self.beta_val, self.beta_mf, self.beta_per)


@dataclass
class Record:
    iteration: int
    loss_hjb: float
    loss_fp: float
    loss_pen_val: float     # weighted value-side penalties
    loss_pen_mf: float      # weighted density-side penalties
    rel_err_u: float
    rel_err_m: float
    hbar: float
    elapsed_s: float


@dataclass
class TrainingReport:
    config: TrainConfig
    records: list = field(default_factory=list)
    theta: np.ndarray = None
    omega: np.ndarray = None
    hbar: float = 0.0
    aborted: bool = False
    diagnostic: dict = field(default_factory=dict)

    def final(self):
        return self.records[-1]


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, rate):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        params -= rate * mhat / (np.sqrt(vhat) + self.eps)
        return params


def adam_step(state, params, grads, rate):
    """Functional wrapper around Adam.step for a single update."""
    return state.step(params, np.asarray(grads, dtype=float), rate)


def sample_batch(rng, d, B, flavor="ergodic", T=None):
    """Uniform collocation points: [0,1)^d, or [0,T]x[0,1)^d with time."""
    x = rng.random((B, d))
    if flavor == "ergodic":
        return x
    if T is None:
        raise ValueError("finite-horizon sampling needs T")
    s = rng.random(B) * T
    return s, x


class _Evaluator:
    """Relative l2 errors against the closed form on a fixed point set."""

    def __init__(self, problem, u_arch, f_arch, config):
        self.problem = problem
        d = problem.d
        if d <= 2:
            n = config.eval_points
            axes = [np.arange(n) / n] * d
            mesh = np.meshgrid(*axes, indexing="ij")
            self.points = np.stack([m.ravel() for m in mesh], axis=-1)
        else:
            from scipy.stats import qmc

            sampler = qmc.Sobol(d=d, scramble=True, seed=config.seed)
            self.points = sampler.random(config.eval_points)
        cf = problem.closed_form
        self.u_ref = None
        if cf is not None:
            self.u_ref = self._apply(cf.u, self.points)
            self.m_ref = cf.m(self.points)
        self.u_arch, self.f_arch = u_arch, f_arch
        self.grid_n = config.grid_n or (1024 if d == 1 else 64)
        self.density_mode = config.density_mode

    @staticmethod
    def _apply(fn, pts):
        cols = [pts[:, j] for j in range(pts.shape[1])]
        return np.asarray(fn(cols), dtype=float)

    def errors(self, theta, omega):
        if self.u_ref is None:
            return float("nan"), float("nan")
        up = networks.NetworkParams(self.u_arch, theta)
        fp = networks.NetworkParams(self.f_arch, omega)
        u_vals = networks.network_forward(up, self.points)
        f_vals = networks.network_forward(fp, self.points)
        if self.density_mode == "normalized_grid":
            g = networks.torus_grid_points(self.problem.d, self.grid_n)
            fg = networks.network_forward(fp, g)
            z = np.mean(np.exp(fg))
            m_vals = np.exp(f_vals) / z
        else:
            m_vals = np.exp(f_vals)
        err_u = np.sqrt(np.mean((u_vals - self.u_ref) ** 2)
                        / np.mean(self.u_ref ** 2))
        err_m = np.sqrt(np.mean((m_vals - self.m_ref) ** 2)
                        / np.mean(self.m_ref ** 2))
        return float(err_u), float(err_m)


def train(config, progress=None, snapshot=None):
    """Run the alternating training loop; returns a TrainingReport.

    `progress(record)` fires at every logged iteration; `snapshot(iteration,
    theta, omega, hbar)` fires alongside it for checkpoint writers.  Raises
    NonFiniteLoss (with the partial report attached) if any loss stops being
    finite.
    """
    config.validate()
    problem = problem_by_name(config.problem, config.dim)
    if problem.flavor != "ergodic":
        raise ValueError("the training loop currently supports ergodic problems")
    u_arch, f_arch = config.u_arch(), config.f_arch()
    weights = config.weights()
    rng = np.random.default_rng(config.seed)
    theta = networks.init_values(u_arch, rng)
    omega = networks.init_values(f_arch, rng)
    hbar = 0.0

    grid_n = config.grid_n or None
    kwargs = dict(weights=weights, density_mode=config.density_mode,
                  grid_n=grid_n)
    val_graph = ErgodicLossGraph(problem, u_arch, f_arch, config.batch_g, **kwargs)
    mf_graph = val_graph
    if config.batch_d != config.batch_g:
        mf_graph = ErgodicLossGraph(problem, u_arch, f_arch, config.batch_d, **kwargs)
    val_graph.set_params(theta, omega, hbar)
    if mf_graph is not val_graph:
        mf_graph.set_params(theta, omega, hbar)

    adam_theta = Adam(theta.size)
    adam_omega = Adam(omega.size)
    adam_hbar = Adam(1)
    hbar_vec = np.array([hbar])

    evaluator = _Evaluator(problem, u_arch, f_arch, config)
    monitor_rng = np.random.default_rng([config.seed, 1])
    report = TrainingReport(config=config)
    t0 = time.perf_counter()

    def monitor(iteration):
        val_graph.set_batch(sample_batch(monitor_rng, problem.d, config.batch_g))
        try:
            br = val_graph.losses()
        except DomainError as e:
            fail(f"monitoring ({e})", None)
        err_u, err_m = evaluator.errors(theta, omega)
        rec = Record(
            iteration=iteration,
            loss_hjb=br.l_hjb, loss_fp=br.l_fp,
            loss_pen_val=weights.beta_val * br.pen_val
            + weights.beta_per * br.pen_per_u,
            loss_pen_mf=weights.beta_mf * br.pen_mf
            + weights.beta_per * br.pen_per_m,
            rel_err_u=err_u, rel_err_m=err_m,
            hbar=hbar_vec[0],
            elapsed_s=time.perf_counter() - t0,
        )
        report.records.append(rec)
        if progress is not None:
            progress(rec)
        if snapshot is not None:
            snapshot(iteration, theta, omega, hbar_vec[0])
        return br

    def fail(where, breakdown):
        report.theta, report.omega = theta, omega
        report.hbar = float(hbar_vec[0])
        report.aborted = True
        report.diagnostic = {"where": where, "breakdown": asdict(breakdown)
                             if breakdown is not None else None}
        raise NonFiniteLoss(f"non-finite loss during {where}", report=report,
                            diagnostic=report.diagnostic)

    def density_steps(k):
        rate = config.lr_d / (1.0 + config.lr_decay * k)
        if config.n_omega:
            mf_graph.set_theta(theta, hbar_vec[0])  # value side frozen
        for _ in range(config.n_omega):
            mf_graph.set_omega(omega)
            mf_graph.set_batch(sample_batch(rng, problem.d, config.batch_d))
            try:
                g = mf_graph.grad_mf()
                br = mf_graph.losses()
            except DomainError as e:
                fail(f"density update ({e})", None)
            if not np.isfinite(br.l_mf) or not np.all(np.isfinite(g)):
                fail("density update", br)
            adam_omega.step(omega, g, rate)

    def value_steps(k):
        rate = config.lr_g / (1.0 + config.lr_decay * k)
        if config.n_theta:
            val_graph.set_omega(omega)  # density side frozen
        for _ in range(config.n_theta):
            val_graph.set_theta(theta, hbar_vec[0])
            val_graph.set_batch(sample_batch(rng, problem.d, config.batch_g))
            try:
                g_theta, g_hbar = val_graph.grad_val()
                br = val_graph.losses()
            except DomainError as e:
                fail(f"value update ({e})", None)
            if not np.isfinite(br.l_val) or not np.all(np.isfinite(g_theta)):
                fail("value update", br)
            adam_theta.step(theta, g_theta, rate)
            adam_hbar.step(hbar_vec, np.array([g_hbar]), rate)

    monitor(0)
    for k in range(1, config.outer_iters + 1):
        if config.update_order == "density_first":
            density_steps(k)
            value_steps(k)
        else:
            value_steps(k)
            density_steps(k)
        if config.log_stride and k % config.log_stride == 0:
            val_graph.set_theta(theta, hbar_vec[0])
            val_graph.set_omega(omega)
            monitor(k)

    report.theta, report.omega = theta, omega
    report.hbar = float(hbar_vec[0])
    return report
