import numpy as np
import pytest

import mfgan.autodiff as ad
from mfgan import networks
from mfgan.losses import (EmptyBatch, ErgodicLossGraph, LossWeights,
                          empirical_losses, ergodic_fp_residual,
                          ergodic_hjb_residual, fh_fp_residual,
                          fh_hjb_residual, periodicity_pairs)
from mfgan.problems import (ergodic_congestion_problem,
                            ergodic_explicit_problem, finite_horizon_problem)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.0, 0.0)


@pytest.mark.parametrize("d", [1, 2])
def test_residuals_vanish_at_closed_form(d):
    p = ergodic_explicit_problem(d)
    cf = p.closed_form
    x = np.random.default_rng(d).random((64, d))
    ru = ergodic_hjb_residual(p, cf.u, cf.m_expr, cf.hbar, x)
    rm = ergodic_fp_residual(p, cf.u, cf.m_expr, x)
    assert np.max(np.abs(ru.values)) < 1e-10
    assert np.max(np.abs(rm.values)) < 1e-10


def test_residuals_detect_wrong_hbar():
    p = ergodic_explicit_problem(1)
    cf = p.closed_form
    x = np.random.default_rng(0).random((16, 1))
    ru = ergodic_hjb_residual(p, cf.u, cf.m_expr, cf.hbar + 0.25, x)
    assert np.allclose(ru.values, -0.25, atol=1e-10)


def test_empirical_losses_rejects_empty_batch():
    p = ergodic_explicit_problem(1)
    cf = p.closed_form
    with pytest.raises(EmptyBatch):
        empirical_losses(p, cf.u, cf.m_expr, np.zeros((0, 1)),
                         LossWeights())


def test_periodicity_pair_count():
    for d in (1, 2, 3, 4):
        assert len(periodicity_pairs(d)) == d * 2 ** (d - 1)
    with pytest.raises(ValueError):
        periodicity_pairs(13)


def test_periodicity_pairs_are_axis_flips():
    for axis, a, b in periodicity_pairs(3):
        diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
        assert diff == [axis]
        assert {a[axis], b[axis]} == {0.0, 1.0}


def _net_fns(tape_getter, u_arch, f_arch, theta, omega, lnz):
    def u_fn(xs):
        g = networks.NetworkGraph(tape_getter(xs), u_arch)
        g.set_values(theta)
        return g(xs)

    def m_fn(xs):
        g = networks.NetworkGraph(tape_getter(xs), f_arch)
        g.set_values(omega)
        return ad.exp(g(xs) - lnz)

    return u_fn, m_fn


def _tape_of(xs):
    x0 = xs[0]
    return x0.tape if isinstance(x0, ad.Var) else x0.v.tape


def test_loss_graph_matches_functional_evaluation():
    # same parameters, batch and normalizer through both code paths
    p = ergodic_explicit_problem(1)
    u_arch = networks.dgm_architecture(1, 4, 1, "tanh")
    f_arch = networks.dgm_architecture(1, 4, 1, "sigmoid")
    rng = np.random.default_rng(7)
    theta = networks.init_values(u_arch, rng)
    omega = networks.init_values(f_arch, rng)
    hbar = 0.45
    w = LossWeights(1.0, 2.0, 0.0)
    grid_n = 256

    graph = ErgodicLossGraph(p, u_arch, f_arch, 16, w,
                             density_mode="normalized_grid", grid_n=grid_n)
    x = rng.random((16, 1))
    graph.set_params(theta, omega, hbar)
    graph.set_batch(x)
    br_graph = graph.losses()

    f_params = networks.NetworkParams(f_arch, omega)
    g = networks.torus_grid_points(1, grid_n)
    lnz = float(np.log(np.mean(np.exp(networks.network_forward(f_params, g)))))
    u_fn, m_fn = _net_fns(_tape_of, u_arch, f_arch, theta, omega, lnz)
    br_fn = empirical_losses(p, u_fn, m_fn, x, w, hbar=hbar)

    assert br_graph.l_hjb == pytest.approx(br_fn.l_hjb, rel=1e-9)
    assert br_graph.l_fp == pytest.approx(br_fn.l_fp, rel=1e-9)
    assert br_graph.pen_val == pytest.approx(br_fn.pen_val, rel=1e-9, abs=1e-14)
    assert br_graph.pen_mf == pytest.approx(br_fn.pen_mf, rel=1e-9, abs=1e-14)
    assert br_graph.l_val == pytest.approx(br_fn.l_val, rel=1e-9)
    assert br_graph.l_mf == pytest.approx(br_fn.l_mf, rel=1e-9)


def test_loss_graph_gradients_match_fd():
    p = ergodic_congestion_problem(1)
    u_arch = networks.dgm_architecture(1, 3, 1, "tanh")
    f_arch = networks.dgm_architecture(1, 3, 1, "tanh")
    rng = np.random.default_rng(11)
    theta = networks.init_values(u_arch, rng)
    omega = networks.init_values(f_arch, rng)
    w = LossWeights(1.0, 10.0, 2.0)
    graph = ErgodicLossGraph(p, u_arch, f_arch, 4, w, density_mode="penalty")
    x = rng.random((4, 1))
    graph.set_params(theta, omega, 0.1)
    graph.set_batch(x)
    g_theta, g_hbar = graph.grad_val()
    g_omega = graph.grad_mf()

    h = 1e-6

    def l_val(th, hb):
        graph.set_theta(th, hb)
        return graph.losses().l_val

    def l_mf(om):
        graph.set_omega(om)
        return graph.losses().l_mf

    for i in rng.choice(theta.size, size=8, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (l_val(tp, 0.1) - l_val(tm, 0.1)) / (2 * h)
        assert g_theta[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)
    graph.set_theta(theta, 0.1)
    fd_h = (l_val(theta, 0.1 + h) - l_val(theta, 0.1 - h)) / (2 * h)
    assert g_hbar == pytest.approx(fd_h, rel=1e-5, abs=1e-9)
    graph.set_theta(theta, 0.1)
    for i in rng.choice(omega.size, size=8, replace=False):
        op, om_ = omega.copy(), omega.copy()
        op[i] += h
        om_[i] -= h
        fd = (l_mf(op) - l_mf(om_)) / (2 * h)
        assert g_omega[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_loss_graph_normalizer_chain_rule():
    # gradient through ln Z: normalized-grid mode must differ from treating
    # Z as a constant
    p = ergodic_explicit_problem(1)
    u_arch = networks.dgm_architecture(1, 3, 1, "tanh")
    f_arch = networks.dgm_architecture(1, 3, 1, "sigmoid")
    rng = np.random.default_rng(13)
    theta = networks.init_values(u_arch, rng)
    omega = networks.init_values(f_arch, rng)
    graph = ErgodicLossGraph(p, u_arch, f_arch, 8, LossWeights(),
                             density_mode="normalized_grid", grid_n=128)
    graph.set_params(theta, omega, 0.0)
    x = rng.random((8, 1))
    graph.set_batch(x)
    g = graph.grad_mf()
    h = 1e-6
    for i in rng.choice(omega.size, size=6, replace=False):
        op, om_ = omega.copy(), omega.copy()
        op[i] += h
        om_[i] -= h
        graph.set_omega(op)
        lp = graph.losses().l_mf
        graph.set_omega(om_)
        lm = graph.losses().l_mf
        assert g[i] == pytest.approx((lp - lm) / (2 * h), rel=2e-4, abs=1e-8)


def test_loss_graph_batch_shape_validation():
    p = ergodic_explicit_problem(1)
    arch = networks.dgm_architecture(1, 3, 1)
    graph = ErgodicLossGraph(p, arch, arch, 4, LossWeights(),
                             density_mode="penalty")
    with pytest.raises(ValueError):
        graph.set_batch(np.zeros((5, 1)))
    with pytest.raises(EmptyBatch):
        ErgodicLossGraph(p, arch, arch, 0, LossWeights())


def test_finite_horizon_residuals_on_manufactured_solution():
    sympy = pytest.importorskip("sympy")
    s, x = sympy.symbols("s x", real=True)
    T, sigma = 1.0, 0.7
    u_sym = sympy.cos(2 * sympy.pi * x) * (T - s)
    m_sym = 1 + sympy.sin(2 * sympy.pi * x) * sympy.exp(-s) / 2
    # residual pieces for drift b = alpha, quadratic control cost:
    # r_u = u_s + (sigma^2/2) u_xx - u_x^2/2 + source_u
    # r_m = m_s - (m_x u_x + m u_xx) - (sigma^2/2) m_xx + source_m
    hjb = sympy.diff(u_sym, s) + sigma ** 2 / 2 * sympy.diff(u_sym, x, 2) \
        - sympy.diff(u_sym, x) ** 2 / 2
    fp = sympy.diff(m_sym, s) \
        - (sympy.diff(m_sym, x) * sympy.diff(u_sym, x)
           + m_sym * sympy.diff(u_sym, x, 2)) \
        - sigma ** 2 / 2 * sympy.diff(m_sym, x, 2)
    src_u = sympy.lambdify((s, x), -hjb, "numpy")
    src_m = sympy.lambdify((s, x), -fp, "numpy")
    u_np = sympy.lambdify((s, x), u_sym, "numpy")
    m_np = sympy.lambdify((s, x), m_sym, "numpy")

    p = finite_horizon_problem(1, T=T, sigma=sigma)

    # sources need tape arithmetic; rebuild them from the sympy expressions
    def hjb_source(sv, xs):
        return build(-hjb, sv, xs[0])

    def fp_source(sv, xs):
        return build(-fp, sv, xs[0])

    def build(expr, sv, xv):
        expr = sympy.expand_trig(sympy.simplify(expr))
        return eval_expr(expr, sv, xv)

    def eval_expr(e, sv, xv):
        if not e.free_symbols:
            return float(e)
        if e == s:
            return sv
        if e == x:
            return xv
        if e.is_Add:
            out = eval_expr(e.args[0], sv, xv)
            for a in e.args[1:]:
                out = out + eval_expr(a, sv, xv)
            return out
        if e.is_Mul:
            out = eval_expr(e.args[0], sv, xv)
            for a in e.args[1:]:
                out = out * eval_expr(a, sv, xv)
            return out
        if e.is_Pow and e.args[1].is_Integer:
            return eval_expr(e.args[0], sv, xv) ** int(e.args[1])
        if isinstance(e, sympy.sin):
            return ad.sin(eval_expr(e.args[0], sv, xv))
        if isinstance(e, sympy.cos):
            return ad.cos(eval_expr(e.args[0], sv, xv))
        if isinstance(e, sympy.exp):
            return ad.exp(eval_expr(e.args[0], sv, xv))
        raise NotImplementedError(str(e))

    p.hjb_source = hjb_source
    p.fp_source = fp_source

    def u_fn(sv, xs):
        return ad.cos(2 * np.pi * xs[0]) * (T - sv)

    def m_fn(sv, xs):
        return 1.0 + ad.sin(2 * np.pi * xs[0]) * ad.exp(-1.0 * sv) * 0.5

    rng = np.random.default_rng(3)
    xb = rng.random((32, 1))
    sb = rng.random(32) * T
    ru = fh_hjb_residual(p, u_fn, m_fn, sb, xb)
    rm = fh_fp_residual(p, u_fn, m_fn, sb, xb)
    assert np.max(np.abs(ru.values)) < 1e-9
    assert np.max(np.abs(rm.values)) < 1e-9
    # sanity: the manufactured sources came from the same fields
    assert np.allclose(u_np(sb, xb[:, 0]),
                       np.cos(2 * np.pi * xb[:, 0]) * (T - sb))
    assert np.allclose(m_np(sb, xb[:, 0]),
                       1 + np.sin(2 * np.pi * xb[:, 0]) * np.exp(-sb) / 2)


def test_fh_fp_residual_requires_control_divergence():
    p = finite_horizon_problem(1, T=1.0, sigma=1.0, f="entropy",
                               hamiltonian=lambda s, xs, pp, m: 0.0,
                               alpha_star=lambda s, xs, pp, m: [0.0])
    with pytest.raises(ValueError):
        fh_fp_residual(p, lambda s, xs: xs[0], lambda s, xs: xs[0],
                       np.array([0.5]), np.array([[0.5]]))


def test_empirical_losses_finite_horizon_penalties():
    p = finite_horizon_problem(1, T=1.0, sigma=1.0,
                               m0=lambda x: np.ones(x.shape[0]))

    def u_fn(sv, xs):
        return (1.0 - sv) * 0.3  # u(T, x) = 0

    def m_fn(sv, xs):
        return 1.0 + 0.0 * xs[0]

    batch = (np.array([0.2, 0.8]), np.array([[0.1], [0.9]]))
    br = empirical_losses(p, u_fn, m_fn, batch, LossWeights(1.0, 1.0))
    assert br.pen_val == pytest.approx(0.0, abs=1e-14)
    assert br.pen_mf == pytest.approx(0.0, abs=1e-14)
