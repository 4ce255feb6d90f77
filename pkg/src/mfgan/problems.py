"""Mean-field game problem definitions.

A problem binds domain dimension, diffusion, running-cost pieces, the
mean-field coupling, and (when available) the closed-form solution.  Cost
pieces are written against the generic scalar algebra in `autodiff`, so the
same definition serves numpy oracles and tape-built residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

TWO_PI = 2.0 * np.pi
PI2 = np.pi ** 2


class MissingHamiltonian(ValueError):
    """No closed-form Hamiltonian minimizer available and none supplied."""


@dataclass
class ClosedFormSolution:
    """Callable closed forms; `u` and `alpha` also accept algebra scalars."""

    u: object                    # u(xs) -> scalar
    m: object                    # m(x ndarray) -> ndarray (normalized)
    hbar: float
    alpha: object                # alpha(x ndarray) -> ndarray
    log_z: float = 0.0           # ln of the density normalizer exp(2u)
    m_expr: object = None        # m as an algebra-scalar builder, m_expr(xs)


@dataclass
class MFGProblem:
    d: int
    flavor: str                          # "ergodic" | "finite_horizon"
    name: str = ""
    epsilon: float = 0.5                 # ergodic diffusion
    tilde_f: object = None               # tilde_f(xs) -> scalar
    coupling: object = None              # f(xs, m) -> scalar
    closed_form: ClosedFormSolution = None
    # finite-horizon data
    T: float = None
    sigma: float = None
    m0: object = None                    # initial density m0(x)
    g: object = None                     # terminal cost g(x, m); None means 0
    hamiltonian: object = None           # H(s, xs, grad_u list, m) -> scalar
    alpha_star: object = None            # alpha*(s, xs, grad_u list, m) -> list
    hjb_source: object = None            # extra forcing added to the HJB residual
    fp_source: object = None             # extra forcing added to the FP residual
    # div(m b) at the optimal control, from per-axis derivative data:
    # control_divergence(s, xs, m, dm, du, d2u_diag) -> scalar
    control_divergence: object = None

    def __post_init__(self):
        if self.flavor == "ergodic":
            if self.T is not None or self.m0 is not None or self.g is not None:
                raise ValueError("ergodic problems carry no horizon, m0, or g")
        elif self.flavor == "finite_horizon":
            if self.T is None or self.T <= 0 or self.sigma is None or self.sigma <= 0:
                raise ValueError("finite-horizon problems need T > 0 and sigma > 0")
        else:
            raise ValueError(f"unknown flavor {self.flavor!r}")


def _sum_sin(xs):
    total = 0.0
    for x in xs:
        total = total + ad.sin(TWO_PI * x)
    return total


def ergodic_explicit_problem(d):
    """Torus MFG with logarithmic coupling and a known closed-form solution."""
    if d < 1:
        raise ValueError("dimension must be >= 1")

    def tilde_f(xs):
        total = 0.0
        for x in xs:
            s = ad.sin(TWO_PI * x)
            c = ad.cos(TWO_PI * x)
            total = total + (2.0 * PI2) * (ad.square(c) - s) - 2.0 * s
        return total

    def coupling(xs, m):
        return ad.ln(m)

    def u_star(xs):
        return _sum_sin(xs)

    # normalizer of exp(2u*) by dense torus quadrature; separable across axes
    n = 4096
    grid = np.arange(n) / n
    z1 = np.mean(np.exp(2.0 * np.sin(TWO_PI * grid)))
    z = z1 ** d
    hbar = float(np.log(z))

    def m_star(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.exp(2.0 * np.sin(TWO_PI * x).sum(axis=-1)) / z

    def alpha_star(x):
        x = np.asarray(x, dtype=float)
        return TWO_PI * np.cos(TWO_PI * x)

    log_z = float(np.log(z))

    def m_expr(xs):
        return ad.exp(2.0 * u_star(xs) - log_z)

    closed = ClosedFormSolution(u=u_star, m=m_star, hbar=hbar,
                                alpha=alpha_star, log_z=log_z, m_expr=m_expr)
    return MFGProblem(d=d, flavor="ergodic", name="ergodic_explicit",
                      epsilon=0.5, tilde_f=tilde_f, coupling=coupling,
                      closed_form=closed)


def ergodic_congestion_problem(d):
    """Torus MFG with quadratic congestion coupling; no closed form."""
    if d < 1:
        raise ValueError("dimension must be >= 1")

    def tilde_f(xs):
        total = 0.0
        for x in xs:
            total = total + 0.5 * (ad.sin(TWO_PI * x) + ad.cos(TWO_PI * x))
        return total

    def coupling(xs, m):
        return ad.square(m) + 1.0

    return MFGProblem(d=d, flavor="ergodic", name="ergodic_congestion",
                      epsilon=0.5, tilde_f=tilde_f, coupling=coupling)


def finite_horizon_problem(d, T, sigma, b="alpha", f="quadratic", g=None,
                           m0=None, potential=None, hamiltonian=None,
                           alpha_star=None, control_divergence=None,
                           hjb_source=None, fp_source=None,
                           name="finite_horizon_custom"):
    """Generic finite-horizon container.

    With drift b = alpha and control cost |alpha|^2/2 (plus an optional
    additive potential c(s, x, m)), the Hamiltonian minimization is closed
    form: H = -|p|^2/2 + c, alpha* = -p.  Anything else requires an explicit
    `hamiltonian` (and `alpha_star`).
    """
    if hamiltonian is None:
        if b == "alpha" and f == "quadratic":
            def hamiltonian(s, xs, p, m):
                h = 0.0
                for pi in p:
                    h = h - 0.5 * ad.square(pi)
                if potential is not None:
                    h = h + potential(s, xs, m)
                return h

            def alpha_star(s, xs, p, m):
                return [-pi for pi in p]

            def control_divergence(s, xs, m, dm, du, d2u_diag):
                # div(m alpha*) with alpha* = -grad u
                total = 0.0
                for dmi, dui, d2ui in zip(dm, du, d2u_diag):
                    total = total - dmi * dui - m * d2ui
                return total
        else:
            raise MissingHamiltonian(
                "no closed-form minimizer for the given drift/cost; "
                "supply hamiltonian= and alpha_star=")
    elif alpha_star is None:
        raise MissingHamiltonian("custom hamiltonian requires alpha_star")
    return MFGProblem(d=d, flavor="finite_horizon", name=name, T=float(T),
                      sigma=float(sigma), m0=m0, g=g, hamiltonian=hamiltonian,
                      alpha_star=alpha_star, control_divergence=control_divergence,
                      hjb_source=hjb_source, fp_source=fp_source)


PROBLEMS = {
    "ergodic_explicit": ergodic_explicit_problem,
    "ergodic_congestion": ergodic_congestion_problem,
}


def problem_by_name(name, d):
    try:
        return PROBLEMS[name](d)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choices: {sorted(PROBLEMS)}")
