"""Finite-sample cooperative game between a generator and a biased
discriminator, checked by brute force on discrete measures.

Everything here works with empirical measures on finite alphabets: the
closed-form optimal discriminator, the collective cost (which equals
-ln 4 + 2 JS), an exhaustive Pareto search over the probability simplex,
and a sampling demonstration that the empirical discriminator converges
to its population value.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np


class EmptySamples(ValueError):
    pass


class OutOfSupport(KeyError):
    """The discriminator is unconstrained off the union of supports."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    support: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.support) != len(self.weights):
            raise ValueError("support/weight length mismatch")
        if len(self.support) != len(set(self.support)):
            raise ValueError("duplicate support points")
        w = np.array(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    def mass(self, x):
        try:
            return self.weights[self.support.index(x)]
        except ValueError:
            return 0.0


def empirical_measure(samples):
    """Multiplicity/size weights on the distinct sample values."""
    samples = list(samples)
    if not samples:
        raise EmptySamples("need at least one sample")
    support, counts = [], {}
    for s in samples:
        if s not in counts:
            support.append(s)
            counts[s] = 0
        counts[s] += 1
    n = len(samples)
    return EmpiricalMeasure(tuple(support), tuple(counts[s] / n for s in support))


def optimal_discriminator(mu_r, mu_g, x):
    """mu_r(x) / (mu_r(x) + mu_g(x)) on the union of supports."""
    r, g = mu_r.mass(x), mu_g.mass(x)
    if r + g == 0.0:
        raise OutOfSupport(x)
    return r / (r + g)


def _xlogy(x, y):
    return 0.0 if x == 0.0 else x * np.log(y)


def collective_cost(mu_r, mu_g):
    """sum_x [mu_r(x) ln D*(x) + mu_g(x) ln(1 - D*(x))], 0 ln 0 = 0."""
    total = 0.0
    for x in set(mu_r.support) | set(mu_g.support):
        d = optimal_discriminator(mu_r, mu_g, x)
        total += _xlogy(mu_r.mass(x), d) + _xlogy(mu_g.mass(x), 1.0 - d)
    return total


def js_divergence(mu_r, mu_g):
    """Jensen-Shannon divergence, computed directly from its definition."""
    total = 0.0
    for x in set(mu_r.support) | set(mu_g.support):
        r, g = mu_r.mass(x), mu_g.mass(x)
        mid = 0.5 * (r + g)
        if r > 0:
            total += 0.5 * r * np.log(r / mid)
        if g > 0:
            total += 0.5 * g * np.log(g / mid)
    return total


def _simplex_grid(k, steps):
    """All compositions of `steps` into k nonnegative parts, as weights."""
    if k == 1:
        yield (1.0,)
        return
    for cuts in combinations(range(steps + k - 1), k - 1):
        parts = []
        prev = -1
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(steps + k - 2 - prev)
        yield tuple(p / steps for p in parts)


def verify_pareto_minimum(mu_r, resolution=0.02):
    """Exhaustively search generator measures on the simplex of support(mu_r).

    Returns a report dict; `passed` is True iff the unique grid minimizer of
    the collective cost is the grid point closest to mu_r itself.
    """
    k = len(mu_r.support)
    if k > 5:
        raise ValueError("support too large for exhaustive search (max 5)")
    steps = int(round(1.0 / resolution))
    if steps < 50 and k > 1:
        raise ValueError("resolution must be at most 1/50")
    target = np.array(mu_r.weights)

    best_cost, best_w = np.inf, None
    nearest_dist, nearest_w = np.inf, None
    for w in _simplex_grid(k, steps):
        mu_g = EmpiricalMeasure(mu_r.support, w)
        c = collective_cost(mu_r, mu_g)
        if c < best_cost:
            best_cost, best_w = c, w
        dist = np.max(np.abs(np.array(w) - target))
        if dist < nearest_dist:
            nearest_dist, nearest_w = dist, w
    gap = np.max(np.abs(np.array(best_w) - np.array(nearest_w)))
    return {
        "minimizer": best_w,
        "nearest_grid_point": nearest_w,
        "cost_at_minimizer": best_cost,
        "max_weight_gap": float(gap),
        "passed": bool(gap <= resolution + 1e-12),
    }


def convergence_demo(p_r, p_g, N, M, seed=0):
    """Sample M real and N generated points; return the sup distance between
    the empirical discriminator and its population counterpart over the
    alphabet (points missing from both empirical supports contribute 0)."""
    alphabet = sorted(set(p_r) | set(p_g))
    rng = np.random.default_rng(seed)
    pr = np.array([p_r.get(a, 0.0) for a in alphabet])
    pg = np.array([p_g.get(a, 0.0) for a in alphabet])
    draws_r = rng.choice(len(alphabet), size=M, p=pr / pr.sum())
    draws_g = rng.choice(len(alphabet), size=N, p=pg / pg.sum())
    mu_r = empirical_measure([alphabet[i] for i in draws_r])
    mu_g = empirical_measure([alphabet[i] for i in draws_g])
    worst = 0.0
    for i, a in enumerate(alphabet):
        if mu_r.mass(a) + mu_g.mass(a) == 0.0:
            continue
        d_emp = optimal_discriminator(mu_r, mu_g, a)
        d_pop = pr[i] / (pr[i] + pg[i])
        worst = max(worst, abs(d_emp - d_pop))
    return worst
