"""
Invariant suites run by ``meanfield check``.

Each suite draws its samples from numpy's PCG64 generator seeded by the
caller and returns a SuiteResult.  Functional evaluations go through the
module attributes (``functional.residual_values`` and friends) so a patched
implementation is what gets checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional, torus
from .functional import Params
from .torus import MeanZeroField, TorusGrid, random_bandlimited


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    samples: int
    worst: float  # worst observed violation (<= 0 or below tolerance means fine)
    detail: str


def _fields(grid: TorusGrid, rng, count: int, amplitude: float = 1.0) -> list[MeanZeroField]:
    return [random_bandlimited(grid, rng, kmax=4, amplitude=amplitude * rng.uniform(0.2, 3.0)) for _ in range(count)]


def _params(rng) -> Params:
    return Params(*rng.uniform(0.0, 40.0, size=2))


def jensen(grid, rng, count=100) -> SuiteResult:
    worst = max(-functional.eval_G(u) for u in _fields(grid, rng, count))
    return SuiteResult("jensen", worst <= 1e-12, count, worst, "G(u) >= -1e-12")


def convexity(grid, rng, count=100, h=1e-3) -> SuiteResult:
    worst = -math.inf
    for _ in range(count):
        u, phi = _fields(grid, rng, 2)
        g0 = functional.log_mean_exp(u.values)
        gp = functional.log_mean_exp(u.values + h * phi.values)
        gm = functional.log_mean_exp(u.values - h * phi.values)
        worst = max(worst, -(gp - 2 * g0 + gm) / h**2)
    return SuiteResult("convexity", worst <= 1e-8, count, worst, "second differences of G >= -1e-8")


def symmetry(grid, rng, count=100) -> SuiteResult:
    worst = 0.0
    for u in _fields(grid, rng, count):
        p = _params(rng)
        a = functional.eval_I(u, p).total
        b = functional.eval_I(-u, p.swapped()).total
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return SuiteResult("symmetry", worst <= 1e-12, count, worst, "I(u; l1, l2) = I(-u; l2, l1)")


def monotonicity(grid, rng, count=100) -> SuiteResult:
    worst = -math.inf
    for u in _fields(grid, rng, count):
        p = _params(rng)
        eps = rng.uniform(0.0, 5.0)
        worst = max(worst, functional.eval_I(u, p.shifted(eps)).total - functional.eval_I(u, p).total)
    return SuiteResult("monotonicity", worst <= 0.0, count, worst, "I at larger parameters is not larger")


def translation(grid, rng, count=100) -> SuiteResult:
    worst = 0.0
    for u in _fields(grid, rng, count):
        c = rng.uniform(-5.0, 5.0)
        shifted = torus.Field(grid, u.values + c)
        worst = max(worst, abs(functional.eval_G(shifted) - functional.eval_G(u) - c))
    return SuiteResult("translation", worst <= 1e-12, count, worst, "G(u + c) = G(u) + c")


def eigenvalue(grid, rng=None) -> SuiteResult:
    mu = torus.first_eigenvalue(grid)
    err = abs(mu - 4 * math.pi**2) / (4 * math.pi**2)
    ok = err <= 1e-10 and torus.eigenvalue_assumption_holds(grid)
    return SuiteResult("eigenvalue", ok, 1, err, "mu1 = 4 pi^2 and 8 pi < mu1 < 16 pi")


def poincare(grid, rng, count=100) -> SuiteResult:
    mu = torus.first_eigenvalue(grid)
    worst = -math.inf
    for u in _fields(grid, rng, count):
        worst = max(worst, mu * torus.integrate(u * u) - torus.h1_norm_sq(u))
    return SuiteResult("poincare", worst <= 1e-8, count, worst, "mu1 * int u^2 <= int |grad u|^2")


def gradient(grid, rng, count=20, h=1e-5) -> SuiteResult:
    worst = 0.0
    for _ in range(count):
        u, phi = _fields(grid, rng, 2)
        p = _params(rng)
        r = functional.residual_values(grid, u.values, p)
        exact = float(np.mean(r * phi.values))
        up = functional.energy_values(grid, u.values + h * phi.values, p)
        um = functional.energy_values(grid, u.values - h * phi.values, p)
        fd = (up - um) / (2 * h)
        worst = max(worst, abs(fd - exact) / (1.0 + abs(exact)))
    return SuiteResult("gradient", worst <= 1e-6, count, worst, "residual vs central differences of I")


SUITES = {
    "jensen": jensen,
    "convexity": convexity,
    "symmetry": symmetry,
    "monotonicity": monotonicity,
    "translation": translation,
    "eigenvalue": eigenvalue,
    "poincare": poincare,
    "gradient": gradient,
}


def run_all(grid: TorusGrid, seed: int) -> list[SuiteResult]:
    """Every suite, each with its own generator derived from ``seed``."""
    out = []
    for k, (name, suite) in enumerate(SUITES.items()):
        rng = np.random.default_rng([seed, k])
        out.append(suite(grid, rng))
    return out
