"""
The mean field energy

    I(u) = 1/2 ∫|∇u|^2 - λ1 G(u) - λ2 G(-u),   G(u) = ln ∫ e^u

on the unit torus, with its L^2 gradient (the PDE residual), the Sobolev
gradient used for descent, and a few quantities used by the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .torus import (
    Field,
    MeanZeroField,
    TorusGrid,
    h1_norm_sq,
    integrate,
    inv_minus_laplacian,
    inv_minus_laplacian_values,
    minus_laplacian_values,
    spectral_energy_values,
)


@dataclass(frozen=True)
class Params:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {val!r}")
        object.__setattr__(self, "lambda1", float(self.lambda1))
        object.__setattr__(self, "lambda2", float(self.lambda2))

    def swapped(self) -> "Params":
        return Params(self.lambda2, self.lambda1)

    def shifted(self, eps: float) -> "Params":
        return Params(self.lambda1 + eps, self.lambda2 + eps)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    g_plus: float
    g_minus: float
    total: float


def log_mean_exp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + math.log(float(np.mean(np.exp(values - m))))


def density(values: np.ndarray) -> np.ndarray:
    """e^u / ∫e^u, computed without overflow."""
    w = np.exp(values - np.max(values))
    return w / np.mean(w)


def eval_G(u: Field) -> float:
    return log_mean_exp(u.values)


def _total(dirichlet: float, gp: float, gm: float, p: Params) -> float:
    # Grouping the two nonlinear terms makes (u, λ1, λ2) -> (-u, λ2, λ1) exact.
    return dirichlet - (p.lambda1 * gp + p.lambda2 * gm)


def eval_I(u: MeanZeroField, p: Params) -> EnergyBreakdown:
    d = 0.5 * h1_norm_sq(u)
    gp = log_mean_exp(u.values)
    gm = log_mean_exp(-u.values)
    return EnergyBreakdown(d, gp, gm, _total(d, gp, gm, p))


def energy_values(grid: TorusGrid, values: np.ndarray, p: Params) -> float:
    """I(u) with the spectral Dirichlet term; the functional the solvers work with."""
    d = 0.5 * spectral_energy_values(grid, values)
    return _total(d, log_mean_exp(values), log_mean_exp(-values), p)


def residual_values(grid: TorusGrid, values: np.ndarray, p: Params) -> np.ndarray:
    r = minus_laplacian_values(grid, values)
    if p.lambda1:
        r -= p.lambda1 * (density(values) - 1.0)
    if p.lambda2:
        r += p.lambda2 * (density(-values) - 1.0)
    return r - np.mean(r)


def residual(u: MeanZeroField, p: Params) -> MeanZeroField:
    """-Δu - λ1(e^u/∫e^u - 1) + λ2(e^-u/∫e^-u - 1); the L^2 gradient of I."""
    return MeanZeroField(u.grid, residual_values(u.grid, u.values, p))


def sobolev_gradient_values(grid: TorusGrid, values: np.ndarray, p: Params) -> np.ndarray:
    g = inv_minus_laplacian_values(grid, residual_values(grid, values, p))
    return g - np.mean(g)


def sobolev_gradient(u: MeanZeroField, p: Params) -> MeanZeroField:
    """Riesz representative of I'(u) in E, i.e. (-Δ)^{-1} residual(u)."""
    return inv_minus_laplacian(residual(u, p))


def dual_norm_Gprime(u: MeanZeroField) -> float:
    rho = density(u.values)
    w = inv_minus_laplacian(Field(u.grid, rho - np.mean(rho)))
    return math.sqrt(h1_norm_sq(w))


def hess_at_zero_quadform(phi: MeanZeroField, p: Params) -> float:
    """<I''(0)φ, φ> = ∫|∇φ|^2 - (λ1+λ2) ∫φ^2."""
    return h1_norm_sq(phi) - (p.lambda1 + p.lambda2) * integrate(phi * phi)


class Linearization:
    """Derivative of the residual at a fixed u, applied to mean-zero directions.

    J φ = -Δφ - λ1 ρ+ (φ - ∫ρ+φ) - λ2 ρ- (φ - ∫ρ-φ),  ρ± = e^{±u}/∫e^{±u}.
    J is symmetric in L^2 and maps mean-zero fields to mean-zero fields.
    """

    def __init__(self, grid: TorusGrid, values: np.ndarray, p: Params):
        self.grid = grid
        self.p = p
        self.rho_plus = density(values)
        self.rho_minus = density(-values)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        out = minus_laplacian_values(self.grid, phi)
        for lam, rho in ((self.p.lambda1, self.rho_plus), (self.p.lambda2, self.rho_minus)):
            if lam:
                out -= lam * rho * (phi - np.mean(rho * phi))
        return out - np.mean(out)
