"""
The bubble family

    v_eps(p) = ln eps^2 / (eps^2 + d(p, p0)^2)^2   inside the ball d < r0,
               constant continuation outside,
    u_eps    = v_eps - mean(v_eps),

and regression of its energies against ln(1/eps).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .functional import Params, eval_G, eval_I
from .torus import MeanZeroField, TorusGrid, distance_map, h1_norm_sq

DEFAULT_CENTER = (0.5, 0.5)
DEFAULT_R0 = 0.25
DEFAULT_EPS_LIST = tuple(2.0**-k for k in range(3, 8))

COLUMNS = ("dirichlet_energy", "ln_int_exp_plus", "ln_int_exp_minus", "I_value")


@dataclass(frozen=True)
class BumpSpec:
    center: tuple[float, float] = DEFAULT_CENTER
    eps: float = 2.0**-5
    r0: float = DEFAULT_R0

    def __post_init__(self):
        if not 0.0 < self.r0 < 0.5:
            raise ValueError(f"r0 must lie in (0, 0.5), got {self.r0}")
        if not 0.0 < self.eps <= self.r0 / 2:
            raise ValueError(f"eps must lie in (0, r0/2], got eps={self.eps}, r0={self.r0}")
        cx, cy = self.center
        if not (0.0 <= cx < 1.0 and 0.0 <= cy < 1.0):
            raise ValueError(f"center must lie in [0,1)^2, got {self.center}")


def bubble_values(spec: BumpSpec, grid: TorusGrid) -> np.ndarray:
    """Samples of v_eps (before the mean is removed)."""
    d = np.minimum(distance_map(grid, spec.center), spec.r0)
    e2 = spec.eps**2
    return math.log(e2) - 2.0 * np.log(e2 + d * d)


def build_u_eps(spec: BumpSpec, grid: TorusGrid) -> MeanZeroField:
    if spec.eps < 4 * grid.h:
        raise ValueError(
            f"eps={spec.eps} is under-resolved on n={grid.n} (needs eps >= 4h = {4 * grid.h})"
        )
    v = bubble_values(spec, grid)
    return MeanZeroField(grid, v - np.mean(v), smooth=False)


@dataclass
class ExpansionRow:
    eps: float
    dirichlet_energy: float
    ln_int_exp_plus: float
    ln_int_exp_minus: float
    I_value: float

    @property
    def ln_inv_eps(self) -> float:
        return math.log(1.0 / self.eps)


@dataclass
class ExpansionReport:
    """Per-eps energies and their least-squares fits against ln(1/eps).

    ``slopes``/``intercepts`` come from the plain linear fit
    y = a + b ln(1/eps).  ``corrected_slopes`` additionally fit the leading
    eps^2 correction, y = a + b ln(1/eps) + c eps^2, which the bubble's
    O(1) remainder carries at moderate eps/r0.
    """

    rows: list[ExpansionRow]
    slopes: dict[str, float] = field(default_factory=dict)
    intercepts: dict[str, float] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)
    corrected_slopes: dict[str, float] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS fit y = a + b x. Returns (slope, intercept, max |residual|)."""
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.max(np.abs(y - A @ coef)))
    return float(coef[1]), float(coef[0]), res


def fit_corrected_slope(eps: np.ndarray, y: np.ndarray) -> float:
    A = np.column_stack([np.ones_like(eps), np.log(1.0 / eps), eps**2])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[1])


def _row(eps: float, center, r0: float, p: Params, grid: TorusGrid) -> ExpansionRow:
    u = build_u_eps(BumpSpec(tuple(center), eps, r0), grid)
    return ExpansionRow(
        eps=eps,
        dirichlet_energy=h1_norm_sq(u),
        ln_int_exp_plus=eval_G(u),
        ln_int_exp_minus=eval_G(-u),
        I_value=eval_I(u, p).total,
    )


def expansion_report(center, r0, eps_list, p: Params, grid: TorusGrid, *, threads: int = 1) -> ExpansionReport:
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 4:
        raise ValueError(f"need at least 4 eps values for a fit, got {len(eps_list)}")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    for e in eps_list:
        BumpSpec(tuple(center), e, r0)
        if e < 4 * grid.h:
            raise ValueError(f"eps={e} is under-resolved on n={grid.n}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda e: _row(e, center, r0, p, grid), eps_list))
    else:
        rows = [_row(e, center, r0, p, grid) for e in eps_list]
    rows.sort(key=lambda r: -r.eps)

    report = ExpansionReport(rows)
    x = np.array([r.ln_inv_eps for r in rows])
    eps = np.array([r.eps for r in rows])
    for name in COLUMNS:
        y = report.column(name)
        slope, icpt, res = fit_line(x, y)
        report.slopes[name] = slope
        report.intercepts[name] = icpt
        report.residuals[name] = res
        report.corrected_slopes[name] = fit_corrected_slope(eps, y)
    return report


def clip_eps_list(eps_list, grid: TorusGrid) -> list[float]:
    """Drop entries that the grid cannot resolve (eps < 4h)."""
    return [e for e in eps_list if e >= 4 * grid.h]
