"""
Admissible region, blow-up classification and parameter sweeps.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .functional import Params, density, energy_values
from .minimax import MinimaxOptions, refine_critical, run_minimax
from .torus import MeanZeroField, TorusGrid, distance_map, first_eigenvalue, spectral_energy_values

log = logging.getLogger(__name__)

EIGHT_PI = 8.0 * math.pi
PEAK_THRESHOLD = 10.0
DEFAULT_BALL_RADIUS = 0.1


@dataclass(frozen=True)
class RegionVerdict:
    in_region: bool
    sum_check: bool  # λ1 + λ2 < μ1|M|
    max_check: bool  # max(λ1, λ2) > 8π
    margin: float  # signed slack to the nearer constraint; > 0 inside


def in_lambda(p: Params, grid: TorusGrid) -> RegionVerdict:
    mu = first_eigenvalue(grid) * grid.volume
    s = p.lambda1 + p.lambda2
    m = max(p.lambda1, p.lambda2)
    sum_ok = s < mu
    max_ok = m > EIGHT_PI
    return RegionVerdict(sum_ok and max_ok, sum_ok, max_ok, min(mu - s, m - EIGHT_PI))


@dataclass(frozen=True)
class Peak:
    location: tuple[float, float]
    side: str  # "+" or "-"
    height: float
    ball_mass: float

    @property
    def quantization_gap(self) -> float:
        return abs(self.ball_mass - EIGHT_PI)


@dataclass
class ConcentrationReport:
    peaks: list[Peak]
    sup_plus: float
    sup_minus: float
    classification: str
    quantization_gaps: list[float] = field(default_factory=list)


def _local_maxima(values: np.ndarray) -> list[tuple[int, int]]:
    is_max = np.ones(values.shape, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_max &= values >= np.roll(values, (dx, dy), axis=(0, 1))
    idx = np.argwhere(is_max)
    return [tuple(int(c) for c in ij) for ij in idx]


def _side_peaks(u: MeanZeroField, values, lam: float, side: str, radius: float) -> list[Peak]:
    grid = u.grid
    cands = [ij for ij in _local_maxima(values) if values[ij] > PEAK_THRESHOLD]
    cands.sort(key=lambda ij: (-values[ij], ij))
    rho = density(values)
    out: list[Peak] = []
    for i, j in cands:
        loc = (i * grid.h, j * grid.h)
        dist = distance_map(grid, loc)
        if any(dist[round(q.location[0] * grid.n), round(q.location[1] * grid.n)] < radius for q in out):
            continue
        mass = lam * float(np.mean(rho * (dist < radius)))
        out.append(Peak(loc, side, float(values[i, j]), mass))
    return out


def concentration_report(u: MeanZeroField, p: Params, ball_radius: float = DEFAULT_BALL_RADIUS) -> ConcentrationReport:
    """Peaks of ±u above the blow-up threshold and the density mass near each.

    A peak is a grid local maximum of u (or -u) exceeding PEAK_THRESHOLD;
    peaks closer than ``ball_radius`` to a higher one on the same side are
    merged into it.  The mass of a + peak is λ1 ∫_B e^u/∫e^u over the ball
    of radius ``ball_radius`` (likewise with λ2 and -u).
    """
    if not 0.0 < ball_radius <= 0.25:
        raise ValueError(f"ball_radius must lie in (0, 0.25], got {ball_radius}")
    v = u.values
    peaks = _side_peaks(u, v, p.lambda1, "+", ball_radius) + _side_peaks(u, -v, p.lambda2, "-", ball_radius)
    sides = {q.side for q in peaks}
    if not sides:
        kind = "compact"
    elif len(sides) == 1:
        kind = "one_sided"
    else:
        kind = "two_sided"
    return ConcentrationReport(
        peaks=peaks,
        sup_plus=float(np.max(v)),
        sup_minus=float(np.max(-v)),
        classification=kind,
        quantization_gaps=[q.quantization_gap for q in peaks],
    )


def quantization_relation_residual(m1: float, m2: float) -> float:
    """(m1 - m2)^2 - 8π(m1 + m2); zero on the two-sided mass relation."""
    return (m1 - m2) ** 2 - EIGHT_PI * (m1 + m2)


def two_sided_threshold() -> float:
    """min{x + y : x, y >= 4π, (x - y)^2 = 8π(x + y)}, solved numerically.

    On the constraint curve, with d = x - y >= 0, x + y = d^2/8π and the
    binding bound is y >= 4π, i.e. d^2/8π - d - 8π >= 0.  The sum grows with
    d, so the minimum sits at the root of that quadratic.
    """
    d = brentq(lambda t: t * t / EIGHT_PI - t - EIGHT_PI, EIGHT_PI, 4 * EIGHT_PI, xtol=1e-14, rtol=1e-15)
    value = d * d / EIGHT_PI
    closed = 4.0 * (3.0 + math.sqrt(5.0)) * math.pi
    if abs(value - closed) > 1e-9 * closed:
        raise ArithmeticError(f"threshold {value!r} disagrees with 4(3+√5)π = {closed!r}")
    return value


def threshold_chain(grid: TorusGrid | None = None) -> tuple[float, float, float, bool]:
    """(threshold, 16π, μ1|M|) and whether threshold > 16π > μ1|M| holds."""
    t = two_sided_threshold()
    mu = 4.0 * math.pi**2 if grid is None else first_eigenvalue(grid) * grid.volume
    sixteen = 16.0 * math.pi
    return t, sixteen, mu, (t > sixteen > mu)


SWEEP_COLUMNS = (
    "lambda1",
    "lambda2",
    "status",
    "in_region",
    "converged",
    "c_est",
    "residual",
    "h1_norm",
    "I_value",
    "classification",
    "message",
)


@dataclass
class SweepRow:
    lambda1: float
    lambda2: float
    status: str  # ok | skipped | not_converged | failed
    in_region: bool
    converged: bool = False
    c_est: float = math.nan
    residual: float = math.nan
    h1_norm: float = math.nan
    I_value: float = math.nan
    classification: str = ""
    message: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _sweep_row(p: Params, grid: TorusGrid, opts: MinimaxOptions, tol: float) -> SweepRow:
    verdict = in_lambda(p, grid)
    row = SweepRow(p.lambda1, p.lambda2, "skipped", verdict.in_region)
    if not verdict.in_region:
        row.message = "outside the admissible region"
        return row
    try:
        res = run_minimax(p, grid, opts)
        row.c_est = res.c_est
        if not res.converged:
            row.status = "not_converged"
            row.message = f"minimax stopped at gradient {res.history[-1][1]:.3g}" if res.history else "all seeds stagnated"
            return row
        u, r = refine_critical(res.argmax, p, tol)
        row.residual = r
        row.h1_norm = math.sqrt(spectral_energy_values(grid, u.values))
        row.I_value = energy_values(grid, u.values, p)
        row.classification = concentration_report(u, p).classification
        row.converged = r <= tol
        row.status = "ok" if row.converged else "not_converged"
        if not row.converged:
            row.message = f"refinement residual {r:.3g} above tol"
    except Exception as exc:  # a failing row must not abort the sweep
        log.warning("sweep row (%g, %g) failed: %s", p.lambda1, p.lambda2, exc)
        row.status = "failed"
        row.message = f"{type(exc).__name__}: {exc}"
    return row


def sweep(param_list, grid: TorusGrid, opts: MinimaxOptions | None = None, *, tol: float = 1e-8, threads: int = 1) -> list[SweepRow]:
    """One row per input pair, in input order."""
    opts = opts or MinimaxOptions()
    params = list(param_list)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda q: _sweep_row(q, grid, opts, tol), params))
    return [_sweep_row(q, grid, opts, tol) for q in params]
