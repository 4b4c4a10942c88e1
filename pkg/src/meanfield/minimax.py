"""
Mountain-pass engine.

A path from 0 to an endpoint of negative energy is discretised by K+1
nodes and joined piecewise linearly.  Each sweep lowers the highest stretch
of the path: the top node is first moved onto the maximum of I along its two
segments, then nodes whose energy lies within ``band`` of the maximum take a
backtracked step along the negative Sobolev gradient (with the component
along the path removed, so nodes do not slide along it).  The recorded
quantity is the maximum of I over the piecewise-linear path, which is what
the minimax value bounds from above; it never increases.  The point
attaining it is then refined to a critical point by Newton-Krylov.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import LinearOperator, gmres

from .bumps import BumpSpec, build_u_eps
from .functional import (
    Linearization,
    Params,
    energy_values,
    residual_values,
    sobolev_gradient_values,
)
from .torus import (
    MeanZeroField,
    TorusGrid,
    h1_inner_values,
    inv_minus_laplacian_values,
    spectral_energy_values,
)

log = logging.getLogger(__name__)

EIGHT_PI = 8.0 * math.pi
MIN_STEP = 1e-12


class NoNegativeEndpointError(RuntimeError):
    pass


class StagnationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MinimaxOptions:
    K: int = 24
    max_iters: int = 500
    step0: float = 1.0
    grad_tol: float = 5e-3
    band: float = 0.15
    seeds: tuple[float, ...] = (1.0, 1.5, 2.0)
    reparam_every: int = 10
    endpoint_r0: float = 0.45

    def __post_init__(self):
        if self.K < 8:
            raise ValueError("K must be >= 8")
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if not 0 < self.band <= 0.5:
            raise ValueError("band must lie in (0, 0.5]")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.seeds or any(s <= 0 for s in self.seeds):
            raise ValueError("seeds must be a non-empty list of positive scalings")
        object.__setattr__(self, "seeds", tuple(float(s) for s in self.seeds))


@dataclass
class Path:
    """Discrete member of Γ: nodes[0] = 0, nodes[-1] = endpoint."""

    nodes: list[MeanZeroField]

    def __post_init__(self):
        if len(self.nodes) < 9:
            raise ValueError("a path needs K >= 8 (at least 9 nodes)")
        if np.any(self.nodes[0].values != 0.0):
            raise ValueError("path must start at the zero field")

    @property
    def K(self) -> int:
        return len(self.nodes) - 1

    @property
    def grid(self) -> TorusGrid:
        return self.nodes[0].grid

    @property
    def endpoint(self) -> MeanZeroField:
        return self.nodes[-1]

    def energies(self, p: Params) -> np.ndarray:
        return np.array([energy_values(self.grid, u.values, p) for u in self.nodes])

    def norms(self) -> np.ndarray:
        return np.array([math.sqrt(spectral_energy_values(self.grid, u.values)) for u in self.nodes])


@dataclass
class MinimaxResult:
    c_est: float
    argmax: MeanZeroField
    history: list[tuple[float, float]]
    converged: bool
    refined: tuple[MeanZeroField, float] | None = None
    seed: float | None = None
    path: Path | None = None
    stagnated_seeds: list[float] = field(default_factory=list)
    iterations: int = 0


def _e_norm(grid: TorusGrid, values: np.ndarray) -> float:
    return math.sqrt(spectral_energy_values(grid, values))


def _mz(grid: TorusGrid, values: np.ndarray) -> MeanZeroField:
    return MeanZeroField(grid, values - np.mean(values))


def find_negative_endpoint(
    p: Params,
    grid: TorusGrid,
    *,
    r0: float = 0.45,
    center=(0.5, 0.5),
    steps_per_octave: int = 4,
) -> MeanZeroField:
    """First member of a decreasing eps-scan of ±u_eps with I < 0 and ||u|| >= 1.

    The sign is + when λ1 > 8π and - otherwise.  Energies are taken with the
    spectral Dirichlet term (the functional the minimax works on), which
    dominates the finite-difference value, so the returned bubble has
    negative energy under either evaluation.
    """
    if max(p.lambda1, p.lambda2) <= EIGHT_PI:
        raise NoNegativeEndpointError(
            f"max(λ1, λ2) = {max(p.lambda1, p.lambda2):.6g} <= 8π: I is bounded below, no negative endpoint"
        )
    sign = 1.0 if p.lambda1 > EIGHT_PI else -1.0
    eps = r0 / 2
    tried = []
    while eps >= 4 * grid.h:
        u = build_u_eps(BumpSpec(tuple(center), eps, r0), grid)
        vals = sign * u.values
        e = energy_values(grid, vals, p)
        tried.append((eps, e))
        if e < 0 and _e_norm(grid, vals) >= 1.0:
            return MeanZeroField(grid, vals, smooth=False)
        eps *= 2.0 ** (-1.0 / steps_per_octave)
    scan = ", ".join(f"eps={a:.4g}: I={b:.4g}" for a, b in tried)
    raise NoNegativeEndpointError(
        f"no resolvable bubble with negative energy on n={grid.n} (parameters too close to 8π?); scanned {scan}"
    )


def init_path(endpoint: MeanZeroField, K: int) -> Path:
    grid = endpoint.grid
    nodes = [grid.zeros()]
    for j in range(1, K):
        nodes.append(MeanZeroField(grid, (j / K) * endpoint.values))
    nodes.append(endpoint.with_smooth(True))
    return Path(nodes)


def _projected_gradient(grid, prev, cur, nxt, p):
    g = sobolev_gradient_values(grid, cur, p)
    tau = nxt - prev
    tt = h1_inner_values(grid, tau, tau)
    if tt > 0:
        g = g - (h1_inner_values(grid, g, tau) / tt) * tau
    return g


@dataclass
class _Peak:
    energy: float
    node: int
    values: np.ndarray


def _path_peak(grid: TorusGrid, vals, en: np.ndarray, p: Params) -> _Peak:
    """Maximum of I over the piecewise-linear path.

    The top node is located from the node energies; the two segments next
    to it are searched by a bounded 1-D maximisation.
    """
    K = len(vals) - 1
    j = int(np.argmax(en))
    best = _Peak(float(en[j]), j, vals[j])
    if not 0 < j < K:
        return best
    for lo, hi, d in ((-1.0, 0.0, vals[j] - vals[j - 1]), (0.0, 1.0, vals[j + 1] - vals[j])):
        res = minimize_scalar(
            lambda s: -energy_values(grid, vals[j] + s * d, p),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-6},
        )
        if -res.fun > best.energy:
            v = vals[j] + res.x * d
            best = _Peak(float(-res.fun), j, v - np.mean(v))
    return best


def path_max(path: Path, p: Params) -> tuple[float, MeanZeroField]:
    """(max of I over the piecewise-linear path, the point attaining it)."""
    vals = [u.values for u in path.nodes]
    peak = _path_peak(path.grid, vals, path.energies(p), p)
    return peak.energy, _mz(path.grid, peak.values)


def _with_nodes(path: Path, vals) -> Path:
    grid, K = path.grid, path.K
    return Path([path.nodes[0]] + [_mz(grid, v) for v in vals[1:K]] + [path.nodes[K]])


def deform_step(path: Path, p: Params, opts: MinimaxOptions) -> Path:
    """One sweep; the maximum of I over the path does not increase.

    First the top node is moved onto the path maximum (if that does not raise
    the maximum of the re-joined path).  Then every interior node whose energy
    lies within ``band * spread`` of the maximum takes a step along the
    negative Sobolev gradient, its component along the local path tangent
    removed; the common step starts at ``step0`` and is halved until the path
    maximum does not exceed its previous value.

    Raises StagnationError if the step underflows below 1e-12.
    """
    grid, K = path.grid, path.K
    vals = [u.values for u in path.nodes]
    en = path.energies(p)
    peak = _path_peak(grid, vals, en, p)
    if 0 < peak.node < K and peak.values is not vals[peak.node]:
        trial = list(vals)
        trial[peak.node] = peak.values
        ten = en.copy()
        ten[peak.node] = peak.energy
        tpeak = _path_peak(grid, trial, ten, p)
        if tpeak.energy <= peak.energy:
            vals, en, peak = trial, ten, tpeak
    top = peak.energy

    j = int(np.argmax(en))
    if 0 < j < K and not np.any(sobolev_gradient_values(grid, vals[j], p)):
        return _with_nodes(path, vals)

    spread = top - float(en.min())
    band = [i for i in range(1, K) if en[i] >= top - opts.band * spread]
    if j not in band and 0 < j < K:
        band.append(j)
    if not band:
        return _with_nodes(path, vals)
    dirs = {i: _projected_gradient(grid, vals[i - 1], vals[i], vals[i + 1], p) for i in band}

    t = opts.step0
    while t >= MIN_STEP:
        cand = list(vals)
        cen = en.copy()
        for i in band:
            v = vals[i] - t * dirs[i]
            cand[i] = v - np.mean(v)
            cen[i] = energy_values(grid, cand[i], p)
        if cen.max() <= top and _path_peak(grid, cand, cen, p).energy <= top:
            return _with_nodes(path, cand)
        t *= 0.5
    raise StagnationError(f"step underflow at node {j} (path maximum {top:.6g})")


def reparametrize(path: Path, p: Params) -> Path:
    """Redistribute nodes by E-arc length, keeping the top node as a knot.

    The new path is returned only if its maximum does not exceed the old one;
    otherwise the input is returned unchanged.
    """
    grid, K = path.grid, path.K
    vals = [u.values for u in path.nodes]
    en = path.energies(p)
    jm = int(np.argmax(en))
    if not 0 < jm < K:
        return path
    seg = np.array([_e_norm(grid, vals[i + 1] - vals[i]) for i in range(K)])
    total = seg.sum()
    if total == 0:
        return path
    k1 = int(min(max(1, round(K * seg[:jm].sum() / total)), K - 1))

    def spread(lo, hi, m):
        cum = np.concatenate([[0.0], np.cumsum(seg[lo:hi])])
        out = []
        for q in range(1, m):
            s = cum[-1] * q / m
            i = int(min(np.searchsorted(cum, s, side="right") - 1, hi - lo - 1))
            w = (s - cum[i]) / seg[lo + i] if seg[lo + i] > 0 else 0.0
            out.append((1.0 - w) * vals[lo + i] + w * vals[lo + i + 1])
        return out

    new_vals = [vals[0]] + spread(0, jm, k1) + [vals[jm]] + spread(jm, K, K - k1) + [vals[K]]
    new = _with_nodes(path, new_vals)
    if path_max(new, p)[0] <= path_max(path, p)[0]:
        return new
    return path


def _status(path: Path, p: Params) -> tuple[float, MeanZeroField, float]:
    top, u = path_max(path, p)
    g = sobolev_gradient_values(path.grid, u.values, p)
    return top, u, _e_norm(path.grid, g)


def _run_from(endpoint: MeanZeroField, p: Params, opts: MinimaxOptions):
    path = init_path(endpoint, opts.K)
    top, u, gn = _status(path, p)
    history = [(top, gn)]
    it = 0
    while gn >= opts.grad_tol and it < opts.max_iters:
        path = deform_step(path, p, opts)
        it += 1
        if it % opts.reparam_every == 0:
            path = reparametrize(path, p)
        top, u, gn = _status(path, p)
        history.append((top, gn))
    return path, u, history, gn < opts.grad_tol, it


def run_minimax(p: Params, grid: TorusGrid, opts: MinimaxOptions | None = None, *, endpoint=None) -> MinimaxResult:
    """Mountain-pass estimate of c = inf over paths of max I.

    Tries the endpoint scalings in ``opts.seeds`` in order (skipping those
    with nonnegative energy) until one run meets ``grad_tol``.
    """
    opts = opts or MinimaxOptions()
    if endpoint is None:
        endpoint = find_negative_endpoint(p, grid, r0=opts.endpoint_r0)
    stagnated = []
    last = None
    for seed in opts.seeds:
        ep = MeanZeroField(grid, seed * endpoint.values)
        if energy_values(grid, ep.values, p) >= 0:
            log.info("seed %.3g skipped: scaled endpoint has nonnegative energy", seed)
            continue
        try:
            path, u, history, ok, its = _run_from(ep, p, opts)
        except StagnationError as exc:
            log.warning("seed %.3g stagnated: %s", seed, exc)
            stagnated.append(seed)
            continue
        last = MinimaxResult(
            c_est=history[-1][0],
            argmax=u,
            history=history,
            converged=ok,
            seed=seed,
            path=path,
            stagnated_seeds=list(stagnated),
            iterations=its,
        )
        if ok:
            return last
        log.warning("seed %.3g hit max_iters=%d (gradient %.3g)", seed, opts.max_iters, history[-1][1])
    if last is None:
        return MinimaxResult(float("nan"), grid.zeros(), [], False, stagnated_seeds=stagnated)
    last.stagnated_seeds = stagnated
    return last


def _l2(values: np.ndarray) -> float:
    return math.sqrt(float(np.mean(values * values)))


def _newton_direction(grid: TorusGrid, u: np.ndarray, R: np.ndarray, p: Params, rtol: float):
    J = Linearization(grid, u, p)
    n2 = grid.n**2

    def mv(x):
        x = x.reshape(grid.n, grid.n)
        x = x - np.mean(x)
        return inv_minus_laplacian_values(grid, J.apply(x)).ravel()

    A = LinearOperator((n2, n2), matvec=mv, dtype=float)
    b = -inv_minus_laplacian_values(grid, R).ravel()
    d, _ = gmres(A, b, rtol=rtol, atol=0.0, restart=60, maxiter=20)
    d = d.reshape(grid.n, grid.n)
    return d - np.mean(d), J


def refine_critical(u0: MeanZeroField, p: Params, tol: float = 1e-8, *, max_iter: int = 60) -> tuple[MeanZeroField, float]:
    """Drive u0 to a solution of the mean field equation.

    Newton-Krylov on the (-Δ)^{-1}-preconditioned equation with a
    backtracking line search on the L^2 residual; when a Newton step fails to
    reduce the residual, a backtracked Sobolev-gradient step on the merit
    ½||I'(u)||^2 is taken instead.  Returns (u*, ||residual(u*)||_L2); if the
    budget runs out the best iterate is returned and a warning is logged.
    """
    grid = u0.grid
    u = np.array(u0.values)
    R = residual_values(grid, u, p)
    r = _l2(R)
    best = (r, u.copy())
    for _ in range(max_iter):
        if r <= tol:
            break
        d, J = _newton_direction(grid, u, R, p, rtol=min(1e-3, max(r, 1e-12)))
        alpha, accepted = 1.0, False
        while alpha >= 1.0 / 256:
            trial = u + alpha * d
            trial -= np.mean(trial)
            Rt = residual_values(grid, trial, p)
            rt = _l2(Rt)
            if rt <= (1.0 - 1e-4 * alpha) * r:
                u, R, r, accepted = trial, Rt, rt, True
                break
            alpha *= 0.5
        if not accepted:
            u, R, r = _merit_descent(grid, u, R, p, J)
        if r < best[0]:
            best = (r, u.copy())
    r, u = best
    if r > tol:
        log.warning("refine_critical: budget exhausted with residual %.3e > tol %.3e", r, tol)
    return MeanZeroField(grid, u), r  # iterates are already centred


def _merit_descent(grid, u, R, p, J, steps: int = 10):
    def merit(Rv):
        return 0.5 * float(np.mean(Rv * inv_minus_laplacian_values(grid, Rv)))

    m = merit(R)
    r = _l2(R)
    for _ in range(steps):
        jg = J.apply(inv_minus_laplacian_values(grid, R))
        d = inv_minus_laplacian_values(grid, jg)
        slope = float(np.mean(jg * d))
        t = 1.0
        while t > MIN_STEP:
            trial = u - t * d
            trial -= np.mean(trial)
            Rt = residual_values(grid, trial, p)
            mt = merit(Rt)
            if mt <= m - 1e-4 * t * slope:
                u, R, m, r = trial, Rt, mt, _l2(Rt)
                break
            t *= 0.5
        else:
            break
        J = Linearization(grid, u, p)
    return u, R, r
