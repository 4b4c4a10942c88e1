"""
Pseudospectral calculus on the unit flat torus R^2/Z^2.

Fields are stored as n x n arrays of point values on the uniform grid
x_i = i/n, y_j = j/n (row index = x, column index = y).  Fourier
transforms are taken on demand with numpy's FFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FOUR_PI_SQ = 4.0 * np.pi**2


class NotMeanZeroError(ValueError):
    """Raised when a field that must have zero mean does not."""


def mean_zero_tolerance(values: np.ndarray) -> float:
    return 1e-12 * (1.0 + float(np.max(np.abs(values))))


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic n x n grid on [0,1)^2. |M| = 1."""

    n: int
    symbol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 16 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 16, got {self.n!r}")
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        sym = FOUR_PI_SQ * (k[:, None] ** 2 + k[None, :] ** 2)
        sym.setflags(write=False)
        object.__setattr__(self, "symbol", sym)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def volume(self) -> float:
        return 1.0

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X, Y) of node coordinates, indexing='ij'."""
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def sample(self, func, *, smooth: bool = True) -> "Field":
        X, Y = self.coords()
        return Field(self, np.asarray(func(X, Y), dtype=float), smooth=smooth)

    def zeros(self) -> "MeanZeroField":
        return MeanZeroField(self, np.zeros((self.n, self.n)))


@dataclass(frozen=True, eq=False)
class Field:
    """Real scalar field sampled on a TorusGrid.

    ``smooth=False`` marks fields with a gradient kink (the bubble family);
    their Dirichlet energy is evaluated by finite differences.
    """

    grid: TorusGrid
    values: np.ndarray
    smooth: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"expected shape {(self.grid.n,) * 2}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def _combine(self, other, op):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            vals = op(self.values, other.values)
            smooth = self.smooth and other.smooth
            # sums of mean-zero fields stay mean-zero, products do not
            linear = op in (np.add, np.subtract)
            both = isinstance(self, MeanZeroField) and isinstance(other, MeanZeroField)
            cls = MeanZeroField if linear and both else Field
        else:
            vals = op(self.values, float(other))
            smooth = self.smooth
            cls = Field
        return cls(self.grid, vals, smooth=smooth)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            return self._combine(scalar, np.multiply)
        return type(self)(self.grid, self.values * float(scalar), smooth=self.smooth)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.values, smooth=self.smooth)

    def with_smooth(self, smooth: bool):
        return type(self)(self.grid, self.values, smooth=smooth)


class MeanZeroField(Field):
    """Field with zero grid mean (an element of the space E)."""

    def __post_init__(self):
        super().__post_init__()
        if abs(self.mean()) > mean_zero_tolerance(self.values):
            raise NotMeanZeroError(f"field mean {self.mean():.3e} is not zero")

    @classmethod
    def project(cls, f: Field | np.ndarray, grid: TorusGrid | None = None, *, smooth=None):
        """Subtract the mean and wrap."""
        if isinstance(f, Field):
            grid, vals = f.grid, f.values
            smooth = f.smooth if smooth is None else smooth
        else:
            vals = np.asarray(f, dtype=float)
        return cls(grid, vals - np.mean(vals), smooth=True if smooth is None else smooth)


def integrate(f: Field) -> float:
    """Rectangle-rule integral h^2 * sum(values); |M| = 1 so this is the mean."""
    return float(np.sum(f.values)) / f.grid.n**2


def torus_distance(p, q) -> float:
    d = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    d = np.minimum(d, 1.0 - d)
    return float(np.hypot(d[0], d[1]))


def distance_map(grid: TorusGrid, center) -> np.ndarray:
    """Torus distance from every grid node to ``center``."""
    X, Y = grid.coords()
    dx = np.abs(X - center[0])
    dy = np.abs(Y - center[1])
    return np.hypot(np.minimum(dx, 1.0 - dx), np.minimum(dy, 1.0 - dy))


# Array-level kernels, shared by the hot loops in functional/minimax.

def _apply_symbol(grid: TorusGrid, values: np.ndarray, sym: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(np.fft.fft2(values) * sym))


def minus_laplacian_values(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return _apply_symbol(grid, values, grid.symbol)


def inv_minus_laplacian_values(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        inv = 1.0 / grid.symbol
    inv[0, 0] = 0.0
    return _apply_symbol(grid, values, inv)


def spectral_energy_values(grid: TorusGrid, values: np.ndarray) -> float:
    coeff = np.fft.fft2(values) / grid.n**2
    return float(np.sum(grid.symbol * np.abs(coeff) ** 2))


def fd_energy_values(grid: TorusGrid, values: np.ndarray) -> float:
    # Differences between neighbouring nodes are centred, second-order
    # approximations of the gradient at the cell midpoints.
    dx = np.roll(values, -1, axis=0) - values
    dy = np.roll(values, -1, axis=1) - values
    return float(np.sum(dx * dx + dy * dy))  # h^2 * (1/h^2) cancels


def minus_laplacian(u: Field) -> MeanZeroField:
    out = minus_laplacian_values(u.grid, u.values)
    return MeanZeroField(u.grid, out - np.mean(out))


def inv_minus_laplacian(f: Field) -> MeanZeroField:
    """Solve -Δu = f for mean-zero u; f must have zero mean."""
    if abs(f.mean()) > mean_zero_tolerance(f.values):
        raise NotMeanZeroError(
            f"inverse Laplacian needs a mean-zero right-hand side (mean = {f.mean():.3e})"
        )
    out = inv_minus_laplacian_values(f.grid, f.values)
    return MeanZeroField(f.grid, out - np.mean(out))


def h1_norm_sq(u: Field) -> float:
    """∫|∇u|^2: Parseval sum for smooth fields, finite differences otherwise."""
    if u.smooth:
        return spectral_energy_values(u.grid, u.values)
    return fd_energy_values(u.grid, u.values)


def first_eigenvalue(grid: TorusGrid) -> float:
    """Smallest nonzero multiplier of -Δ on the grid (4π^2 for every n)."""
    sym = grid.symbol
    return float(np.min(sym[sym > 0]))


def eigenvalue_assumption_holds(grid: TorusGrid) -> bool:
    """8π < μ1·|M| < 16π."""
    m = first_eigenvalue(grid) * grid.volume
    return 8 * np.pi < m < 16 * np.pi


def save_field(f: Field, path) -> None:
    n = f.grid.n
    lines = [str(n)]
    for row in f.values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path, *, mean_zero: bool = True) -> Field:
    text = Path(path).read_text().split("\n")
    try:
        n = int(text[0].strip())
        rows = [list(map(float, line.split())) for line in text[1 : n + 1]]
        values = np.array(rows, dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed field file {path}: {exc}") from exc
    if values.shape != (n, n):
        raise ValueError(f"malformed field file {path}: expected {n}x{n} values")
    grid = TorusGrid(n)
    cls = MeanZeroField if mean_zero else Field
    return cls(grid, values)


def h1_inner_values(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> float:
    """E inner product ∫∇a·∇b (spectral)."""
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    return float(np.real(np.sum(grid.symbol * np.conj(fa) * fb))) / grid.n**4


def random_bandlimited(grid: TorusGrid, rng: np.random.Generator, kmax: int = 4, amplitude: float = 1.0) -> MeanZeroField:
    """Random mean-zero trigonometric polynomial with modes |k|, |l| <= kmax."""
    if kmax >= grid.n // 2:
        raise ValueError("kmax must stay below the Nyquist mode")
    X, Y = grid.coords()
    out = np.zeros((grid.n, grid.n))
    for k in range(0, kmax + 1):
        for l in range(-kmax, kmax + 1):
            if k == 0 and l <= 0:
                continue
            a, b = rng.standard_normal(2) / (1.0 + k * k + l * l)
            phase = 2 * np.pi * (k * X + l * Y)
            out += a * np.cos(phase) + b * np.sin(phase)
    out -= np.mean(out)
    return MeanZeroField(grid, amplitude * out)
