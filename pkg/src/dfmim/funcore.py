"""Discretized functional data: grids, curves and quadrature inner products.

Curves are kept as raw samples on an equally spaced grid over [0, 1].
Inner products use the composite trapezoid rule on that grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "Grid",
    "Curve",
    "MultiCurve",
    "make_grid",
    "trapezoid_weights",
    "inner_product",
    "beta_function",
    "beta_curve",
    "pointwise_transform",
]


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Equally spaced abscissae ``i / (n - 1)`` for ``i = 0..n-1``."""

    n: int
    points: np.ndarray

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Grid):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(("Grid", self.n))

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n - 1)


@lru_cache(maxsize=64)
def make_grid(n: int) -> Grid:
    if int(n) != n or n < 2:
        raise InvalidArgument(f"grid needs at least 2 points, got {n!r}")
    n = int(n)
    points = np.arange(n, dtype=np.float64) / (n - 1)
    points[-1] = 1.0
    return Grid(n, _readonly(points))


@lru_cache(maxsize=64)
def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n, 1.0 / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    w.setflags(write=False)
    return w


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Quadrature weights such that ``w @ f`` approximates the integral of f."""
    return _trapezoid_weights(grid.n)


@dataclass(frozen=True, eq=False)
class Curve:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.grid.n,):
            raise InvalidArgument(
                f"curve has {values.shape} values for a grid of {self.grid.n} points"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("curve values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Curve":
        return cls(grid, np.full(grid.n, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Curve":
        return cls(grid, fn(grid.points))

    def __len__(self):
        return self.grid.n


@dataclass(frozen=True, eq=False)
class MultiCurve:
    """p curves sharing one grid (a multivariate functional observation)."""

    channels: tuple

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise InvalidArgument("a MultiCurve needs at least one channel")
        grid = channels[0].grid
        for c in channels[1:]:
            if c.grid != grid:
                raise InvalidArgument("all channels must share one grid")
        object.__setattr__(self, "channels", channels)

    @property
    def grid(self) -> Grid:
        return self.channels[0].grid

    @property
    def p(self) -> int:
        return len(self.channels)

    def as_matrix(self) -> np.ndarray:
        """Samples as an ``(n_grid, p)`` matrix, one column per channel."""
        return np.stack([c.values for c in self.channels], axis=1)

    @classmethod
    def from_matrix(cls, grid: Grid, matrix) -> "MultiCurve":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != grid.n:
            raise InvalidArgument(
                f"expected a ({grid.n}, p) matrix, got shape {matrix.shape}"
            )
        return cls(tuple(Curve(grid, matrix[:, j]) for j in range(matrix.shape[1])))


def inner_product(a: Curve, b: Curve) -> float:
    """Trapezoid approximation of the L2[0, 1] inner product of two curves."""
    if a.grid != b.grid:
        raise InvalidArgument("inner product of curves on different grids")
    w = trapezoid_weights(a.grid)
    return float(np.sum(w * a.values * b.values))


# amplitude, frequency multiplier (in units of pi), trig function
_BETAS = {
    1: (5.0, 2.0, np.sin),
    2: (5.0, 3.0, np.sin),
    3: (3.0, 2.0, np.cos),
    4: (3.0, 3.0, np.cos),
}


def beta_function(j: int, t):
    """Evaluate the j-th simulation parameter function at ``t``."""
    if j not in _BETAS:
        raise InvalidArgument(f"beta index must be in 1..4, got {j!r}")
    amp, freq, fn = _BETAS[j]
    return amp * fn(freq * np.pi * np.asarray(t, dtype=np.float64))


def beta_curve(j: int, grid: Grid) -> Curve:
    return Curve(grid, beta_function(j, grid.points))


def pointwise_transform(c: Curve, kind: str) -> Curve:
    if kind == "square":
        return Curve(c.grid, np.square(c.values))
    if kind == "abs":
        return Curve(c.grid, np.abs(c.values))
    raise InvalidArgument(f"unknown pointwise transform {kind!r}")
