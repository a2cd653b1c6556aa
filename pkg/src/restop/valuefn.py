"""Grid-backed value functions on (0, inf) with analytic tails."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, GridMismatch

Z_MIN = 1e-4
Z_MAX = 1e3
N_GRID = 2000


def log_grid(z_min: float = Z_MIN, z_max: float = Z_MAX, n: int = N_GRID) -> np.ndarray:
    if not 0 < z_min < z_max or n < 4:
        raise DomainError("grid needs 0 < z_min < z_max and at least 4 nodes")
    return np.geomspace(z_min, z_max, n)


@dataclass(frozen=True)
class Continuation:
    """Continuation-region solution ``w(z) = C1 z^q1 + C2 z^q2`` on ``(a, b)``.

    ``lit`` is the stopped value to the left of ``a``.
    """

    a: float
    b: float
    C1: float
    C2: float
    q1: float
    q2: float
    lit: float = 1.0

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return self.C1 * z**self.q1 + self.C2 * z**self.q2

    def slope(self, z):
        z = np.asarray(z, dtype=float)
        return self.q1 * self.C1 * z ** (self.q1 - 1) + self.q2 * self.C2 * z ** (self.q2 - 1)

    def curvature(self, z):
        z = np.asarray(z, dtype=float)
        q1, q2 = self.q1, self.q2
        return q1 * (q1 - 1) * self.C1 * z ** (q1 - 2) + q2 * (q2 - 1) * self.C2 * z ** (q2 - 2)


@dataclass(frozen=True)
class ValueFunction:
    """Non-negative function sampled on an increasing grid.

    Between nodes the function is the shape-preserving (PCHIP) cubic through
    the samples; below the grid it continues from ``values[0]`` with slope
    ``left_slope`` (flat by default) and above it is the affine
    ``tail[0] + tail[1] * z``.  If ``continuation`` is given, the
    function is evaluated by the analytic continuation solution on ``(a, b)``
    and equals ``continuation.lit`` on ``(0, a]``.
    """

    grid: np.ndarray
    values: np.ndarray
    tail: tuple[float, float] = (0.0, 0.0)
    continuation: Optional[Continuation] = None
    left_slope: float = 0.0
    _pchip: PchipInterpolator = field(init=False, repr=False, compare=False)
    _dpchip: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        grid = np.ascontiguousarray(self.grid, dtype=float)
        values = np.ascontiguousarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise DomainError("grid and values must be 1-d arrays of equal length")
        if not np.all(np.diff(grid) > 0):
            raise DomainError("grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tail", (float(self.tail[0]), float(self.tail[1])))
        pp = PchipInterpolator(grid, values, extrapolate=False)
        object.__setattr__(self, "_pchip", pp)
        object.__setattr__(self, "_dpchip", pp.derivative())

    @classmethod
    def constant(cls, grid, c: float) -> "ValueFunction":
        return cls(grid, np.full(len(grid), float(c)), (float(c), 0.0))

    @classmethod
    def affine(cls, grid, c0: float, c1: float) -> "ValueFunction":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, c0 + c1 * grid, (c0, c1), left_slope=c1)

    @classmethod
    def from_callable(cls, grid, fn, tail=None) -> "ValueFunction":
        """Sample ``fn`` on ``grid``; the right tail defaults to the secant
        through the last two nodes."""
        grid = np.asarray(grid, dtype=float)
        vals = np.asarray(fn(grid), dtype=float)
        if tail is None:
            slope = (vals[-1] - vals[-2]) / (grid[-1] - grid[-2])
            tail = (vals[-1] - slope * grid[-1], slope)
        return cls(grid, vals, tail)

    @property
    def z_min(self) -> float:
        return float(self.grid[0])

    @property
    def z_max(self) -> float:
        return float(self.grid[-1])

    @property
    def n(self) -> int:
        return len(self.grid)

    def tail_gap(self) -> float:
        """Mismatch between the last node and the affine right tail."""
        return abs(self.values[-1] - (self.tail[0] + self.tail[1] * self.grid[-1]))

    def __call__(self, z):
        return self.eval(z)

    def eval(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(~(z > 0)):
            raise DomainError("value functions are defined on z > 0 only")
        return self._eval(z)

    def _eval(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.grid[0], self.grid[-1]
        out = self._pchip(np.clip(z, lo, hi))
        out = np.where(z < lo, self.values[0] + self.left_slope * (z - lo), out)
        out = np.where(z > hi, self.tail[0] + self.tail[1] * z, out)
        c = self.continuation
        if c is not None:
            inside = (z > c.a) & (z < c.b)
            if np.any(inside):
                out = np.where(inside, c.value(np.where(inside, z, 1.0)), out)
            out = np.where(z <= c.a, c.lit, out)
        return out

    def derivative(self, z, extrapolate: bool = False):
        """Derivative of the interpolant.

        Outside ``[z_min, z_max]`` raises DomainError unless ``extrapolate``
        is set, in which case the tail slopes are returned.
        """
        z = np.asarray(z, dtype=float)
        if not extrapolate and np.any((z < self.grid[0]) | (z > self.grid[-1])):
            raise DomainError("derivative requested outside the grid")
        return self._deriv(z)

    def _deriv(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.grid[0], self.grid[-1]
        out = self._dpchip(np.clip(z, lo, hi))
        out = np.where(z < lo, self.left_slope, out)
        out = np.where(z > hi, self.tail[1], out)
        c = self.continuation
        if c is not None:
            inside = (z > c.a) & (z < c.b)
            if np.any(inside):
                out = np.where(inside, c.slope(np.where(inside, z, 1.0)), out)
            out = np.where(z <= c.a, 0.0, out)
        return out

    def with_values(self, values, tail=None, continuation=None) -> "ValueFunction":
        return ValueFunction(self.grid, values, self.tail if tail is None else tail, continuation, self.left_slope)


def weighted_distance(g: ValueFunction, h: ValueFunction) -> float:
    """``max_i |g_i - h_i| / (1 + z_i)`` over the shared grid."""
    if g.grid.shape != h.grid.shape or not np.array_equal(g.grid, h.grid):
        raise GridMismatch("value functions live on different grids")
    return float(np.max(np.abs(g.values - h.values) / (1.0 + g.grid)))


def second_differences(g: ValueFunction) -> np.ndarray:
    """Differences of consecutive secant slopes; non-negative iff discretely convex."""
    s = np.diff(g.values) / np.diff(g.grid)
    return np.diff(s)


def is_nondecreasing(g: ValueFunction, tol: float = 0.0) -> bool:
    return bool(np.all(np.diff(g.values) >= -tol))


def is_discretely_convex(g: ValueFunction, rel_tol: float = 1e-8) -> bool:
    s = np.diff(g.values) / np.diff(g.grid)
    scale = max(1.0, float(np.max(np.abs(s))))
    return bool(np.all(np.diff(s) >= -rel_tol * scale))


REGIONS = ("SELL_LIT", "CONTINUE", "SELL_DARK")


def region_labels(grid, a: Optional[float], b: Optional[float]) -> list[str]:
    """Region of each node; ``a``/``b`` of None mean an empty continuation set
    with immediate dark orders everywhere."""
    if a is None or b is None:
        return ["SELL_DARK"] * len(grid)
    return ["SELL_LIT" if z <= a else "SELL_DARK" if z >= b else "CONTINUE" for z in grid]


def write_csv(path, g: ValueFunction, a=None, b=None, header: Sequence[str] = ()) -> None:
    """Dump ``z, u, u_prime, region`` for every grid node.

    ``header`` lines are written first, each prefixed with ``#``.
    """
    du = g.derivative(g.grid)
    labels = region_labels(g.grid, a, b)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["z", "u", "u_prime", "region"])
        for z, u, d, lab in zip(g.grid, g.values, du, labels):
            w.writerow([repr(float(z)), repr(float(u)), repr(float(d)), lab])
