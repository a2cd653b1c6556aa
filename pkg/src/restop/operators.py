"""The delay-averaging operator and the inner stopping payoff.

For a candidate value function ``g`` the operator is

    Pi g(z) = int_0^inf e^{-disc t} E_z[ p (1 + Z_t) + (1 - p) g(Z_t) ] F(dt)

with ``Z`` the reduced geometric Brownian motion.  The linear part uses the
exact mean ``E[Z_t] = z exp(z_drift t)``.  For the ``g`` part two rules are
available, both combined with the delay law's own quadrature in ``t``:

``"linear"`` (default)
    ``g`` is read as the piecewise-linear interpolant of its node values
    with flat left and affine right tails, i.e. an affine function plus a
    positive combination of put payoffs ``(z_k - x)^+``.  Each put has a
    closed-form lognormal expectation, so the expectation is exact for the
    interpolant and monotonicity and convexity carry over to ``Pi g``
    without quadrature noise.  On a geometric grid the put prices depend on
    the node offset only, and the grid evaluation is a single correlation.
``"hermite"``
    Gauss-Hermite nodes in the Gaussian log-increment applied to the full
    interpolant of ``g``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .errors import DomainError, NoBracket
from .model import ValidatedModel
from .valuefn import ValueFunction

GH_NODES = 64
LOG_CLAMP = 600.0  # exp() of larger log-arguments is replaced by this bound
METHODS = ("linear", "hermite")
_PRUNE = 1e-18
_CHUNK = 1 << 21

LIT, DARK = "LIT", "DARK"


def _npdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


class _Kinks:
    """Put-payoff decomposition of the linear interpolant of ``g``.

    ``g_lin(x) = A + c1 x + sum_k dbeta_k (z_k - x)^+ + J 1{x > z_last}``
    where ``A + c1 x`` is the line of tail slope through the last node and
    ``J`` the jump between that node and the declared affine tail.  The
    left tail enters through the first kink.
    """

    def __init__(self, g: ValueFunction):
        z, v = g.grid, g.values
        c0, c1 = g.tail
        beta = np.diff(v) / np.diff(z)
        ext = np.concatenate(([g.left_slope], beta, [c1]))
        self.z = z
        self.dbeta = np.diff(ext)
        self.c1 = c1
        self.A = v[-1] - c1 * z[-1]
        self.J = c0 + c1 * z[-1] - v[-1]
        self.logz = np.log(z)
        self.zdb = z * self.dbeta
        # suffix sums over nodes so far in the money that the put is linear
        self.suf0 = np.append(np.cumsum(self.dbeta[::-1])[::-1], 0.0)
        self.suf1 = np.append(np.cumsum(self.zdb[::-1])[::-1], 0.0)


class PiTransform:
    """Delay operator for a validated model, with a fixed quadrature rule."""

    def __init__(self, model: ValidatedModel, gh_nodes: int = GH_NODES, method: str = "linear"):
        if method not in METHODS:
            raise DomainError(f"unknown quadrature method {method!r}")
        self.model = model
        self.method = method
        self.gh_nodes = int(gh_nodes)
        c = model.constants
        p = model.p
        self._p = p

        t = model.delay.nodes
        wt = model.delay.weights * np.exp(-c.disc * t)
        # delay part of the linear term, integrated with the same rule
        self.m0_q = float(wt.sum())
        self.m1_q = float(np.dot(wt, np.exp(c.z_drift * t)))

        # Gaussian log-increment of Z over each delay node: N(mean, sd^2)
        atom = t <= 0.0
        self._w_atom = float(wt[atom].sum())
        self._w = wt[~atom]
        self._mean = (c.z_drift - 0.5 * c.beta_sq) * t[~atom]
        self._sd = np.sqrt(c.beta_sq * t[~atom])
        self._M = np.exp(c.z_drift * t[~atom])
        self._grid_cache: dict = {}
        self._kinks: tuple = (None, None)

        x, w = np.polynomial.hermite.hermgauss(self.gh_nodes)
        xi = math.sqrt(2.0) * x
        omega = w / math.sqrt(math.pi)
        shift = (c.z_drift - 0.5 * c.beta_sq) * t[:, None] + math.sqrt(c.beta_sq) * np.sqrt(t)[:, None] * xi[None, :]
        weight = wt[:, None] * omega[None, :]
        shift, weight = shift.ravel(), weight.ravel()
        keep = weight > _PRUNE * weight.max()
        shift, weight = shift[keep], weight[keep]
        self.clamped = bool(np.any(np.abs(shift) > LOG_CLAMP))
        shift = np.clip(shift, -LOG_CLAMP, LOG_CLAMP)
        self._factor = np.exp(shift)
        self._weight = weight

    @property
    def lit(self) -> float:
        return self.model.lit

    def _points(self, z: np.ndarray):
        step = max(1, _CHUNK // len(self._factor))
        for i in range(0, len(z), step):
            zz = z[i : i + step]
            yield i, zz, zz[:, None] * self._factor[None, :]

    def _grid_kernels(self, grid: np.ndarray):
        """Put prices, deltas and tail weights indexed by node offset ``k - i``."""
        key = (len(grid), float(grid[0]), float(grid[-1]))
        hit = self._grid_cache.get(key)
        if hit is not None and np.array_equal(hit[0], grid):
            return hit[1]
        lg = np.log(grid)
        h = np.diff(lg)
        if np.ptp(h) > 1e-9 * h.mean():
            return None
        n = len(grid)
        off = np.arange(-(n - 1), n) * h.mean()
        put = np.zeros(2 * n - 1)
        delta = np.zeros(2 * n - 1)
        over = np.zeros(2 * n - 1)
        dover = np.zeros(2 * n - 1)
        ratio = np.exp(off)
        for w, m, s, M in zip(self._w, self._mean, self._sd, self._M):
            x = (off - m) / s
            f1, f2 = ndtr(x), ndtr(x - s)
            put += w * (ratio * f1 - M * f2)
            delta += w * M * f2
            over += w * ndtr(-x)
            dover += w * _npdf(x) / s
        kern = (put, delta, over, dover)
        self._grid_cache[key] = (grid.copy(), kern)
        return kern

    def _linear_on_grid(self, g: ValueFunction, kern, deriv: bool):
        put, delta, over, dover = kern
        k = self._kinks_of(g)
        z = g.grid
        n = len(z)
        m0d, m1d = float(self._w.sum()), float(np.dot(self._w, self._M))
        if deriv:
            s_delta = np.correlate(delta, k.dbeta, "valid")[::-1]
            out = k.c1 * m1d - s_delta + k.J * dover[n - 1 :][::-1] / z
            if self._w_atom:
                out = out + self._w_atom * g._deriv(z)
        else:
            s_put = np.correlate(put, k.dbeta, "valid")[::-1]
            out = k.A * m0d + k.c1 * z * m1d + z * s_put + k.J * over[n - 1 :][::-1]
            if self._w_atom:
                out = out + self._w_atom * g.values
        return out

    def _kinks_of(self, g: ValueFunction) -> _Kinks:
        if self._kinks[0] is not g:
            self._kinks = (g, _Kinks(g))
        return self._kinks[1]

    def _linear_point(self, k: _Kinks, z: float, deriv: bool) -> float:
        """Single-point evaluation, restricted to nodes within 10 sd of each Gaussian."""
        lz = math.log(z)
        acc = 0.0
        xl_all = (k.logz[-1] - lz - self._mean) / self._sd
        for w, m, s, M, xl in zip(self._w, self._mean, self._sd, self._M, xl_all):
            lo = int(np.searchsorted(k.logz, lz + m - 10.0 * s))
            hi = int(np.searchsorted(k.logz, lz + m + s * (s + 10.0)))
            x = (k.logz[lo:hi] - lz - m) / s
            f2 = float(ndtr(x - s) @ k.dbeta[lo:hi])
            if deriv:
                acc += w * (-M * (f2 + k.suf0[hi]) + k.J * float(_npdf(xl)) / (s * z))
            else:
                f1 = float(ndtr(x) @ k.zdb[lo:hi])
                acc += w * (f1 + k.suf1[hi] - z * M * (f2 + k.suf0[hi]) + k.J * float(ndtr(-xl)))
        return acc

    def _linear_general(self, g: ValueFunction, z: np.ndarray, deriv: bool):
        k = self._kinks_of(g)
        lk = k.logz
        m0d, m1d = float(self._w.sum()), float(np.dot(self._w, self._M))
        out = np.empty_like(z)
        if len(z) <= 8:
            acc = np.array([self._linear_point(k, float(zz), deriv) for zz in z])
        else:
            acc = np.zeros_like(z)
            step = max(1, (1 << 20) // len(lk))
            for i in range(0, len(z), step):
                zz = z[i : i + step]
                L = lk[None, :] - np.log(zz)[:, None]
                for w, m, s, M in zip(self._w, self._mean, self._sd, self._M):
                    x = (L - m) / s
                    f2 = ndtr(x - s) @ k.dbeta
                    xl = x[:, -1]
                    if deriv:
                        acc[i : i + step] += w * (-M * f2 + k.J * _npdf(xl) / (s * zz))
                    else:
                        acc[i : i + step] += w * (ndtr(x) @ k.zdb - zz * M * f2 + k.J * ndtr(-xl))
        if deriv:
            out = k.c1 * m1d + acc
        else:
            out = k.A * m0d + k.c1 * z * m1d + acc
        if self._w_atom:
            out = out + self._w_atom * (g._deriv(z) if deriv else g._eval(z))
        return out

    def _expect(self, g: ValueFunction, flat: np.ndarray, deriv: bool) -> np.ndarray:
        """Delay-discounted ``E[g(Z_t)]`` (or ``E[g'(Z_t) Z_t^1]``) at ``flat``."""
        if self.method == "linear":
            if flat.shape == g.grid.shape and np.array_equal(flat, g.grid):
                kern = self._grid_kernels(g.grid)
                if kern is not None:
                    return self._linear_on_grid(g, kern, deriv)
            return self._linear_general(g, flat, deriv)
        acc = np.empty_like(flat)
        wf = self._weight * self._factor if deriv else self._weight
        for i, zz, pts in self._points(flat):
            acc[i : i + len(zz)] = (g._deriv(pts) if deriv else g._eval(pts)) @ wf
        return acc

    def apply_pi(self, g: Optional[ValueFunction], z):
        """``Pi g`` at ``z`` (scalar or array).  ``g=None`` means ``g = 0``."""
        z = np.asarray(z, dtype=float)
        if np.any(~(z > 0)):
            raise DomainError("Pi is defined on z > 0 only")
        flat = np.atleast_1d(z).ravel()
        out = self._p * (self.m0_q + self.m1_q * flat)
        if g is not None:
            out = out + (1.0 - self._p) * self._expect(g, flat, False)
        return out.reshape(z.shape) if z.ndim else float(out[0])

    def apply_pi_derivative(self, g: Optional[ValueFunction], z):
        """``(Pi g)'`` at ``z``, differentiating under the expectation."""
        z = np.asarray(z, dtype=float)
        if np.any(~(z > 0)):
            raise DomainError("Pi is defined on z > 0 only")
        flat = np.atleast_1d(z).ravel()
        out = np.full_like(flat, self._p * self.m1_q)
        if g is not None:
            out = out + (1.0 - self._p) * self._expect(g, flat, True)
        return out.reshape(z.shape) if z.ndim else float(out[0])

    def payoff(self, g, z):
        """Inner stopping payoff ``max(lit, Pi g)``."""
        return np.maximum(self.lit, self.apply_pi(g, z))

    def payoff_region(self, g, z):
        """DARK where ``Pi g`` strictly beats the lit sale; ties go to LIT."""
        pig = np.asarray(self.apply_pi(g, z))
        reg = np.where(pig > self.lit, DARK, LIT)
        return reg if reg.ndim else str(reg)

    def crossing_z0(self, g: Optional[ValueFunction], z_lo: float, z_hi: float, rtol: float = 1e-12) -> Optional[float]:
        """Root of ``Pi g = lit`` in ``[z_lo, z_hi]``.

        Returns None when ``Pi g`` already exceeds the lit payoff at ``z_lo``
        (the indifference point degenerates to zero).
        """
        lit = self.lit
        f_lo = self.apply_pi(g, z_lo) - lit
        if f_lo > 0:
            return None
        f_hi = self.apply_pi(g, z_hi) - lit
        if f_hi < 0:
            raise NoBracket(f"Pi g stays below the lit payoff on [{z_lo}, {z_hi}]")
        # bisect in log z: relative accuracy is what matters
        f = lambda x: self.apply_pi(g, math.exp(x)) - lit
        x0 = brentq(f, math.log(z_lo), math.log(z_hi), xtol=rtol, rtol=4 * np.finfo(float).eps, maxiter=400)
        return math.exp(x0)


def crossing_z0(pi: PiTransform, g: ValueFunction) -> Optional[float]:
    return pi.crossing_z0(g, g.z_min, g.z_max)
