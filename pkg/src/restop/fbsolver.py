"""Two-boundary free-boundary solve for the inner stopping problem.

On the continuation interval ``(a, b)`` the value solves
``0.5 beta^2 z^2 w'' + z_drift z w' - disc w = 0``, whose solutions are
``C1 z^q1 + C2 z^q2``.  Value and smooth fit at ``a`` against the lit payoff
fix ``C1, C2`` in closed form, leaving the two non-local fit conditions at
``b`` against the dark payoff ``P = Pi g`` as equations for ``(a, b)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import NoConvergence, StructureViolation
from .operators import PiTransform
from .model import affine_tail_step
from .valuefn import Continuation, ValueFunction

log = logging.getLogger(__name__)

MAX_STEPS = 200
FD_STEP = 1e-6
BOUNDARY_TOL = 1e-8
DOMINANCE_TOL = 1e-8


@dataclass(frozen=True)
class BoundaryCandidate:
    a: float
    b: float
    C1: float
    C2: float
    method: str = "newton"
    steps: int = 0


def coefficients_from_a(a: float, q1: float, q2: float, lit: float = 1.0) -> tuple[float, float]:
    """Coefficients with ``w(a) = lit`` and ``w'(a) = 0``."""
    d = q1 - q2
    return -q2 * lit / (d * a**q1), q1 * lit / (d * a**q2)


def _w(C1, C2, q1, q2, z):
    return C1 * z**q1 + C2 * z**q2


def _dw(C1, C2, q1, q2, z):
    return q1 * C1 * z ** (q1 - 1) + q2 * C2 * z ** (q2 - 1)


def residuals_at_b(P: Callable, dP: Callable, cand: BoundaryCandidate, q1: float, q2: float):
    """``(w(b) - P(b), w'(b) - P'(b))`` for a candidate."""
    b = cand.b
    return (
        _w(cand.C1, cand.C2, q1, q2, b) - P(b),
        _dw(cand.C1, cand.C2, q1, q2, b) - dP(b),
    )


class _System:
    """Scaled residuals in log-coordinates ``(log a, log b)``."""

    def __init__(self, P, dP, q1, q2, lit):
        self.P, self.dP, self.q1, self.q2, self.lit = P, dP, q1, q2, lit

    def __call__(self, x):
        a, b = math.exp(x[0]), math.exp(x[1])
        C1, C2 = coefficients_from_a(a, self.q1, self.q2, self.lit)
        r1 = (_w(C1, C2, self.q1, self.q2, b) - self.P(b)) / (1.0 + b)
        r2 = (_dw(C1, C2, self.q1, self.q2, b) - self.dP(b)) * b / (1.0 + b)
        return np.array([r1, r2])


def _newton(F: _System, x0, z0, z_lo, z_hi, max_steps=MAX_STEPS):
    x = np.array(x0, dtype=float)
    lz0, llo, lhi = math.log(z0), math.log(z_lo), math.log(z_hi)
    r = F(x)
    nr = float(np.max(np.abs(r)))
    for k in range(1, max_steps + 1):
        if nr < 1e-15:
            return x, nr, k
        J = np.empty((2, 2))
        for j in range(2):
            xp = x.copy()
            xp[j] += FD_STEP
            J[:, j] = (F(xp) - r) / FD_STEP
        try:
            dx = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        improved = False
        for _ in range(40):
            xn = x + lam * dx
            if llo < xn[0] < lz0 and lz0 < xn[1] < lhi:
                rn = F(xn)
                nrn = float(np.max(np.abs(rn)))
                if nrn < nr:
                    improved = True
                    break
            lam *= 0.5
        if not improved:
            return x, nr, k
        step = float(np.max(np.abs(xn - x)))
        x, r, nr = xn, rn, nrn
        if step < 1e-15:
            return x, nr, k
    return x, nr, max_steps


def _nested_bisection(P, dP, q1, q2, lit, z0, z_lo, z_hi, n_scan=400):
    """Outer root search on ``a``, inner minimization of ``w_a - P`` over ``b``."""
    bs = np.geomspace(z0 * (1 + 1e-6), z_hi, n_scan)
    Pb = np.asarray(P(bs))

    def inner(a):
        C1, C2 = coefficients_from_a(a, q1, q2, lit)
        D = _w(C1, C2, q1, q2, bs) - Pb
        i = int(np.argmin(D))
        lo, hi = bs[max(i - 1, 0)], bs[min(i + 1, n_scan - 1)]
        g = lambda b: _dw(C1, C2, q1, q2, b) - dP(b)
        glo, ghi = g(lo), g(hi)
        if glo < 0 < ghi:
            b = brentq(g, lo, hi, xtol=1e-14 * hi, maxiter=MAX_STEPS)
        else:
            b = bs[i]
        return _w(C1, C2, q1, q2, b) - P(b), b

    a_lo, a_hi = z_lo, z0 * (1 - 1e-6)
    h_lo, h_hi = inner(a_lo)[0], inner(a_hi)[0]
    if not (h_lo > 0 > h_hi):
        raise NoConvergence(f"no sign change for the lower boundary on [{a_lo:.3g}, {a_hi:.3g}]")
    xa = brentq(lambda x: inner(math.exp(x))[0], math.log(a_lo), math.log(a_hi), xtol=1e-14, maxiter=MAX_STEPS)
    a = math.exp(xa)
    return a, inner(a)[1]


def solve_boundaries(
    P: Callable,
    dP: Callable,
    q1: float,
    q2: float,
    z0: float,
    z_lo: float,
    z_hi: float,
    lit: float = 1.0,
    guess: Optional[tuple[float, float]] = None,
) -> BoundaryCandidate:
    """Find ``(a, b)`` with ``z_lo < a < z0 < b < z_hi`` satisfying value and
    smooth fit against ``lit`` at ``a`` and against ``P`` at ``b``.

    Damped Newton from ``guess`` (default ``(z0/2, 2 z0)``); on failure a
    nested bisection produces a starting point that Newton then polishes.
    """
    F = _System(P, dP, q1, q2, lit)
    tol = BOUNDARY_TOL
    method = "newton"
    a0, b0 = guess if guess is not None else (0.5 * z0, 2.0 * z0)
    a0 = min(max(a0, z_lo * 1.01), z0 * (1 - 1e-6))
    b0 = max(min(b0, z_hi * 0.99), z0 * (1 + 1e-6))
    x, nr, steps = _newton(F, [math.log(a0), math.log(b0)], z0, z_lo, z_hi)
    if not nr <= 1e-12:
        a1, b1 = _nested_bisection(P, dP, q1, q2, lit, z0, z_lo, z_hi)
        x, nr, s2 = _newton(F, [math.log(a1), math.log(b1)], z0, z_lo, z_hi)
        steps += s2
        method = "bisection+newton"
    a, b = math.exp(x[0]), math.exp(x[1])
    if not nr <= tol:
        raise NoConvergence(f"free-boundary residual {nr:.3e} after {steps} steps")
    C1, C2 = coefficients_from_a(a, q1, q2, lit)
    return BoundaryCandidate(a, b, C1, C2, method, steps)


def apply_gamma_tilde(pi: PiTransform, g: ValueFunction, guess=None):
    """One application of the inner stopping operator to ``g``.

    Returns ``(g_plus, candidate, z0)``.  Nodes left of ``a`` carry the lit
    payoff, nodes in ``(a, b)`` the continuation solution, nodes right of
    ``b`` the dark payoff ``Pi g``.
    """
    model = pi.model
    c = model.constants
    lit = pi.lit
    grid = g.grid
    z0 = pi.crossing_z0(g, g.z_min, g.z_max)
    if z0 is None:
        raise StructureViolation("Pi g exceeds the lit payoff at z_min: no lower boundary")
    P = lambda z: pi.apply_pi(g, z)
    dP = lambda z: pi.apply_pi_derivative(g, z)
    cand = solve_boundaries(P, dP, c.q1, c.q2, z0, g.z_min, g.z_max, lit, guess)

    vals = np.full(len(grid), lit)
    payoff = np.maximum(lit, pi.apply_pi(g, grid))
    inside = (grid > cand.a) & (grid < cand.b)
    vals[inside] = _w(cand.C1, cand.C2, c.q1, c.q2, grid[inside])
    right = grid >= cand.b
    vals[right] = payoff[right]
    slack = vals - payoff
    worst = float(np.min(slack / (1.0 + grid)))
    if worst < -DOMINANCE_TOL:
        i = int(np.argmin(slack / (1.0 + grid)))
        raise StructureViolation(
            f"continuation value falls below the payoff at z={grid[i]:.6g} by {-slack[i]:.3e}"
        )
    cont = Continuation(cand.a, cand.b, cand.C1, cand.C2, c.q1, c.q2, lit)
    g_plus = ValueFunction(grid, vals, affine_tail_step(model, *g.tail), cont)
    return g_plus, cand, z0
