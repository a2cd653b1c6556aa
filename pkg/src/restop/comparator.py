"""One-off dark-pool access: a failed dark order is followed by a lit sale.

The dark payoff becomes the affine function

    A(z) = p (m0 + m1 z) + (1 - p) gamma m0

so the free-boundary system closes with a single solve and no outer
iteration.  Comparing with the recursive solution gives the premium of
unlimited access and the orderings of the two wedges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import OrderingViolation
from .fbsolver import BoundaryCandidate, solve_boundaries
from .fixedpoint import SolveResult, SolverOptions
from .model import Regime, ValidatedModel
from .valuefn import Continuation, ValueFunction

ORDER_TOL = 1e-7
PREMIUM_TOL = 1e-8


def affine_payoff(model: ValidatedModel) -> tuple[float, float]:
    """Intercept and slope of ``A``."""
    p = model.p
    return p * model.m0 + (1 - p) * model.gamma * model.m0, p * model.m1


def payoff_A(model: ValidatedModel, z):
    a0, a1 = affine_payoff(model)
    z = np.asarray(z, dtype=float)
    out = a0 + a1 * z
    return out if out.ndim else float(out)


@dataclass
class ComparatorResult:
    model: ValidatedModel
    u_hat: ValueFunction
    a_hat: Optional[float]
    b_hat: Optional[float]
    z0_hat: float
    C1: Optional[float]
    C2: Optional[float]
    closed_form: bool
    candidate: Optional[BoundaryCandidate] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "a_hat": self.a_hat,
            "b_hat": self.b_hat,
            "z0_hat": self.z0_hat,
            "C1": self.C1,
            "C2": self.C2,
            "closed_form": self.closed_form,
            "A": list(affine_payoff(self.model)),
        }


def solve_comparator(model: ValidatedModel, opts: SolverOptions = SolverOptions()) -> ComparatorResult:
    grid = opts.grid()
    lit = model.lit
    a0, a1 = affine_payoff(model)
    c = model.constants
    if a0 >= lit:
        # A already beats the lit sale at z = 0 and e^{-disc t} A(Z_t) is a
        # supermartingale, so the dark order is placed at once
        return ComparatorResult(model, ValueFunction.affine(grid, a0, a1), None, None, 0.0, None, None, True)
    z0 = (lit - a0) / a1
    P = lambda z: a0 + a1 * np.asarray(z, dtype=float)
    dP = lambda z: a1 + 0.0 * np.asarray(z, dtype=float)
    cand = solve_boundaries(P, dP, c.q1, c.q2, z0, grid[0], grid[-1], lit)
    cont = Continuation(cand.a, cand.b, cand.C1, cand.C2, c.q1, c.q2, lit)
    vals = np.where(grid <= cand.a, lit, np.where(grid >= cand.b, a0 + a1 * grid, cont.value(grid)))
    u_hat = ValueFunction(grid, vals, (a0, a1), cont)
    return ComparatorResult(model, u_hat, cand.a, cand.b, z0, cand.C1, cand.C2, False, cand)


def premium_grid(result: SolveResult, comp: ComparatorResult) -> np.ndarray:
    """``u - u_hat`` on the shared grid."""
    return result.u.values - comp.u_hat.values


def premium(result: SolveResult, comp: ComparatorResult, s, k):
    """``delta(s, k) = s (u(k/s) - u_hat(k/s))``."""
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    z = k / s
    out = s * (result.u.eval(z) - comp.u_hat.eval(z))
    return out if out.ndim else float(out)


def _gap(x, y):
    return (0.0 if x is None else x) - (0.0 if y is None else y)


def ordering_report(result: SolveResult, comp: ComparatorResult, tol: float = ORDER_TOL) -> dict:
    """Check the stopping-set inclusions and report the boundary gaps.

    Always asserted: ``u_hat <= u`` and ``{u = lit} subset {u_hat = lit}``.
    In the ``r = mu1`` regime additionally ``{u_hat = A} subset {u = Pi u}``.
    An empty wedge counts as boundaries at zero.
    """
    model = result.model
    grid = result.u.grid
    lit = model.lit
    u, uh = result.u.values, comp.u_hat.values
    scale = 1.0 + grid
    bad_value = np.flatnonzero(uh - u > PREMIUM_TOL * scale)
    lit_u = np.abs(u - lit) <= tol * scale
    lit_uh = np.abs(uh - lit) <= tol * scale
    bad_lit = np.flatnonzero(lit_u & ~lit_uh)
    problems = []
    if len(bad_value):
        problems.append(f"u_hat > u at z = {grid[bad_value[:5]].tolist()}")
    if len(bad_lit):
        problems.append(f"u = lit but u_hat != lit at z = {grid[bad_lit[:5]].tolist()}")
    b_asserted = model.regime is Regime.R_EQUALS_MU1
    bad_dark = np.array([], dtype=int)
    if b_asserted:
        pu = result.pi.apply_pi(result.u, grid)
        dark_uh = np.abs(uh - payoff_A(model, grid)) <= tol * scale
        dark_u = np.abs(u - pu) <= tol * scale
        bad_dark = np.flatnonzero(dark_uh & ~dark_u)
        if len(bad_dark):
            problems.append(f"u_hat = A but u != Pi u at z = {grid[bad_dark[:5]].tolist()}")
    a_gap = _gap(comp.a_hat, result.a_star)
    b_gap = _gap(comp.b_hat, result.b_star)
    if a_gap < -tol:
        problems.append(f"a_hat < a_star by {-a_gap:.3e}")
    if b_asserted and b_gap < -tol:
        problems.append(f"b_hat < b_star by {-b_gap:.3e}")
    report = {
        "a_star": result.a_star,
        "b_star": result.b_star,
        "a_hat": comp.a_hat,
        "b_hat": comp.b_hat,
        "z0": result.z0,
        "z0_hat": comp.z0_hat,
        "a_gap": a_gap,
        "b_gap": b_gap,
        "b_order_asserted": b_asserted,
        "min_premium": float(np.min((u - uh) / scale)),
    }
    if problems:
        raise OrderingViolation("; ".join(problems))
    return report


def write_premium_csv(path, result: SolveResult, comp: ComparatorResult, s_values, k_values, header: Sequence[str] = ()):
    """Premium surface on the lattice ``s_values x k_values``."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["s", "k", "premium"])
        for s in s_values:
            d = premium(result, comp, np.full(len(k_values), s), np.asarray(k_values, dtype=float))
            for k, v in zip(k_values, d):
                w.writerow([repr(float(s)), repr(float(k)), repr(float(v))])
