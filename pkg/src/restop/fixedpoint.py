"""Outer Picard iteration ``g <- Gamma g`` to the value function."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CertificateFailure, MaxIterations, StructureViolation
from .fbsolver import apply_gamma_tilde
from .model import Regime, ValidatedModel
from .operators import GH_NODES, PiTransform
from .valuefn import N_GRID, Z_MAX, Z_MIN, ValueFunction, log_grid, weighted_distance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    z_min: float = Z_MIN
    z_max: float = Z_MAX
    n_grid: int = N_GRID
    gh_nodes: int = GH_NODES
    quadrature: str = "linear"
    fp_tol: float = 1e-9
    max_iter: int = 200

    def grid(self) -> np.ndarray:
        return log_grid(self.z_min, self.z_max, self.n_grid)

    def transform(self, model: ValidatedModel) -> PiTransform:
        return PiTransform(model, self.gh_nodes, self.quadrature)


@dataclass
class SolveResult:
    """Fixed point and optimal boundaries.

    ``a_star``/``b_star`` are None when the continuation set is empty and a
    dark order is optimal everywhere (``closed_form`` is then True).
    """

    model: ValidatedModel
    options: SolverOptions
    u: ValueFunction
    a_star: Optional[float]
    b_star: Optional[float]
    z0: float
    C1: Optional[float]
    C2: Optional[float]
    iterations: int
    history: list[float]
    boundary_history: list[tuple[float, float]] = field(default_factory=list)
    residual: float = 0.0
    closed_form: bool = False
    pi: Optional[PiTransform] = field(default=None, repr=False)

    @property
    def delta0(self) -> float:
        return self.history[0] if self.history else 0.0

    def iteration_bound(self) -> int:
        """A-priori iteration bound from the contraction rate ``1 - p``."""
        if not self.history:
            return 0
        return math.ceil(math.log(self.options.fp_tol / self.delta0) / math.log(1.0 - self.model.p))

    def value(self, z):
        return self.u.eval(z)

    def to_json(self) -> dict:
        return {
            "a_star": self.a_star,
            "b_star": self.b_star,
            "z0": self.z0,
            "C1": self.C1,
            "C2": self.C2,
            "iterations": self.iterations,
            "residual": self.residual,
            "history": list(self.history),
            "b_star_sequence": [b for _, b in self.boundary_history],
            "a_star_sequence": [a for a, _ in self.boundary_history],
            "closed_form": self.closed_form,
            "tail": list(self.u.tail),
        }


def immediate_dark(model: ValidatedModel) -> bool:
    """Whether placing a dark order at once is optimal everywhere.

    That is the case when the delay operator's affine fixed point already
    beats the lit sale at ``z = 0``: either all delay mass sits at zero, or
    ``r == mu1`` so that waiting costs nothing in units of ``S``.
    """
    return model.F0 >= 1.0 or model.regime is Regime.R_EQUALS_MU1


def solve(model: ValidatedModel, opts: SolverOptions = SolverOptions()) -> SolveResult:
    grid = opts.grid()
    pi = opts.transform(model)
    lit = model.lit

    if immediate_dark(model):
        c0, c1 = model.tail_coefficients()
        if c0 < lit:
            raise StructureViolation("affine fixed point lies below the lit payoff")
        u = ValueFunction.affine(grid, c0, c1)
        resid = weighted_distance(u, u.with_values(pi.apply_pi(u, grid)))
        return SolveResult(model, opts, u, None, None, 0.0, None, None, 0, [], [], resid, True, pi)

    g = ValueFunction.constant(grid, lit)
    history: list[float] = []
    bounds: list[tuple[float, float]] = []
    guess = None
    for n in range(1, opts.max_iter + 1):
        g_next, cand, z0 = apply_gamma_tilde(pi, g, guess)
        delta = weighted_distance(g_next, g)
        history.append(delta)
        bounds.append((cand.a, cand.b))
        guess = (cand.a, cand.b)
        log.debug("iter %d: delta=%.3e a=%.10g b=%.10g", n, delta, cand.a, cand.b)
        g = g_next
        if delta <= opts.fp_tol:
            break
    else:
        raise MaxIterations(f"no convergence in {opts.max_iter} iterations", history)

    # one more application certifies the residual of the returned iterate
    g_check, cand_check, _ = apply_gamma_tilde(pi, g, guess)
    resid = weighted_distance(g_check, g)
    z0_u = pi.crossing_z0(g, g.z_min, g.z_max)
    return SolveResult(
        model, opts, g, cand.a, cand.b, z0_u, cand.C1, cand.C2, n, history, bounds, resid, False, pi
    )


def boundary_slopes(result: SolveResult) -> dict:
    """One-sided derivatives of ``u`` at both boundaries.

    Inside the continuation interval ``u`` is the analytic power-basis
    solution; left of ``a`` it is the constant lit payoff; right of ``b`` it
    is ``Pi u``, whose slope is evaluated by quadrature on the returned
    fixed point.  A centred difference of ``Pi u`` is included as an
    independent check of the quadrature derivative.
    """
    if result.closed_form:
        return {}
    c = result.u.continuation
    pi = result.pi
    a, b = result.a_star, result.b_star
    h = 1e-5 * b
    fd = (pi.apply_pi(result.u, b + h) - pi.apply_pi(result.u, b - h)) / (2 * h)
    return {
        "a_left": 0.0,
        "a_right": float(c.slope(a)),
        "b_left": float(c.slope(b)),
        "b_right": float(pi.apply_pi_derivative(result.u, b)),
        "b_right_fd": float(fd),
        "value_gap_b": float(c.value(b) - pi.apply_pi(result.u, b)),
    }


def u_at_zero_check(result: SolveResult) -> dict:
    u = result.u
    z = u.z_min
    val = float(u.eval(z))
    pi_val = float(result.pi.apply_pi(u, z))
    lit = result.model.lit
    if result.closed_form:
        ok = abs(val - u.tail[0] - u.tail[1] * z) <= 1e-12
    else:
        ok = abs(val - lit) <= 1e-6 and pi_val < lit
    return {"z_min": z, "u_zmin": val, "pi_u_zmin": pi_val, "m0": result.model.m0, "ok": bool(ok)}


def random_monotone_function(grid: np.ndarray, rng: np.random.Generator, base: float = 1.0, n_terms: int = 4):
    """Random non-decreasing convex function with ``g(0+) = base``.

    A positive combination of shifted softplus ramps, each vanishing at
    zero; the affine asymptote gives the exact right tail.
    """
    w = rng.uniform(0.05, 0.6, n_terms)
    k = np.exp(rng.uniform(math.log(0.01), math.log(20.0), n_terms))
    s = k * rng.uniform(0.05, 1.0, n_terms)

    def ramp(z):
        z = np.asarray(z, dtype=float)[..., None]
        return (s * (np.logaddexp(0.0, (z - k) / s) - np.logaddexp(0.0, -k / s)) * w).sum(-1)

    vals = base + ramp(grid)
    # asymptote of s*log(1+e^{(z-k)/s}) is z - k
    c0 = base + float(np.sum(w * (-k - s * np.logaddexp(0.0, -k / s))))
    c1 = float(np.sum(w))
    return ValueFunction(grid, vals, (c0, c1))


def contraction_certificate(
    model: ValidatedModel,
    trials: int = 100,
    seed: int = 0,
    opts: SolverOptions = SolverOptions(),
    slack: float = 1e-6,
) -> dict:
    """Empirical Lipschitz ratio of the inner stopping operator.

    Draws ``trials`` random pairs of monotone functions and checks
    ``||Gamma g - Gamma h|| <= (1 - p) ||g - h|| (1 + slack)``.
    """
    grid = opts.grid()
    pi = opts.transform(model)
    rng = np.random.default_rng(seed)
    bound = (1.0 - model.p) * (1.0 + slack)
    ratios = []
    worst = None
    for i in range(trials):
        g = random_monotone_function(grid, rng, model.lit)
        if i % 4 == 3:
            # shift along the weight function, kept small so h(0+) stays below the crossing level
            eps = rng.uniform(0.005, 0.05)
            h = ValueFunction(grid, g.values + eps * (1 + grid), (g.tail[0] + eps, g.tail[1] + eps), left_slope=eps)
        else:
            h = random_monotone_function(grid, rng, model.lit)
        d_in = weighted_distance(g, h)
        if d_in == 0.0:
            continue
        gg = apply_gamma_tilde(pi, g)[0]
        hh = apply_gamma_tilde(pi, h)[0]
        ratio = weighted_distance(gg, hh) / d_in
        ratios.append(ratio)
        if ratio > bound:
            worst = (i, ratio)
    report = {
        "trials": len(ratios),
        "max_ratio": max(ratios) if ratios else 0.0,
        "mean_ratio": float(np.mean(ratios)) if ratios else 0.0,
        "bound": bound,
    }
    if worst is not None:
        raise CertificateFailure(f"pair {worst[0]} has ratio {worst[1]:.9f} > {bound:.9f}")
    return report
