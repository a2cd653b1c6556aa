"""Bermudan (discrete-time) reference solver and a hitting-time Monte Carlo check.

The oracle replaces continuous monitoring by exercise dates ``dt`` apart and
solves the discrete Bellman equation

    w = max(G, e^{-disc dt} T w)

on the log-z grid, where ``T`` is the exact lognormal transition of ``Z``
over one step applied to the cubic Lagrange interpolant of ``w`` in ``log z``.
Rows of ``T`` reach past the grid; those ghost nodes take the flat left tail
or the affine right tail of the payoff.  The equation is solved by policy
iteration.  In ``"inner"`` mode the payoff ``G = max(lit, Pi g)`` comes from a
frozen ``g``; in ``"full"`` mode ``g`` is replaced by the Bermudan value and
the pair is iterated to its own fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve
from scipy.special import ndtr

from .errors import DegenerateExercise, DomainError, NoConvergence
from .model import ValidatedModel
from .operators import PiTransform
from .valuefn import N_GRID, Z_MAX, Z_MIN, ValueFunction, log_grid, weighted_distance

log = logging.getLogger(__name__)

_SD_WINDOW = 10.0
_GL = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class BermudanConfig:
    dt: float = 1e-3
    z_min: float = Z_MIN
    z_max: float = Z_MAX
    n_grid: int = N_GRID
    max_sweeps: int = 200
    sweep_tol: float = 1e-12
    method: str = "policy"  # or "value"
    refresh: Optional[int] = None  # full mode: inner sweeps between payoff updates
    outer_tol: float = 1e-10
    max_outer: int = 200

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.method not in ("policy", "value"):
            raise DomainError(f"unknown method {self.method!r}")

    def grid(self) -> np.ndarray:
        return log_grid(self.z_min, self.z_max, self.n_grid)


def _lagrange4(t):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at fractional position t."""
    return np.stack(
        [
            -t * (t - 1) * (t - 2) / 6.0,
            (t + 1) * (t - 1) * (t - 2) / 2.0,
            -(t + 1) * t * (t - 2) / 2.0,
            (t + 1) * t * (t - 1) / 6.0,
        ]
    )


def transition_kernel(mean: float, sd: float, h: float, theta: float = 0.0):
    """Weights on node offsets for ``E[f(y + Y)]``, ``Y ~ N(mean, sd^2)``.

    ``f`` is the cubic Lagrange interpolant of its values on the lattice
    ``h * d`` and the start point sits at ``theta * h`` with ``0 <= theta < 1``.
    Returns ``(offsets, weights)``; weights sum to 1.
    """
    reach = _SD_WINDOW * sd + abs(mean)
    j_lo = int(math.floor((theta * h + mean - reach) / h)) - 1
    j_hi = int(math.ceil((theta * h + mean + reach) / h)) + 1
    cells = np.arange(j_lo, j_hi)
    x, w = _GL
    u = 0.5 * (x + 1.0)  # position inside each cell
    y = (cells[:, None] + u[None, :]) * h  # absolute lattice coordinate
    dens = np.exp(-0.5 * ((y - theta * h - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    wq = 0.5 * w[None, :] * h * dens
    lw = _lagrange4(np.broadcast_to(u, y.shape))  # (4, cells, nodes)
    offsets = np.arange(j_lo - 1, j_hi + 2)
    out = np.zeros(len(offsets))
    for m in range(4):
        contrib = (lw[m] * wq).sum(axis=1)
        np.add.at(out, cells - j_lo + m, contrib)
    # mass outside the window is assigned to the extreme offsets
    lo_mass = ndtr((j_lo * h - theta * h - mean) / sd)
    hi_mass = ndtr(-(j_hi * h - theta * h - mean) / sd)
    out[1] += lo_mass
    out[-3] += hi_mass
    return offsets, out


class _Transition:
    """Banded one-step operator on a geometric grid with tail closure."""

    def __init__(self, model: ValidatedModel, grid: np.ndarray, dt: float):
        c = model.constants
        lg = np.log(grid)
        h = float(np.diff(lg).mean())
        if np.ptp(np.diff(lg)) > 1e-9 * h:
            raise DomainError("the oracle needs a geometric grid")
        self.grid, self.h, self.dt = grid, h, dt
        self.mean = (c.z_drift - 0.5 * c.beta_sq) * dt
        self.sd = math.sqrt(c.beta_sq * dt)
        self.beta = math.exp(-c.disc * dt)
        off, wts = transition_kernel(self.mean, self.sd, h)
        self.offsets, self.weights = off, wts
        n = len(grid)
        rows, cols, vals = [], [], []
        # columns beyond the grid: left ghosts fold into node 0, right ghosts
        # are affine in the tail coefficients and go to a 2-column side matrix
        right_idx = []
        for d, wd in zip(off, wts):
            i = np.arange(n)
            k = i + d
            inside = (k >= 0) & (k < n)
            rows.append(i[inside]); cols.append(k[inside]); vals.append(np.full(inside.sum(), wd))
            left = k < 0
            rows.append(i[left]); cols.append(np.zeros(left.sum(), int)); vals.append(np.full(left.sum(), wd))
            right = k >= n
            if right.any():
                right_idx.append((i[right], k[right] - (n - 1), wd))
        self.T = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        # right ghosts: value c0 + c1 z_{n-1} e^{j h}
        self.R = np.zeros((n, 2))
        for i_r, j_r, wd in right_idx:
            np.add.at(self.R[:, 0], i_r, wd)
            np.add.at(self.R[:, 1], i_r, wd * grid[-1] * np.exp(j_r * h))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.T.sum(axis=1)).ravel() + self.R[:, 0]

    def apply(self, w: np.ndarray, tail: tuple[float, float]) -> np.ndarray:
        return self.T @ w + self.R @ np.asarray(tail)

    def continuation_at(self, w: np.ndarray, tail, z: float) -> float:
        """``e^{-disc dt} E[w(z e^Y)]`` at an off-grid point."""
        grid = self.grid
        x = (math.log(z) - math.log(grid[0])) / self.h
        i = int(math.floor(x))
        theta = x - i
        off, wts = transition_kernel(self.mean, self.sd, self.h, theta)
        k = i + off
        vals = np.empty(len(k))
        n = len(grid)
        inside = (k >= 0) & (k < n)
        vals[inside] = w[k[inside]]
        vals[k < 0] = w[0]
        right = k >= n
        vals[right] = tail[0] + tail[1] * grid[-1] * np.exp((k[right] - (n - 1)) * self.h)
        return self.beta * float(vals @ wts)


@dataclass
class BermudanResult:
    w: ValueFunction
    a_idx: Optional[int]  # last lit-exercise node
    b_idx: Optional[int]  # first dark-exercise node
    a: Optional[float]  # sub-cell boundary estimates
    b: Optional[float]
    dt: float
    sweeps: int
    outer: int = 0
    history: list = field(default_factory=list)

    @property
    def a_mid(self) -> Optional[float]:
        if self.a_idx is None:
            return None
        g = self.w.grid
        return math.sqrt(g[self.a_idx] * g[self.a_idx + 1])

    @property
    def b_mid(self) -> Optional[float]:
        if self.b_idx is None:
            return None
        g = self.w.grid
        return math.sqrt(g[self.b_idx - 1] * g[self.b_idx])

    def to_json(self) -> dict:
        return {
            "dt": self.dt,
            "a": self.a,
            "b": self.b,
            "a_mid": self.a_mid,
            "b_mid": self.b_mid,
            "a_idx": self.a_idx,
            "b_idx": self.b_idx,
            "sweeps": self.sweeps,
            "outer": self.outer,
        }

    def __iter__(self):
        return iter((self.w, self.a_idx, self.b_idx))


def _bellman(tr: _Transition, G: np.ndarray, tail, cfg: BermudanConfig, w0=None, max_sweeps=None):
    """Solve ``w = max(G, beta T w)``; returns ``(w, sweeps)``."""
    n = len(G)
    beta = tr.beta
    const = beta * (tr.R @ np.asarray(tail))
    max_sweeps = cfg.max_sweeps if max_sweeps is None else max_sweeps
    w = G.copy() if w0 is None else np.maximum(w0, G)
    if cfg.method == "value":
        for k in range(1, max_sweeps + 1):
            wn = np.maximum(G, beta * (tr.T @ w) + const)
            ch = float(np.max(np.abs(wn - w)))
            w = wn
            if ch <= cfg.sweep_tol:
                return w, k
        return w, max_sweeps
    hold = (beta * (tr.T @ w) + const) > G
    I = sparse.identity(n, format="csr")
    for k in range(1, max_sweeps + 1):
        # hold rows: w - beta T w = const ; exercise rows: w = G
        H = sparse.diags(hold.astype(float))
        A = (I - H @ (beta * tr.T)).tocsc()
        rhs = np.where(hold, const, G)
        w = spsolve(A, rhs)
        cont = beta * (tr.T @ w) + const
        new_hold = cont > G
        if np.array_equal(new_hold, hold):
            return np.maximum(w, G), k
        hold = new_hold
    if max_sweeps == cfg.max_sweeps:
        raise NoConvergence(f"policy iteration did not settle in {max_sweeps} sweeps")
    return np.maximum(w, G), max_sweeps


def _exercise_structure(hold: np.ndarray):
    """``(a_idx, b_idx)`` for a hold set that is one interval of nodes."""
    idx = np.flatnonzero(hold)
    if len(idx) == 0:
        return None, None
    if idx[-1] - idx[0] + 1 != len(idx):
        raise DegenerateExercise("hold set is not an interval of grid nodes")
    if idx[0] == 0 or idx[-1] == len(hold) - 1:
        raise DegenerateExercise("hold set reaches the edge of the grid")
    return int(idx[0] - 1), int(idx[-1] + 1)


def _subcell(tr, w, tail, Gfun, z_lo, z_hi):
    D = lambda x: tr.continuation_at(w, tail, math.exp(x)) - Gfun(math.exp(x))
    lo, hi = math.log(z_lo), math.log(z_hi)
    f_lo, f_hi = D(lo), D(hi)
    if f_lo == 0.0:
        return z_lo
    if f_lo * f_hi > 0:
        return math.sqrt(z_lo * z_hi)
    return math.exp(brentq(D, lo, hi, xtol=1e-14))


def bermudan_solve(
    model: ValidatedModel,
    g_payoff_source: Optional[ValueFunction] = None,
    cfg: BermudanConfig = BermudanConfig(),
    pi: Optional[PiTransform] = None,
    mode: Optional[str] = None,
    payoff: Optional[tuple[np.ndarray, tuple[float, float]]] = None,
) -> BermudanResult:
    """Bermudan value and exercise boundaries.

    ``mode="inner"`` uses ``G = max(lit, Pi g)`` with ``g = g_payoff_source``
    frozen; ``mode="full"`` (the default when no source is given) starts from
    ``g = lit`` and feeds the Bermudan value back into ``Pi``.  ``payoff``
    overrides ``G`` with explicit node values and affine tail.
    """
    grid = cfg.grid() if g_payoff_source is None else g_payoff_source.grid
    if mode is None:
        mode = "inner" if (g_payoff_source is not None or payoff is not None) else "full"
    pi = pi or PiTransform(model)
    tr = _Transition(model, grid, cfg.dt)
    lit = model.lit
    p = model.p

    def payoff_of(g: ValueFunction):
        P = pi.apply_pi(g, grid)
        tail = (p * pi.m0_q + (1 - p) * pi.m0_q * g.tail[0], p * pi.m1_q + (1 - p) * pi.m1_q * g.tail[1])
        return np.maximum(lit, P), tail, (lambda z: max(lit, pi.apply_pi(g, z)))

    if payoff is not None:
        G, tail = payoff
        G = np.asarray(G, dtype=float)
        Gi = ValueFunction(grid, G, tail)
        Gfun = lambda z: float(Gi.eval(z))
        w, sweeps = _bellman(tr, G, tail, cfg)
        outer, history = 0, []
    elif mode == "inner":
        G, tail, Gfun = payoff_of(g_payoff_source)
        w, sweeps = _bellman(tr, G, tail, cfg)
        outer, history = 0, []
    elif mode == "full":
        g = ValueFunction.constant(grid, lit)
        history = []
        sweeps = 0
        w = None
        for outer in range(1, cfg.max_outer + 1):
            G, tail, Gfun = payoff_of(g)
            w, k = _bellman(tr, G, tail, cfg, w0=w, max_sweeps=cfg.refresh)
            sweeps += k
            g_new = ValueFunction(grid, w, tail)
            delta = weighted_distance(g_new, g)
            history.append(delta)
            g = g_new
            if delta <= cfg.outer_tol:
                break
        else:
            raise NoConvergence(f"outer Bermudan loop did not converge in {cfg.max_outer} passes")
        G, tail, Gfun = payoff_of(g)
        w, k = _bellman(tr, G, tail, cfg, w0=w)
        sweeps += k
    else:
        raise DomainError(f"unknown mode {mode!r}")

    cont = tr.beta * tr.apply(w, tail)
    hold = cont > G + 1e-14 * (1 + grid)
    a_idx, b_idx = _exercise_structure(hold)
    a = b = None
    if a_idx is not None:
        a = _subcell(tr, w, tail, Gfun, grid[a_idx], grid[a_idx + 1])
        b = _subcell(tr, w, tail, Gfun, grid[b_idx - 1], grid[b_idx])
    return BermudanResult(ValueFunction(grid, w, tail), a_idx, b_idx, a, b, cfg.dt, sweeps, outer, history)


def richardson(dts: Sequence[float], values: Sequence[float], powers=(0.5, 1.0)) -> float:
    """Extrapolate ``values(dt)`` to ``dt = 0`` assuming ``v0 + sum c_j dt^{powers_j}``."""
    dts = np.asarray(dts, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(dts) < len(powers) + 1:
        raise DomainError("need at least one more step size than error terms")
    A = np.column_stack([np.ones_like(dts)] + [dts**q for q in powers])
    coef = np.linalg.lstsq(A, values, rcond=None)[0]
    return float(coef[0])


def observed_order(dts: Sequence[float], values: Sequence[float]) -> float:
    """Convergence order from three step sizes in a constant ratio."""
    v = np.asarray(values, dtype=float)
    d1, d2 = v[0] - v[1], v[1] - v[2]
    if d1 == 0 or d2 == 0 or d1 * d2 < 0:
        return float("nan")
    return math.log(d1 / d2) / math.log(dts[0] / dts[1])


@dataclass
class SweepReport:
    dts: list
    results: list
    a: Optional[float]
    b: Optional[float]
    order_a: float
    order_b: float
    powers: tuple

    def to_json(self) -> dict:
        return {
            "dts": self.dts,
            "runs": [r.to_json() for r in self.results],
            "a_extrapolated": self.a,
            "b_extrapolated": self.b,
            "order_a": self.order_a,
            "order_b": self.order_b,
            "powers": list(self.powers),
        }


def dt_sweep(
    model: ValidatedModel,
    dts: Sequence[float] = (4e-3, 2e-3, 1e-3),
    cfg: BermudanConfig = BermudanConfig(),
    g_payoff_source: Optional[ValueFunction] = None,
    powers=(0.5, 1.0),
) -> SweepReport:
    pi = PiTransform(model)
    results = []
    for dt in dts:
        c = BermudanConfig(**{**cfg.__dict__, "dt": dt})
        results.append(bermudan_solve(model, g_payoff_source, c, pi))
        log.info("dt=%g a=%s b=%s", dt, results[-1].a, results[-1].b)
    if any(r.a is None for r in results):
        return SweepReport(list(dts), results, None, None, float("nan"), float("nan"), tuple(powers))
    a_vals = [r.a for r in results]
    b_vals = [r.b for r in results]
    return SweepReport(
        list(dts),
        results,
        richardson(dts, a_vals, powers),
        richardson(dts, b_vals, powers),
        observed_order(dts, a_vals),
        observed_order(dts, b_vals),
        tuple(powers),
    )


@dataclass
class HittingReport:
    z: float
    z0: float
    estimate: float
    stderr: float
    closed_form: float
    n_paths: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - 1.96 * self.stderr, self.estimate + 1.96 * self.stderr

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.closed_form else math.inf
        return (self.estimate - self.closed_form) / self.stderr

    def to_json(self) -> dict:
        return {
            "z": self.z,
            "z0": self.z0,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "ci": list(self.ci),
            "closed_form": self.closed_form,
            "n_paths": self.n_paths,
        }


def _time_schedule(dt: float, t_max: float) -> np.ndarray:
    """Fine steps early on, coarser later; crossings are bridge-corrected."""
    parts = [np.full(int(round(2.0 / dt)), dt)]
    t = 2.0
    for step, until in ((10 * dt, 20.0), (100 * dt, t_max)):
        if t >= t_max:
            break
        m = int(math.ceil((min(until, t_max) - t) / step))
        parts.append(np.full(m, step))
        t += m * step
    return np.concatenate(parts)


def hitting_time_check(
    model: ValidatedModel,
    z: float,
    z0: float,
    n_paths: int = 100_000,
    dt: float = 1e-3,
    seed: int = 0,
    t_max: Optional[float] = None,
) -> HittingReport:
    """Monte Carlo of ``E[e^{-disc rho} 1{rho < inf}]`` for the hitting time of ``z0``.

    Paths of ``log Z`` are advanced exactly; between observation times a
    crossing is detected with the Brownian-bridge probability and its time
    is placed at the middle of the step.
    """
    if not (z > 0 and z0 > 0):
        raise DomainError("z and z0 must be positive")
    c = model.constants
    q = c.q1 if z < z0 else c.q2
    closed = (z / z0) ** q
    if z == z0:
        return HittingReport(z, z0, 1.0, 0.0, 1.0, n_paths)
    if t_max is None:
        t_max = 12.0 / max(c.disc, 1e-3)
    level = math.log(z0)
    up = z < z0
    mu = c.z_drift - 0.5 * c.beta_sq
    sig = math.sqrt(c.beta_sq)
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = np.full(n_paths, math.log(z))
    pay = np.zeros(n_paths)
    alive = np.arange(n_paths)
    t = 0.0
    for step in _time_schedule(dt, t_max):
        if len(alive) == 0:
            break
        xa = x[alive]
        xb = xa + mu * step + sig * math.sqrt(step) * rng.standard_normal(len(alive))
        u = rng.random(len(alive))
        crossed = (xb >= level) if up else (xb <= level)
        gap = (level - xa) * (level - xb)
        bridge = np.exp(-2.0 * np.maximum(gap, 0.0) / (sig * sig * step))
        hit = crossed | (u < bridge)
        pay[alive[hit]] = math.exp(-c.disc * (t + 0.5 * step))
        x[alive] = xb
        alive = alive[~hit]
        t += step
    est = float(pay.mean())
    se = float(pay.std(ddof=1) / math.sqrt(n_paths))
    return HittingReport(z, z0, est, se, closed, n_paths)
