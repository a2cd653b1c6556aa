"""Path simulation of the trading strategies on the original pair ``(S, K)``.

Both coordinates are advanced by exact log-normal steps with correlated
Gaussian shocks.  The rule is checked at observation times ``dt`` apart; a
dark order freezes the trader until the outcome is revealed, the pair is
advanced over the delay in one exact step, and on a failed fill the
recursive strategy starts over from the new state while the one-off
strategy sells lit.

Randomness comes from counter-based Philox streams: paths are split into
fixed-size chunks and chunk ``j`` uses key ``(master_seed, j)``, so results
do not depend on the order in which chunks are processed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import DomainError
from .model import ValidatedModel
from .strategy import DARK_CODE, LIT_CODE, TradingRule, classify, classify_codes

CHUNK = 1 << 15
LIT, DARK_TRY, DARK_FILL, DARK_FAIL, TRUNC = "LIT", "DARK_TRY", "DARK_FILL", "DARK_FAIL", "TRUNC"


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    t_max: Optional[float] = None  # default 100 / disc
    n_paths: int = 10_000
    master_seed: int = 0
    s0: float = 1.0
    k0: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.n_paths < 1:
            raise DomainError("need at least one path")
        if not (self.s0 > 0 and self.k0 > 0):
            raise DomainError("initial price and spread must be positive")
        if self.t_max is not None and not self.t_max > 0:
            raise DomainError("t_max must be positive")

    def horizon(self, model: ValidatedModel) -> float:
        if self.t_max is not None:
            return self.t_max
        return 100.0 / max(model.constants.disc, 1e-2)


@dataclass
class SimReport:
    mean: float
    stderr: float
    n_paths: int
    lit_fills: int
    dark_fills: int
    dark_failures: int
    truncations: int
    mean_attempts: float
    mean_stopping_time: float
    truncation_bound: float
    payoffs: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def ci(self) -> tuple[float, float]:
        h = 1.96 * self.stderr
        return self.mean - h, self.mean + h

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": list(self.ci),
            "n_paths": self.n_paths,
            "lit_fills": self.lit_fills,
            "dark_fills": self.dark_fills,
            "dark_failures": self.dark_failures,
            "truncations": self.truncations,
            "mean_attempts": self.mean_attempts,
            "mean_stopping_time": self.mean_stopping_time,
            "truncation_bound": self.truncation_bound,
        }


def chunk_rng(master_seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(master_seed), int(chunk)]))


class _Stepper:
    """Exact joint log-increments of ``(S, K)``."""

    def __init__(self, model: ValidatedModel):
        P = model.params
        self.m_s = P.mu1 - 0.5 * P.sigma1**2
        self.m_k = P.mu2 - 0.5 * P.sigma2**2
        self.s1, self.s2, self.nu = P.sigma1, P.sigma2, P.nu
        self.nu_c = math.sqrt(max(0.0, 1.0 - P.nu**2))

    def step(self, rng, log_s, log_k, tau):
        n = len(log_s)
        e = rng.standard_normal((2, n))
        sq = np.sqrt(tau)
        log_s = log_s + self.m_s * tau + self.s1 * sq * e[0]
        log_k = log_k + self.m_k * tau + self.s2 * sq * (self.nu * e[0] + self.nu_c * e[1])
        return log_s, log_k


def _simulate(model: ValidatedModel, rule: TradingRule, cfg: PathConfig, recursive: bool, events: Optional[list]):
    r = model.params.r
    p = model.p
    gamma = model.gamma
    t_max = cfg.horizon(model)
    stepper = _Stepper(model)
    pay = np.zeros(cfg.n_paths)
    stop_t = np.zeros(cfg.n_paths)
    attempts = np.zeros(cfg.n_paths, dtype=np.int64)
    counts = dict(lit=0, fill=0, fail=0, trunc=0)

    for c0 in range(0, cfg.n_paths, CHUNK):
        ids = np.arange(c0, min(cfg.n_paths, c0 + CHUNK))
        rng_path = chunk_rng(cfg.master_seed, 2 * (c0 // CHUNK))
        rng_event = chunk_rng(cfg.master_seed, 2 * (c0 // CHUNK) + 1)
        ls = np.full(len(ids), math.log(cfg.s0))
        lk = np.full(len(ids), math.log(cfg.k0))
        t = np.zeros(len(ids))
        alive = np.arange(len(ids))
        while len(alive):
            s, k = np.exp(ls[alive]), np.exp(lk[alive])
            act = classify_codes(rule, s, k)
            trunc = t[alive] >= t_max
            lit = (act == LIT_CODE) | trunc
            dark = (act == DARK_CODE) & ~trunc
            if lit.any():
                j = alive[lit]
                pay[ids[j]] = np.exp(-r * t[j]) * gamma * s[lit]
                stop_t[ids[j]] = t[j]
                counts["trunc"] += int(trunc.sum())
                counts["lit"] += int((lit & ~trunc).sum())
                if events is not None:
                    for jj, ss, kk, tr in zip(j, s[lit], k[lit], trunc[lit]):
                        events.append((int(ids[jj]), float(t[jj]), TRUNC if tr else LIT, float(ss), float(kk),
                                       float(pay[ids[jj]])))
            done = lit.copy()
            if dark.any():
                j = alive[dark]
                attempts[ids[j]] += 1
                theta = model.delay.sample(rng_event, len(j))
                u = rng_event.random(len(j))
                if events is not None:
                    for jj, ss, kk in zip(j, s[dark], k[dark]):
                        events.append((int(ids[jj]), float(t[jj]), DARK_TRY, float(ss), float(kk), 0.0))
                ls[j], lk[j] = stepper.step(rng_event, ls[j], lk[j], theta)
                t[j] = t[j] + theta
                filled = u < p
                sj, kj = np.exp(ls[j]), np.exp(lk[j])
                jf = j[filled]
                pay[ids[jf]] = np.exp(-r * t[jf]) * (sj[filled] + kj[filled])
                stop_t[ids[jf]] = t[jf]
                counts["fill"] += int(filled.sum())
                counts["fail"] += int((~filled).sum())
                if not recursive:
                    jl = j[~filled]
                    pay[ids[jl]] = np.exp(-r * t[jl]) * gamma * sj[~filled]
                    stop_t[ids[jl]] = t[jl]
                if events is not None:
                    for jj, f in zip(j, filled):
                        cash = float(pay[ids[jj]]) if (f or not recursive) else 0.0
                        events.append((int(ids[jj]), float(t[jj]), DARK_FILL if f else DARK_FAIL,
                                       float(np.exp(ls[jj])), float(np.exp(lk[jj])), cash))
                        if not f and not recursive:
                            events.append((int(ids[jj]), float(t[jj]), LIT, float(np.exp(ls[jj])),
                                           float(np.exp(lk[jj])), cash))
                dmask = np.zeros(len(alive), bool)
                dmask[np.flatnonzero(dark)[filled]] = True
                if not recursive:
                    dmask[np.flatnonzero(dark)] = True
                done |= dmask
            cont = ~(lit | dark)
            if cont.any():
                j = alive[cont]
                ls[j], lk[j] = stepper.step(rng_path, ls[j], lk[j], cfg.dt)
                t[j] = t[j] + cfg.dt
            alive = alive[~done]

    n = cfg.n_paths
    if not recursive:
        counts["lit"] += counts["fail"]
    mean = float(pay.mean())
    se = float(pay.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    bound = math.exp(-(model.params.r - model.params.mu1) * t_max) if counts["trunc"] else 0.0
    return SimReport(
        mean,
        se,
        n,
        counts["lit"],
        counts["fill"],
        counts["fail"],
        counts["trunc"],
        float(attempts.mean()),
        float(stop_t.mean()),
        bound,
        pay,
    )


def simulate_recursive(model: ValidatedModel, rule: TradingRule, cfg: PathConfig, events: Optional[list] = None) -> SimReport:
    """Replay the rule with restarts after failed dark orders."""
    return _simulate(model, rule, cfg, True, events)


def simulate_oneoff(model: ValidatedModel, rule_hat: TradingRule, cfg: PathConfig, events: Optional[list] = None) -> SimReport:
    """Replay the rule with a lit sale after the first failed dark order.

    The same seed gives the same random streams as ``simulate_recursive``, so
    the two estimates share common random numbers.
    """
    return _simulate(model, rule_hat, cfg, False, events)


def paired_difference(a: SimReport, b: SimReport) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` path by path."""
    d = a.payoffs - b.payoffs
    n = len(d)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n))


def write_events(path, events: list, header=()) -> None:
    rows = sorted(events, key=lambda e: (e[0], e[1]))
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["path_id", "event_time", "event", "s", "k", "discounted_cashflow"])
        for e in rows:
            w.writerow([e[0], repr(e[1]), e[2], repr(e[3]), repr(e[4]), repr(e[5])])


def simulate_path(model: ValidatedModel, rule: TradingRule, s0: float, k0: float, t_end: float, dt: float, seed: int):
    """One path of ``(S, K)`` with the action shown by the rule at each time.

    Used for the region overlay; the path is not stopped.
    """
    rng = chunk_rng(seed, 0)
    n = int(round(t_end / dt))
    stepper = _Stepper(model)
    ls = np.empty(n + 1)
    lk = np.empty(n + 1)
    ls[0], lk[0] = math.log(s0), math.log(k0)
    for i in range(n):
        a, b = stepper.step(rng, ls[i : i + 1], lk[i : i + 1], dt)
        ls[i + 1], lk[i + 1] = a[0], b[0]
    s, k = np.exp(ls), np.exp(lk)
    return {"t": np.arange(n + 1) * dt, "s": s, "k": k, "action": list(classify(rule, s, k))}


@dataclass
class MartingaleReport:
    z: float
    t: float
    u_z: float
    stopped_mean: float
    stopped_stderr: float
    unstopped_mean: float
    unstopped_stderr: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def martingale_diagnostic(
    model: ValidatedModel, result, z: float, t: float, n_paths: int = 100_000, dt: float = 1e-3, seed: int = 0
) -> MartingaleReport:
    """Discounted value along the reduced process, stopped and unstopped.

    Stopped at the exit from ``(a, b)`` (or at ``t``) the mean should equal
    ``u(z)``; without stopping it should not exceed it.  Exits between
    observation times are detected with the Brownian-bridge crossing
    probability of ``log Z``; a stopped path is valued at the boundary it
    crossed, discounted from the middle of the step.
    """
    c = model.constants
    rng = chunk_rng(seed, 0)
    n = int(round(t / dt))
    mu = c.z_drift - 0.5 * c.beta_sq
    sig = math.sqrt(c.beta_sq)
    x = np.full(n_paths, math.log(z))
    stop_val = np.full(n_paths, np.nan)
    alive = np.ones(n_paths, bool)
    if result.a_star is None or not (result.a_star < z < result.b_star):
        alive[:] = False
        stop_val[:] = float(result.u.eval(z))
    else:
        la, lb = math.log(result.a_star), math.log(result.b_star)
        ua, ub = float(result.u.eval(result.a_star)), float(result.u.eval(result.b_star))
        var = sig * sig * dt
    for i in range(1, n + 1):
        x_new = x + mu * dt + sig * math.sqrt(dt) * rng.standard_normal(n_paths)
        if alive.any():
            idx = np.flatnonzero(alive)
            x0, x1 = x[idx], x_new[idx]
            u = rng.random((2, len(idx)))
            p_lo = np.exp(-2.0 * np.maximum((x0 - la) * (x1 - la), 0.0) / var)
            p_hi = np.exp(-2.0 * np.maximum((lb - x0) * (lb - x1), 0.0) / var)
            hit_lo = (x1 <= la) | (u[0] < p_lo)
            hit_hi = ((x1 >= lb) | (u[1] < p_hi)) & ~hit_lo
            d = math.exp(-c.disc * (i - 0.5) * dt)
            stop_val[idx[hit_lo]] = d * ua
            stop_val[idx[hit_hi]] = d * ub
            alive[idx[hit_lo | hit_hi]] = False
        x = x_new
    final = math.exp(-c.disc * n * dt) * result.u.eval(np.exp(x))
    stop_val[alive] = final[alive]
    rt = math.sqrt(n_paths)
    return MartingaleReport(
        z,
        t,
        float(result.u.eval(z)),
        float(stop_val.mean()),
        float(stop_val.std(ddof=1) / rt),
        float(final.mean()),
        float(final.std(ddof=1) / rt),
    )


def sample_pair(model: ValidatedModel, s0: float, k0: float, t: float, n: int, seed: int):
    """Exact draws of ``(S_t, K_t)`` and the Gaussian shocks behind them."""
    rng = chunk_rng(seed, 0)
    ls, lk = _Stepper(model).step(rng, np.full(n, math.log(s0)), np.full(n, math.log(k0)), t)
    return np.exp(ls), np.exp(lk)


def reduced_law_ks(model: ValidatedModel, z: float = 0.1, t: float = 1.0, n: int = 10_000, seed: int = 0) -> dict:
    """Weighted KS distance between ``K_t/S_t`` and the reduced process.

    Draws use the market measure; reweighting by ``S_t e^{-mu1 t} / s0``
    moves them to the measure under which the reduced process is an
    exact geometric Brownian motion.  The critical value uses the Kish
    effective sample size of the weights.
    """
    c = model.constants
    s, k = sample_pair(model, 1.0, z, t, n, seed)
    w = s * math.exp(-model.params.mu1 * t)
    ratio = np.log(k / s)
    order = np.argsort(ratio)
    x, ww = ratio[order], w[order] / w.sum()
    cdf_emp = np.cumsum(ww)
    ref = stats.norm(math.log(z) + (c.z_drift - 0.5 * c.beta_sq) * t, math.sqrt(c.beta_sq * t)).cdf(x)
    d = float(max(np.max(np.abs(cdf_emp - ref)), np.max(np.abs(cdf_emp - ww - ref))))
    n_eff = float(w.sum() ** 2 / np.sum(w * w))
    crit = 1.358 / math.sqrt(n_eff)
    return {"statistic": d, "critical_5pct": crit, "n_eff": n_eff, "pass": d <= crit}
