"""Model parameters, delay distributions and closed-form derived constants.

The two-factor market is

    dS = mu1 S dt + sigma1 S dB1
    dK = mu2 K dt + sigma2 K (nu dB1 + sqrt(1 - nu^2) dB2)

and every solver works with the reduced ratio process Z = K/S, a geometric
Brownian motion with drift ``mu2 - mu1`` and variance rate
``beta1^2 + beta2^2``, discounted at ``r - mu1``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .errors import DomainError, RegimeViolation

LAGUERRE_NODES = 32
LEGENDRE_NODES = 48
EXP_SPLIT = 2.0  # body/tail split of exponential delays, in units of the mean


class Regime(enum.Enum):
    STANDARD = "standard"
    R_EQUALS_MU1 = "r_equals_mu1"


class DelayKind(enum.Enum):
    DIRAC_ZERO = "dirac_zero"
    DIRAC = "dirac"
    EXPONENTIAL = "exponential"
    CAPPED_EXPONENTIAL = "capped_exponential"
    MIXTURE = "mixture"


def _sqrt_legendre(T: float, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule for ``int_0^T h(t) rate e^{-rate t} dt`` in the variable ``sqrt(t)``.

    Transition expectations behave like ``sqrt(t)`` near zero, which the
    substitution turns into a smooth integrand.
    """
    x, w = np.polynomial.legendre.leggauss(LEGENDRE_NODES)
    u = 0.5 * math.sqrt(T) * (x + 1.0)
    t = u * u
    return t, 0.5 * math.sqrt(T) * w * 2.0 * u * rate * np.exp(-rate * t)


@dataclass(frozen=True)
class DelayLaw:
    """Distribution of the delay between a dark order and its outcome.

    Use the named constructors rather than the raw initializer.  ``nodes``
    and ``weights`` form a quadrature rule for ``int h(t) F(dt)``.
    """

    kind: DelayKind
    rate: float = 0.0
    t0: float = 0.0
    w0: float = 0.0
    base: Optional["DelayLaw"] = None

    @classmethod
    def dirac_zero(cls) -> "DelayLaw":
        return cls(DelayKind.DIRAC_ZERO)

    @classmethod
    def dirac(cls, t0: float) -> "DelayLaw":
        if not t0 > 0:
            raise DomainError(f"dirac delay needs t0 > 0, got {t0}")
        return cls(DelayKind.DIRAC, t0=float(t0))

    @classmethod
    def exponential(cls, rate: float) -> "DelayLaw":
        if not rate > 0:
            raise DomainError(f"exponential delay needs rate > 0, got {rate}")
        return cls(DelayKind.EXPONENTIAL, rate=float(rate))

    @classmethod
    def capped_exponential(cls, rate: float, t0: float) -> "DelayLaw":
        """Law of ``min(E, t0)`` with ``E`` exponential of the given rate."""
        if not rate > 0 or not t0 > 0:
            raise DomainError("capped exponential delay needs rate > 0 and t0 > 0")
        return cls(DelayKind.CAPPED_EXPONENTIAL, rate=float(rate), t0=float(t0))

    @classmethod
    def mixture(cls, w0: float, base: "DelayLaw") -> "DelayLaw":
        """Atom of mass ``w0`` at zero, ``base`` with mass ``1 - w0``."""
        if not 0.0 < w0 < 1.0:
            raise DomainError(f"mixture weight must lie in (0, 1), got {w0}")
        if base.kind in (DelayKind.DIRAC_ZERO, DelayKind.MIXTURE):
            raise DomainError("mixture base must be dirac, exponential or capped_exponential")
        return cls(DelayKind.MIXTURE, w0=float(w0), base=base)

    @property
    def atom_at_zero(self) -> float:
        if self.kind is DelayKind.DIRAC_ZERO:
            return 1.0
        if self.kind is DelayKind.MIXTURE:
            return self.w0
        return 0.0

    @cached_property
    def _rule(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.kind
        if k is DelayKind.DIRAC_ZERO:
            return np.array([0.0]), np.array([1.0])
        if k is DelayKind.DIRAC:
            return np.array([self.t0]), np.array([1.0])
        if k is DelayKind.EXPONENTIAL:
            split = EXP_SPLIT / self.rate
            t, wt = _sqrt_legendre(split, self.rate)
            x, w = np.polynomial.laguerre.laggauss(LAGUERRE_NODES)
            return np.append(t, split + x / self.rate), np.append(wt, math.exp(-EXP_SPLIT) * w)
        if k is DelayKind.CAPPED_EXPONENTIAL:
            t, wt = _sqrt_legendre(self.t0, self.rate)
            return np.append(t, self.t0), np.append(wt, math.exp(-self.rate * self.t0))
        bt, bw = self.base._rule
        return np.append(0.0, bt), np.append(self.w0, (1.0 - self.w0) * bw)

    @property
    def nodes(self) -> np.ndarray:
        return self._rule[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule[1]

    def discounted_moment(self, rho: float) -> float:
        """Closed form of ``int exp(-rho t) F(dt)``."""
        if rho < 0:
            raise DomainError(f"discount rate must be non-negative, got {rho}")
        k = self.kind
        if k is DelayKind.DIRAC_ZERO:
            return 1.0
        if k is DelayKind.DIRAC:
            return math.exp(-rho * self.t0)
        if k is DelayKind.EXPONENTIAL:
            return self.rate / (self.rate + rho)
        if k is DelayKind.CAPPED_EXPONENTIAL:
            lam, t0 = self.rate, self.t0
            tail = math.exp(-(lam + rho) * t0)
            return lam / (lam + rho) * (1.0 - tail) + tail
        return self.w0 + (1.0 - self.w0) * self.base.discounted_moment(rho)

    def quadrature(self, fn) -> float:
        """Integrate a vectorized ``fn(t)`` against F with the stored rule."""
        return float(np.dot(self.weights, fn(self.nodes)))

    def mean(self) -> float:
        k = self.kind
        if k is DelayKind.DIRAC_ZERO:
            return 0.0
        if k is DelayKind.DIRAC:
            return self.t0
        if k is DelayKind.EXPONENTIAL:
            return 1.0 / self.rate
        if k is DelayKind.CAPPED_EXPONENTIAL:
            return (1.0 - math.exp(-self.rate * self.t0)) / self.rate
        return (1.0 - self.w0) * self.base.mean()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` delays (inverse CDF for the exponential kinds)."""
        k = self.kind
        if k is DelayKind.DIRAC_ZERO:
            return np.zeros(n)
        if k is DelayKind.DIRAC:
            return np.full(n, self.t0)
        if k is DelayKind.EXPONENTIAL:
            return -np.log1p(-rng.random(n)) / self.rate
        if k is DelayKind.CAPPED_EXPONENTIAL:
            return np.minimum(-np.log1p(-rng.random(n)) / self.rate, self.t0)
        atom = rng.random(n) < self.w0
        out = self.base.sample(rng, n)
        out[atom] = 0.0
        return out

    def to_dict(self) -> dict:
        k = self.kind
        if k is DelayKind.DIRAC_ZERO:
            return {"kind": k.value}
        if k is DelayKind.DIRAC:
            return {"kind": k.value, "t0": self.t0}
        if k is DelayKind.EXPONENTIAL:
            return {"kind": k.value, "rate": self.rate}
        if k is DelayKind.CAPPED_EXPONENTIAL:
            return {"kind": k.value, "rate": self.rate, "t0": self.t0}
        return {"kind": k.value, "w0": self.w0, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DelayLaw":
        if not isinstance(d, Mapping) or "kind" not in d:
            raise DomainError("delay must be an object with a 'kind' field")
        required = {
            "dirac_zero": set(),
            "dirac": {"t0"},
            "exponential": {"rate"},
            "capped_exponential": {"rate", "t0"},
            "mixture": {"w0", "base"},
        }
        kind = d["kind"]
        if kind not in required:
            raise DomainError(f"unknown delay kind {kind!r}")
        keys = set(d) - {"kind"}
        if keys != required[kind]:
            raise DomainError(f"delay kind {kind!r} takes fields {sorted(required[kind])}, got {sorted(keys)}")
        if kind == "dirac_zero":
            return cls.dirac_zero()
        if kind == "dirac":
            return cls.dirac(_num(d["t0"], "t0"))
        if kind == "exponential":
            return cls.exponential(_num(d["rate"], "rate"))
        if kind == "capped_exponential":
            return cls.capped_exponential(_num(d["rate"], "rate"), _num(d["t0"], "t0"))
        return cls.mixture(_num(d["w0"], "w0"), cls.from_dict(d["base"]))


def _num(x, name):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise DomainError(f"field {name!r} must be a number")
    return float(x)


@dataclass(frozen=True)
class ModelParams:
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    nu: float
    r: float
    p: float
    gamma: float = 1.0


@dataclass(frozen=True)
class DerivedConstants:
    beta1: float
    beta2: float
    beta_sq: float
    z_drift: float
    disc: float
    q1: float
    q2: float


def char_roots(beta_sq: float, z_drift: float, disc: float) -> tuple[float, float]:
    """Roots of ``0.5 beta_sq q (q - 1) + z_drift q - disc = 0``.

    Returns ``(q1, q2)`` with ``q1`` the larger root.  The larger-magnitude
    root is formed first and the other one recovered from the product, so
    no cancellation occurs when ``|z_drift| >> beta_sq``.
    """
    A = 0.5 * beta_sq
    B = z_drift - 0.5 * beta_sq
    C = -disc
    sq = math.sqrt(B * B - 4.0 * A * C)
    big = (-B - math.copysign(sq, B if B != 0 else 1.0)) / (2.0 * A)
    other = C / (A * big)
    return (big, other) if big > other else (other, big)


@dataclass(frozen=True)
class ValidatedModel:
    """Immutable, checked model; the entry point for every solver."""

    params: ModelParams
    delay: DelayLaw
    regime: Regime
    constants: DerivedConstants
    m0: float = field(default=0.0)  # int exp(-(r - mu1) t) F(dt)
    m1: float = field(default=0.0)  # int exp(-(r - mu2) t) F(dt)

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def gamma(self) -> float:
        return self.params.gamma

    @property
    def lit(self) -> float:
        """Lit-market payoff per unit of S."""
        return self.params.gamma

    @property
    def F0(self) -> float:
        return self.delay.atom_at_zero

    def tail_coefficients(self) -> tuple[float, float]:
        return tail_coefficients(self)

    def to_dict(self) -> dict:
        d = {k: getattr(self.params, k) for k in ("mu1", "mu2", "sigma1", "sigma2", "nu", "r", "p", "gamma")}
        d["delay"] = self.delay.to_dict()
        return d


def validate(params: ModelParams, delay: DelayLaw) -> ValidatedModel:
    """Check field ranges, pick the parameter regime and derive constants."""
    P = params
    for name in ("mu1", "mu2", "sigma1", "sigma2", "nu", "r", "p", "gamma"):
        v = getattr(P, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DomainError(f"{name} must be a finite number")
    if not P.sigma1 > 0 or not P.sigma2 > 0:
        raise DomainError("volatilities must be positive")
    if not -1.0 <= P.nu <= 1.0:
        raise DomainError("correlation nu must lie in [-1, 1]")
    if not P.r > 0:
        raise DomainError("discount rate r must be positive")
    if not 0.0 < P.p < 1.0:
        raise DomainError("fill probability p must lie in (0, 1)")
    if not 0.0 < P.gamma <= 1.0:
        raise DomainError("impact factor gamma must lie in (0, 1]")

    if P.r > P.mu1 + 0.5 * P.sigma1**2 and P.r > P.mu2 + 0.5 * P.sigma2**2:
        regime = Regime.STANDARD
    elif P.r == P.mu1 and P.mu2 < P.r:
        regime = Regime.R_EQUALS_MU1
    else:
        raise RegimeViolation(
            f"need r > mu_i + sigma_i^2/2 for i = 1, 2, or r == mu1 with mu2 < r "
            f"(r={P.r}, mu1={P.mu1}, mu2={P.mu2}, sigma1={P.sigma1}, sigma2={P.sigma2})"
        )

    beta1 = P.sigma2 * P.nu - P.sigma1
    beta2 = P.sigma2 * math.sqrt(max(0.0, 1.0 - P.nu**2))
    beta_sq = beta1**2 + beta2**2
    if not beta_sq > 0:
        raise DomainError("ratio process is degenerate (beta1 = beta2 = 0)")
    z_drift = P.mu2 - P.mu1
    disc = P.r - P.mu1
    q1, q2 = char_roots(beta_sq, z_drift, disc)
    const = DerivedConstants(beta1, beta2, beta_sq, z_drift, disc, q1, q2)
    return ValidatedModel(
        params=P,
        delay=delay,
        regime=regime,
        constants=const,
        m0=delay.discounted_moment(disc),
        m1=delay.discounted_moment(P.r - P.mu2),
    )


def discounted_moment(delay: DelayLaw, rho: float) -> float:
    return delay.discounted_moment(rho)


def tail_coefficients(model: ValidatedModel) -> tuple[float, float]:
    """Intercept and slope of the affine function fixed by the delay operator.

    ``c = p m + (1 - p) m c`` solved for the intercept (with ``m0``) and the
    slope (with ``m1``).
    """
    p = model.p
    m0, m1 = model.m0, model.m1
    return p * m0 / (1.0 - (1.0 - p) * m0), p * m1 / (1.0 - (1.0 - p) * m1)


def affine_tail_step(model: ValidatedModel, c0: float, c1: float) -> tuple[float, float]:
    """Image of the affine function ``c0 + c1 z`` under the delay operator."""
    p = model.p
    return p * model.m0 + (1 - p) * model.m0 * c0, p * model.m1 + (1 - p) * model.m1 * c1


MODEL_KEYS = ("mu1", "mu2", "sigma1", "sigma2", "nu", "r", "p", "gamma", "delay")


def model_from_dict(d: Mapping[str, Any]) -> ValidatedModel:
    if not isinstance(d, Mapping):
        raise DomainError("model must be a JSON object")
    keys = set(d)
    missing = set(MODEL_KEYS) - keys
    extra = keys - set(MODEL_KEYS)
    if missing:
        raise DomainError(f"model is missing fields {sorted(missing)}")
    if extra:
        raise DomainError(f"model has unknown fields {sorted(extra)}")
    params = ModelParams(**{k: _num(d[k], k) for k in MODEL_KEYS if k != "delay"})
    return validate(params, DelayLaw.from_dict(d["delay"]))


def load_model(path: str | Path) -> ValidatedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def reference_model(**overrides) -> ValidatedModel:
    """The reference parameter set used throughout the tests and docs."""
    base = dict(mu1=0.01, mu2=0.0, sigma1=0.2, sigma2=0.3, nu=0.0, r=0.06, p=0.5, gamma=1.0)
    delay = overrides.pop("delay", DelayLaw.dirac(1.0))
    base.update(overrides)
    return validate(ModelParams(**base), delay)
