"""Two-dimensional trading rule derived from the reduced solution.

The value is positively homogeneous, ``v(s, k) = s u(k / s)``, so the
continuation set is the wedge between the rays ``k = a s`` and ``k = b s``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

SELL_LIT, CONTINUE, SELL_DARK = "SELL_LIT", "CONTINUE", "SELL_DARK"


@dataclass(frozen=True)
class TradingRule:
    """Sell lit on ``k <= a s``, try the dark pool on ``k >= b s``, wait otherwise.

    ``a = b = None`` encodes an empty wedge: a dark order is placed at once.
    Points on a ray belong to the stopping set.  Optimal rules have
    ``a < b``; perturbed rules may have ``a >= b``, in which case the lit
    test takes precedence and the wedge is empty.
    """

    a_star: Optional[float]
    b_star: Optional[float]

    def __post_init__(self):
        if (self.a_star is None) != (self.b_star is None):
            raise DomainError("both boundaries or neither")
        if self.a_star is not None and not (self.a_star > 0 and self.b_star > 0):
            raise DomainError("boundaries must be positive")

    @classmethod
    def from_result(cls, result) -> "TradingRule":
        return cls(result.a_star, result.b_star)

    @classmethod
    def from_comparator(cls, result) -> "TradingRule":
        return cls(result.a_hat, result.b_hat)

    def perturbed(self, fa: float, fb: float) -> "TradingRule":
        return TradingRule(self.a_star * fa, self.b_star * fb)

    def classify_z(self, z):
        z = np.asarray(z, dtype=float)
        if self.a_star is None:
            out = np.full(z.shape, SELL_DARK, dtype=object)
        else:
            out = np.where(z <= self.a_star, SELL_LIT, np.where(z >= self.b_star, SELL_DARK, CONTINUE))
        return out if out.ndim else str(out)


def _check_positive(s, k):
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(~(s > 0)) or np.any(~(k > 0)):
        raise DomainError("price and spread must be positive")
    return s, k


def classify(rule: TradingRule, s, k):
    s, k = _check_positive(s, k)
    if rule.a_star is None:
        out = np.full(np.broadcast(s, k).shape, SELL_DARK, dtype=object)
    else:
        # compare k against the rays in the (s, k) plane, so that points built
        # as k = a s classify as stopping exactly
        out = np.where(k <= rule.a_star * s, SELL_LIT, np.where(k >= rule.b_star * s, SELL_DARK, CONTINUE))
    return out if out.ndim else str(out)


LIT_CODE, CONTINUE_CODE, DARK_CODE = 0, 1, 2


def classify_codes(rule: TradingRule, s: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``classify`` as integer codes, for the simulators' inner loops."""
    if rule.a_star is None:
        return np.full(np.shape(k), DARK_CODE, dtype=np.int8)
    out = np.full(np.shape(k), CONTINUE_CODE, dtype=np.int8)
    out[k >= rule.b_star * s] = DARK_CODE
    out[k <= rule.a_star * s] = LIT_CODE
    return out


def value2d(result, s, k):
    """``v(s, k) = s u(k / s)``; with ``gamma != 1`` the lit level inside ``u`` is ``gamma``."""
    s, k = _check_positive(s, k)
    out = s * result.u.eval(k / s)
    return out if out.ndim else float(out)


def region_wedge_csv(
    rule: TradingRule,
    s_range: tuple[float, float],
    n_points: int,
    path: Optional[str] = None,
    overlay: Optional[dict] = None,
    header: Sequence[str] = (),
    comparator: Optional[TradingRule] = None,
):
    """Rows ``(s, k_lower_ray, k_upper_ray)`` over ``s_range``.

    ``overlay`` may hold arrays ``s``, ``k`` and ``action`` of a simulated
    path, written as extra columns.  ``comparator`` adds the rays of a second
    rule.  When ``path`` is given the table is also written as CSV.
    """
    if n_points < 2:
        raise DomainError("need at least two points")
    s = np.linspace(s_range[0], s_range[1], n_points)
    a = rule.a_star if rule.a_star is not None else 0.0
    b = rule.b_star if rule.b_star is not None else 0.0
    cols = {"s": s, "k_lower_ray": a * s, "k_upper_ray": b * s}
    if comparator is not None:
        cols["k_lower_ray_hat"] = comparator.a_star * s
        cols["k_upper_ray_hat"] = comparator.b_star * s
    names = list(cols)
    rows = [[float(cols[c][i]) for c in names] for i in range(n_points)]
    if overlay is not None:
        names += ["path_s", "path_k", "action"]
        m = max(n_points, len(overlay["s"]))
        rows += [[""] * len(cols) for _ in range(m - n_points)]
        for i in range(m):
            if i < len(overlay["s"]):
                rows[i] += [float(overlay["s"][i]), float(overlay["k"][i]), overlay["action"][i]]
            else:
                rows[i] += ["", "", ""]
    if path is not None:
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(names)
            for r in rows:
                w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return names, rows


def homogeneity_gap(result, s: float, k: float, lam: float) -> float:
    """Relative gap ``|v(lam s, lam k) - lam v(s, k)| / (lam v(s, k))``."""
    v = value2d(result, s, k)
    return abs(value2d(result, lam * s, lam * k) - lam * v) / (lam * v)
