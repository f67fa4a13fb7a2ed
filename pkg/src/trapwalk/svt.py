"""Slowly-varying survival functions, their inverses, and trap sampling.

A ``TailFunction`` bundles a survival function F(u) = P(tau > u) that is
slowly varying at infinity, its right-continuous inverse (with the "<"
convention, so F_inv(p) = inf{u : F(u) < p}), and the reciprocal
L(u) = 1/F(u). Inverses are returned in log-domain because for the families
of interest F_inv(p) is of order exp(p^(-1/gamma)) and overflows floats
almost immediately.

Built-in families
-----------------
logpow   F(u) = (ln u)^(-gamma) for u > e, clamped to 1 on [0, e]
iterlog  F(u) = (ln ln u)^(-gamma) for u > e^e, clamped to 1 below
table    user-supplied piecewise-constant right-continuous table
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .logdomain import LogMagnitude

_FAMILIES = ("logpow", "iterlog", "table")


@dataclass(frozen=True)
class TailFunction:
    family: str
    gamma: float = 1.0
    table_u: np.ndarray | None = field(default=None, repr=False)
    table_s: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown tail family {self.family!r}")
        if self.family in ("logpow", "iterlog") and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.family == "table":
            u = np.asarray(self.table_u, dtype=float)
            s = np.asarray(self.table_s, dtype=float)
            if u.ndim != 1 or u.shape != s.shape or u.size == 0:
                raise ValueError("table family needs matching 1-d (u, F) columns")
            if np.any(np.diff(u) <= 0):
                raise ValueError("table u-column must be strictly increasing")
            if np.any(np.diff(s) > 0) or s[0] > 1.0 or np.any(s < 0):
                raise ValueError("table F-column must be non-increasing in [0, 1]")
            if u[0] > 0:
                u = np.concatenate(([0.0], u))
                s = np.concatenate(([1.0], s))
            elif s[0] != 1.0:
                raise ValueError("table must have F(0) = 1")
            object.__setattr__(self, "table_u", u)
            object.__setattr__(self, "table_s", s)
            object.__setattr__(self, "_log_u", np.log(np.maximum(u, 1e-300)))

    # -- forward evaluation ------------------------------------------------

    def survival(self, u):
        """F(u) for ordinary (non log-domain) arguments u >= 0."""
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("survival argument must be nonnegative")
        with np.errstate(divide="ignore"):
            logu = np.where(u > 0, np.log(np.maximum(u, 1e-300)), -np.inf)
        out = self.survival_log(logu)
        return out if out.shape else float(out)

    def survival_log(self, log_u):
        """F evaluated at a magnitude given by its logarithm."""
        log_u = np.asarray(log_u, dtype=float)
        if self.family == "logpow":
            out = np.where(log_u <= 1.0, 1.0, np.maximum(log_u, 1.0) ** (-self.gamma))
        elif self.family == "iterlog":
            safe = np.maximum(log_u, math.e)
            out = np.where(log_u <= math.e, 1.0, np.log(safe) ** (-self.gamma))
        else:
            idx = np.searchsorted(self._log_u, log_u, side="right") - 1
            out = self.table_s[np.maximum(idx, 0)]
            out = np.where(log_u < self._log_u[0], 1.0, out)
        return out

    # -- inverse -----------------------------------------------------------

    def inverse_log(self, p):
        """log of F_inv(p) = inf{u : F(u) < p}, vectorized over p in (0, 1]."""
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("inverse argument must lie in (0, 1]")
        if self.family == "logpow":
            out = p ** (-1.0 / self.gamma)
        elif self.family == "iterlog":
            out = np.exp(p ** (-1.0 / self.gamma))
        else:
            # first tabulated u with F(u) < p; s is non-increasing
            rev = self.table_s[::-1]
            k = np.searchsorted(rev, p, side="left")
            idx = len(self.table_s) - k  # first index with s < p
            if np.any(idx >= len(self.table_s)):
                raise ValueError("table tail never drops below requested level")
            out = self._log_u[idx]
        return out if out.shape else float(out)

    def inverse(self, p: float) -> LogMagnitude:
        return LogMagnitude(float(self.inverse_log(p)))

    # -- derived quantities --------------------------------------------------

    def big_l(self, u):
        """L(u) = 1/F(u)."""
        return 1.0 / self.survival(u)

    def big_l_log(self, log_u):
        """L at a log-domain magnitude; for logpow this is max(log u, 1)^gamma."""
        return 1.0 / self.survival_log(log_u)

    def critical_depth(self, n: int) -> LogMagnitude:
        """g(n) = F_inv(ln(n)/n), the depth separating deep from shallow traps."""
        if n < 2:
            raise ValueError("critical depth needs n >= 2")
        p = math.log(n) / n
        if not 0 < p <= 1:
            raise ValueError(f"ln(n)/n = {p} outside (0, 1]")
        return self.inverse(p)

    def sample_log(self, rng: np.random.Generator, size=None):
        """Inverse-transform trap samples, returned as log-values."""
        u = 1.0 - rng.random(size)  # uniform on (0, 1]
        return self.inverse_log(u)

    def smoothed_survival(self, u, n_grid: int = 4096):
        """Continuous replacement G(u) = ((1/u) * integral_0^u L(v) dv)^(-1).

        Agrees with F asymptotically; useful when the family has jumps.
        Trapezoid rule on a log-spaced grid.
        """
        u = float(u)
        if u <= 0:
            return 1.0
        lo = min(1.0, u)
        grid = np.geomspace(lo, u, n_grid) if u > lo else np.array([u])
        vals = self.big_l(grid)
        trapz = getattr(np, "trapezoid", None) or np.trapz
        integral = float(trapz(vals, grid)) if grid.size > 1 else 0.0
        integral += lo * 1.0  # L = 1 on [0, min(1, u)] for all families here
        return min(1.0, u / integral)


def make_tail(family: str, gamma: float = 1.0, table=None) -> TailFunction:
    """Factory used by config parsing; table is an (N, 2) array of (u, F)."""
    if family == "table":
        table = np.asarray(table, dtype=float)
        return TailFunction("table", table_u=table[:, 0], table_s=table[:, 1])
    return TailFunction(family, gamma=gamma)


def constant_trap_table(value: float = 1.0) -> TailFunction:
    """Degenerate environment tau = value, as a table family."""
    return make_tail("table", table=[[0.0, 1.0], [value, 0.0]])


# -- spec-facing operation aliases -------------------------------------------


def eval_tail(tf: TailFunction, u) -> float:
    return tf.survival(u)


def inverse_tail(tf: TailFunction, p: float) -> LogMagnitude:
    return tf.inverse(p)


def critical_depth(tf: TailFunction, n: int) -> LogMagnitude:
    return tf.critical_depth(n)


def sample_trap(tf: TailFunction, rng: np.random.Generator) -> LogMagnitude:
    return LogMagnitude(float(tf.sample_log(rng)))
