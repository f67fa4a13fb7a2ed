"""Reference implementation of the limiting extremal process and its inverse.

The process m is the running maximum of a Poisson point process on
(0, infinity) x (0, infinity) with intensity x^-2 dx dt, so its marginals are
Frechet: P(m(t) <= x) = exp(-t/x). Grid sampling uses max-stability and is
exact on the grid; an epsilon-truncated point-process sampler is kept only
as a cross-check oracle (it misses mass below epsilon with probability
exp(-t/epsilon)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def marginal_cdf(t: float, x: float) -> float:
    """P(m(t) <= x) = exp(-t/x): void probability of the PPP above x."""
    if t <= 0 or x <= 0:
        raise ValueError("marginal_cdf needs t > 0 and x > 0")
    return math.exp(-t / x)


def _frechet(rng: np.random.Generator, scale_t: float, size=None):
    """Samples with CDF exp(-scale_t/x) via x = -t/ln(U); U = 0 is resampled."""
    u = rng.random(size)
    while np.any(u == 0.0):
        u = np.where(u == 0.0, rng.random(size), u)
    return -scale_t / np.log(u)


@dataclass(frozen=True)
class ExtremalPath:
    """Pure-jump non-decreasing path: record times and strictly increasing values."""

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape:
            raise ValueError("times/values length mismatch")
        if t.size and (np.any(np.diff(t) <= 0) or np.any(np.diff(v) <= 0)):
            raise ValueError("records must be strictly increasing in time and value")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def evaluate(self, t):
        """Largest record value with record time <= t; 0 before the first record."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return vals if vals.shape else float(vals)


@dataclass(frozen=True)
class InversePath:
    """m_inv(t) = inf{s : m(s) > t}; capped at the horizon beyond the last record."""

    jump_times: np.ndarray  # the record values of m
    values: np.ndarray  # record times, then the horizon cap
    horizon: float

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right")
        vals = self.values[idx]
        return vals if vals.shape else float(vals)


def sample_on_grid(times, rng: np.random.Generator, horizon: float | None = None) -> ExtremalPath:
    """Exact joint sample of m on an increasing positive grid via max-stability.

    m(t_1) is Frechet with CDF exp(-t_1/x) and each increment contributes an
    independent maximum with CDF exp(-dt/x).
    """
    grid = np.asarray(times, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d sequence")
    if grid[0] <= 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and positive")
    dt = np.diff(grid, prepend=0.0)
    draws = _frechet(rng, dt, size=len(grid))
    levels = np.maximum.accumulate(draws)
    keep = np.ones(len(grid), dtype=bool)
    keep[1:] = levels[1:] > levels[:-1]
    T = horizon if horizon is not None else float(grid[-1])
    return ExtremalPath(grid[keep], levels[keep], T)


def invert_path(p: ExtremalPath) -> InversePath:
    """Exact right-continuous inverse of a record path.

    Jumps at the record values; takes the record times as values, with the
    horizon cap standing in for +infinity after the last record.
    """
    if p.times.size == 0:
        return InversePath(np.array([]), np.array([p.horizon]), p.horizon)
    vals = np.concatenate((p.times, [p.horizon]))
    return InversePath(p.values.copy(), vals, p.horizon)


def sample_ppp_truncated(
    horizon: float, eps: float, rng: np.random.Generator
) -> ExtremalPath:
    """Cross-check oracle: thin the PPP to x > eps and take running maxima.

    Biased low: with probability exp(-t/eps) there is no point above eps by
    time t and the path is still 0 there.
    """
    if eps <= 0 or horizon <= 0:
        raise ValueError("need eps > 0 and horizon > 0")
    count = rng.poisson(horizon / eps)
    if count == 0:
        return ExtremalPath(np.array([]), np.array([]), horizon)
    ts = np.sort(rng.random(count) * horizon)
    xs = eps / (1.0 - rng.random(count))  # Pareto: intensity x^-2 dx above eps
    level = np.maximum.accumulate(xs)
    keep = np.ones(count, dtype=bool)
    keep[1:] = level[1:] > level[:-1]
    return ExtremalPath(ts[keep], level[keep], horizon)


def sample_inverse_at_one_batch(
    rng: np.random.Generator,
    reps: int,
    horizon: float = 15.0,
    dt: float = 0.01,
    chunk: int = 4000,
) -> np.ndarray:
    """m_inv(1) over many grid-sampled paths, vectorized.

    Each replica runs the sample_on_grid -> invert_path pipeline on a uniform
    grid; the returned time is the grid point at which the running maximum
    first exceeds 1 (horizon cap if it never does). Limit law is Exp(1); the
    grid introduces an upward bias of at most dt.
    """
    grid = np.arange(dt, horizon + dt / 2, dt)
    incr = np.diff(grid, prepend=0.0)
    out = np.empty(reps)
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        u = rng.random((m, grid.size))
        np.clip(u, 1e-300, None, out=u)
        levels = np.maximum.accumulate(-incr / np.log(u), axis=1)
        hit = levels > 1.0
        first = np.argmax(hit, axis=1)
        any_hit = hit[np.arange(m), first]
        out[done : done + m] = np.where(any_hit, grid[first], horizon)
        done += m
    return out
