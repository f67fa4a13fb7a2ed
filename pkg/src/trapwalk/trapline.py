"""Exact simulation of the one-dimensional directed trap model.

The continuous-time chain is simulated through its embedded walk Y (step
right with probability beta/(beta+1)) plus the clock S(n) = sum of
tau(Y_i) * e_i with unit-mean exponentials e_i. All clock values live in
log-domain; running sums use logaddexp accumulation, so trap depths of order
exp(c*n) are exact to float precision in the log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .logdomain import NEG_INF, log_cumsum, log_sum
from .seeds import site_uniforms
from .svt import TailFunction

_BLOCK = 8192


class StepBudgetExceeded(RuntimeError):
    """The walk did not reach its stopping condition within the step budget.

    Signals an astronomically unlucky excursion (they exist: hitting-time
    tails are heavy); carries the partial record for post-mortems.
    """

    def __init__(self, record):
        super().__init__(f"step budget exhausted after {record.steps} steps")
        self.record = record


@dataclass
class TrapEnvironment:
    """iid trap depths on a lazily-extended window of integer sites.

    Depths are keyed by (seed, site) hashing, so regenerating or extending a
    window never reshuffles existing sites and is bit-identical per seed.
    """

    tail: TailFunction
    seed: int
    lo: int = 0
    hi: int = 0  # window is [lo, hi)
    _log_tau: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def ensure(self, lo: int, hi: int) -> None:
        if self.hi == self.lo:
            self.lo, self.hi = lo, hi
            self._log_tau = self._draw(np.arange(lo, hi))
            return
        if lo < self.lo:
            left = self._draw(np.arange(lo, self.lo))
            self._log_tau = np.concatenate((left, self._log_tau))
            self.lo = lo
        if hi > self.hi:
            right = self._draw(np.arange(self.hi, hi))
            self._log_tau = np.concatenate((self._log_tau, right))
            self.hi = hi

    def _draw(self, sites: np.ndarray) -> np.ndarray:
        return np.asarray(self.tail.inverse_log(site_uniforms(self.seed, sites)))

    def log_tau(self, sites) -> np.ndarray:
        sites = np.asarray(sites)
        if sites.size:
            self.ensure(min(self.lo, int(sites.min())), max(self.hi, int(sites.max()) + 1))
        return self._log_tau[sites - self.lo]

    def window(self, lo: int, hi: int) -> np.ndarray:
        self.ensure(lo, hi)
        return self._log_tau[lo - self.lo : hi - self.lo]


def generate_environment(
    tail: TailFunction, left: int, right: int, seed: int
) -> TrapEnvironment:
    """Environment covering [-left, right]; deterministic per seed."""
    if right < 1:
        raise ValueError("right edge must be >= 1")
    env = TrapEnvironment(tail, seed)
    env.ensure(-left, right + 1)
    return env


@dataclass
class WalkRecord:
    """Summary of one embedded-walk run: clock at backbone first-hits, etc."""

    beta: float
    level: int
    log_delta: np.ndarray  # log Delta_k at first hit of k = 1..level
    steps: int
    final_site: int
    backtrack_min: int  # min over time of Y_j - running max (is <= 0)
    log_shallow_clock: float = NEG_INF
    positions: np.ndarray | None = None  # Y_0..Y_steps when store_path
    log_contrib: np.ndarray | None = None  # per-step log(tau * e) when store_path


def _step_probability(beta: float) -> float:
    if beta <= 1:
        raise ValueError("bias must satisfy beta > 1")
    return beta / (beta + 1.0)


def run_to_level(
    env: TrapEnvironment,
    beta: float,
    n: int,
    rng: np.random.Generator,
    step_budget: int = 10**9,
    shallow_log_threshold: float | None = None,
    store_path: bool = False,
    visit_sites: np.ndarray | None = None,
):
    """Walk from 0 until the embedded walk first hits level n.

    Records the clock value Delta_k (log-domain) at the first hit of each
    level k <= n, exact backtracking depth, and optionally the clock mass in
    shallow traps (tau <= threshold) and per-site visit counts.
    Returns (record, visit_counts or None).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    p_right = _step_probability(beta)
    pos = 0
    steps = 0
    log_s = NEG_INF
    log_shallow = NEG_INF
    runmax = 0
    btmin = 0
    log_delta = np.full(n + 1, np.nan)
    counts = None
    offset = 0
    if visit_sites is not None:
        visit_sites = np.asarray(visit_sites)
        offset = int(visit_sites.min())
        counts = np.zeros(int(visit_sites.max()) - offset + 1, dtype=np.int64)
    paths = []
    contribs = []
    while runmax < n:
        if steps >= step_budget:
            rec = WalkRecord(beta, n, log_delta, steps, pos, btmin, log_shallow)
            raise StepBudgetExceeded(rec)
        m = min(_BLOCK, step_budget - steps)
        u = rng.random(m)
        log_e = np.log(rng.exponential(size=m))
        dirs = np.where(u < p_right, 1, -1)
        path = pos + np.cumsum(dirs)
        pos_before = np.concatenate(([pos], path[:-1]))
        lt = env.log_tau(pos_before)
        contrib = lt + log_e
        log_s_after = log_cumsum(contrib, log_s)
        blockmax = np.maximum.accumulate(path)
        blockmax = np.maximum(blockmax, runmax)
        hit = blockmax[-1] >= n
        cut = m
        if hit:
            cut = int(np.searchsorted(blockmax, n, side="left")) + 1
        new_levels = np.arange(runmax + 1, min(int(blockmax[-1]), n) + 1)
        if new_levels.size:
            idx = np.searchsorted(blockmax, new_levels, side="left")
            log_delta[new_levels] = log_s_after[idx]
        sl = slice(0, cut)
        btmin = min(btmin, int(np.min(path[sl] - blockmax[sl])))
        if shallow_log_threshold is not None:
            mask = lt[sl] <= shallow_log_threshold
            if np.any(mask):
                log_shallow = float(np.logaddexp(log_shallow, log_sum(contrib[sl][mask])))
        if counts is not None:
            inside = (pos_before[sl] >= offset) & (pos_before[sl] < offset + len(counts))
            np.add.at(counts, pos_before[sl][inside] - offset, 1)
        if store_path:
            paths.append(path[sl].copy())
            contribs.append(contrib[sl].copy())
        steps += cut
        if hit:
            pos = int(path[cut - 1])
            log_s = float(log_s_after[cut - 1])
            runmax = n
            break
        pos = int(path[-1])
        log_s = float(log_s_after[-1])
        runmax = int(blockmax[-1])
    record = WalkRecord(
        beta=beta,
        level=n,
        log_delta=log_delta,
        steps=steps,
        final_site=pos,
        backtrack_min=btmin,
        log_shallow_clock=log_shallow,
        positions=np.concatenate([[0]] + paths) if store_path else None,
        log_contrib=np.concatenate(contribs) if store_path else None,
    )
    if counts is not None:
        return record, counts
    return record


def rescaled_hitting_path(record: WalkRecord, tail: TailFunction, n: int, grid):
    """t -> (1/n) L(Delta_{floor(n t)}) evaluated on the requested grid."""
    grid = np.asarray(grid, dtype=float)
    ks = np.floor(n * grid).astype(np.int64)
    if np.any(ks > record.level):
        raise ValueError("record does not cover n * max(grid)")
    out = np.empty(len(ks))
    for i, k in enumerate(ks):
        if k < 1:
            out[i] = 1.0 / n  # Delta_0 = 0 and L(0) = 1
        else:
            out[i] = float(tail.big_l_log(record.log_delta[k])) / n
    return out


def position_at_timescale(
    env: TrapEnvironment,
    beta: float,
    log_t_values,
    rng: np.random.Generator,
    step_budget: int = 10**9,
):
    """Positions of X at the requested clock values (one walk, log-domain).

    X sits at Y_m at clock value t when S(m) <= t < S(m+1); the returned site
    for each requested value is the one occupied when the running clock first
    exceeds it.
    """
    targets = np.asarray(log_t_values, dtype=float)
    if np.any(np.diff(targets) < 0):
        raise ValueError("clock values must be non-decreasing")
    p_right = _step_probability(beta)
    out = np.zeros(len(targets), dtype=np.int64)
    next_target = 0
    pos = 0
    steps = 0
    log_s = NEG_INF
    while next_target < len(targets):
        if targets[next_target] == NEG_INF or targets[next_target] <= log_s:
            # requested value at or below current clock: site is current pos
            out[next_target] = pos
            next_target += 1
            continue
        if steps >= step_budget:
            raise StepBudgetExceeded(
                WalkRecord(beta, 0, np.empty(0), steps, pos, 0)
            )
        m = min(_BLOCK, step_budget - steps)
        u = rng.random(m)
        log_e = np.log(rng.exponential(size=m))
        dirs = np.where(u < p_right, 1, -1)
        path = pos + np.cumsum(dirs)
        pos_before = np.concatenate(([pos], path[:-1]))
        contrib = env.log_tau(pos_before) + log_e
        log_s_after = log_cumsum(contrib, log_s)
        while next_target < len(targets):
            idx = int(np.searchsorted(log_s_after, targets[next_target], side="right"))
            if idx >= m:
                break
            out[next_target] = pos_before[idx]
            next_target += 1
        pos = int(path[-1])
        log_s = float(log_s_after[-1])
        steps += m
    return out


def localization_site(env: TrapEnvironment, u: float, tail: TailFunction) -> int:
    """l(u) = min{x >= 0 : tau_x >= F_inv(1/u)}; extends the window as needed."""
    if u < 1:
        raise ValueError("need u >= 1")
    log_thresh = float(tail.inverse_log(1.0 / u))
    lo, chunk = 0, 4096
    while True:
        taus = env.window(lo, lo + chunk)
        hits = np.flatnonzero(taus >= log_thresh)
        if hits.size:
            return lo + int(hits[0])
        lo += chunk


def aging_indicator(
    env: TrapEnvironment,
    beta: float,
    n: int,
    a: float,
    b: float,
    tail: TailFunction,
    rng: np.random.Generator,
    step_budget: int = 10**9,
) -> bool:
    """True iff X occupies the same site at clock values F_inv(1/(na)), F_inv(1/(nb))."""
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    log_ta = float(tail.inverse_log(min(1.0, 1.0 / (n * a))))
    log_tb = float(tail.inverse_log(min(1.0, 1.0 / (n * b))))
    sites = position_at_timescale(env, beta, [log_ta, log_tb], rng, step_budget)
    return bool(sites[0] == sites[1])


@dataclass(frozen=True)
class DiagnosticFlags:
    e1_separated: bool
    e2_no_deep_left: bool
    e3_bounded_backtrack: bool
    e4_shallow_negligible: bool

    def all_hold(self) -> bool:
        return (
            self.e1_separated
            and self.e2_no_deep_left
            and self.e3_bounded_backtrack
            and self.e4_shallow_negligible
        )


def diagnostics(
    env: TrapEnvironment,
    record: WalkRecord,
    n: int,
    T: float,
    kappa: float,
    gamma_prime: float,
) -> DiagnosticFlags:
    """Environment/trajectory events whose probabilities tend to one.

    E1: deep traps in [1, nT] pairwise separated by more than n^kappa.
    E2: no deep trap in [-(ln n)^(1+gamma'), 0].
    E3: backtracking bounded by (ln n)^(1+gamma').
    E4: clock mass in shallow traps below F_inv(n^-1 (ln n)^(1/2)).
    """
    if record.level < int(n * T):
        raise ValueError("record does not cover level n*T")
    log_g = env.tail.critical_depth(n).logValue
    width = int(math.ceil(math.log(n) ** (1.0 + gamma_prime)))
    right = env.window(1, int(n * T) + 1)
    deep = np.flatnonzero(right > log_g)
    e1 = bool(deep.size < 2 or np.min(np.diff(deep)) > n**kappa)
    left = env.window(-width, 1)
    e2 = bool(np.all(left <= log_g))
    e3 = bool(record.backtrack_min > -width)
    log_e4 = float(env.tail.inverse_log(min(1.0, math.sqrt(math.log(n)) / n)))
    e4 = bool(record.log_shallow_clock < log_e4)
    return DiagnosticFlags(e1, e2, e3, e4)
