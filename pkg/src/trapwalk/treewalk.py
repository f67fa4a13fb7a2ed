"""Biased random walk on the spinal decomposition of Kesten's tree.

Two engines share one record type. The exact engine simulates the discrete
conductance-weighted chain on explicitly realized (small) subtrees and exists
as an oracle; the surrogate engine works on the log scale, where the time to
cross the first k backbone vertices is dominated by beta raised to the
greatest height among big leaves visited deeply along the way. Only the
surrogate scales to the regime where hitting times are exp(Theta(n)).

Conductance convention: an edge joining generation g to generation g+1
carries conductance beta^g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kestentree import (
    ExplicitTree,
    OffspringLaw,
    critical_height,
    leaf_profile_logweights,
    realize_leaf,
    sample_big_heights,
    sample_heights,
)
from .logdomain import NEG_INF, log_cumsum, log_sum

# ---------------------------------------------------------------------------
# explicit graphs and the batched exact walker
# ---------------------------------------------------------------------------


@dataclass
class WalkGraph:
    """Undirected conductance graph in CSR form, ready for walking."""

    row_offsets: np.ndarray  # len V+1
    nbr: np.ndarray  # len 2E
    prefix: np.ndarray  # len 2E+1, global running sum of slot conductances
    n_vertices: int


class GraphBuilder:
    def __init__(self):
        self.edges_u: list[int] = []
        self.edges_v: list[int] = []
        self.cond: list[float] = []
        self.n = 0

    def add_vertices(self, count: int) -> int:
        first = self.n
        self.n += count
        return first

    def add_edge(self, u: int, v: int, c: float) -> None:
        self.edges_u.append(u)
        self.edges_v.append(v)
        self.cond.append(c)

    def build(self) -> WalkGraph:
        eu = np.asarray(self.edges_u, dtype=np.int64)
        ev = np.asarray(self.edges_v, dtype=np.int64)
        ec = np.asarray(self.cond, dtype=float)
        ends = np.concatenate((eu, ev))
        other = np.concatenate((ev, eu))
        weights = np.concatenate((ec, ec))
        order = np.argsort(ends, kind="stable")
        ends, other, weights = ends[order], other[order], weights[order]
        counts = np.bincount(ends, minlength=self.n)
        row_offsets = np.concatenate(([0], np.cumsum(counts)))
        prefix = np.concatenate(([0.0], np.cumsum(weights)))
        return WalkGraph(row_offsets, other, prefix, self.n)


def merge_graphs(graphs: list[WalkGraph]):
    """Disjoint union; returns (graph, per-input vertex offsets)."""
    offsets = np.cumsum([0] + [g.n_vertices for g in graphs])
    slot_off = np.cumsum([0] + [len(g.nbr) for g in graphs])
    row = np.concatenate(
        [g.row_offsets[:-1] + slot_off[i] for i, g in enumerate(graphs)]
        + [[slot_off[-1]]]
    )
    nbr = np.concatenate([g.nbr + offsets[i] for i, g in enumerate(graphs)])
    base = 0.0
    prefs = [np.array([0.0])]
    for g in graphs:
        prefs.append(g.prefix[1:] + base)
        base += float(g.prefix[-1])
    prefix = np.concatenate(prefs)
    return WalkGraph(row, nbr, prefix, int(offsets[-1])), offsets[:-1]


def batch_walk(
    graph: WalkGraph,
    starts: np.ndarray,
    rng: np.random.Generator,
    max_steps: int,
    absorbing: np.ndarray | None = None,
    flags: np.ndarray | None = None,
    snapshot_steps=None,
    track_visited: bool = False,
):
    """Advance many walkers in lockstep on one (possibly merged) graph.

    Per step and walker the next vertex is drawn proportionally to edge
    conductances via one searchsorted on the global conductance prefix.
    Returns a dict with 'state', 'absorb_step', 'flag_counts', 'snapshots',
    'visited' (those requested). Flag counts accumulate occupation time
    (number of discrete time indices spent at flagged vertices) up to
    absorption.
    """
    state = np.asarray(starts, dtype=np.int64).copy()
    n_walk = len(state)
    absorbed_at = np.full(n_walk, -1, dtype=np.int64)
    flag_counts = np.zeros(n_walk, dtype=np.int64) if flags is not None else None
    visited = np.zeros(graph.n_vertices, dtype=bool) if track_visited else None
    snaps: dict[int, np.ndarray] = {}
    snapshot_steps = sorted(snapshot_steps) if snapshot_steps else []
    alive = np.arange(n_walk)
    if absorbing is not None:
        dead = absorbing[state[alive]]
        absorbed_at[alive[dead]] = 0
        alive = alive[~dead]
    if track_visited:
        visited[state] = True
    snap_i = 0
    for step in range(max_steps):
        while snap_i < len(snapshot_steps) and snapshot_steps[snap_i] == step:
            snaps[snapshot_steps[snap_i]] = state.copy()
            snap_i += 1
        if alive.size == 0 and snap_i >= len(snapshot_steps):
            break
        if alive.size:
            v = state[alive]
            if flags is not None:
                flag_counts[alive] += flags[v]
            lo = graph.row_offsets[v]
            hi = graph.row_offsets[v + 1]
            base = graph.prefix[lo]
            total = graph.prefix[hi] - base
            q = base + rng.random(alive.size) * total
            slot = np.searchsorted(graph.prefix, q, side="right") - 1
            slot = np.clip(slot, lo, hi - 1)
            nxt = graph.nbr[slot]
            state[alive] = nxt
            if track_visited:
                visited[nxt] = True
            if absorbing is not None:
                dead = absorbing[nxt]
                absorbed_at[alive[dead]] = step + 1
                alive = alive[~dead]
    while snap_i < len(snapshot_steps):
        snaps[snapshot_steps[snap_i]] = state.copy()
        snap_i += 1
    return {
        "state": state,
        "absorb_step": absorbed_at,
        "flag_counts": flag_counts,
        "snapshots": snaps,
        "visited": visited,
    }


def exact_walk(
    graph: WalkGraph,
    start: int,
    rng: np.random.Generator,
    stop_vertices,
    step_budget: int = 10**7,
    flags: np.ndarray | None = None,
):
    """Single-trajectory exact chain until a stopping vertex is hit.

    Returns (steps, stop_vertex, flag_count, visited); visited is a boolean
    array over vertices (e.g. which leaf entrances were reached).
    """
    absorbing = np.zeros(graph.n_vertices, dtype=bool)
    absorbing[np.asarray(stop_vertices, dtype=np.int64)] = True
    res = batch_walk(
        graph,
        np.array([start]),
        rng,
        step_budget,
        absorbing=absorbing,
        flags=flags,
        track_visited=True,
    )
    step = int(res["absorb_step"][0])
    if step < 0:
        raise RuntimeError("exact_walk exhausted its step budget")
    fc = int(res["flag_counts"][0]) if flags is not None else 0
    return step, int(res["state"][0]), fc, res["visited"]


def hitting_time_dense(graph: WalkGraph, targets) -> np.ndarray:
    """Expected steps to hit the target set from every vertex (dense solve).

    Oracle for small graphs: solves (I - P) h = 1 with h = 0 on targets.
    """
    n = graph.n_vertices
    p = np.zeros((n, n))
    for v in range(n):
        lo, hi = graph.row_offsets[v], graph.row_offsets[v + 1]
        w = np.diff(graph.prefix[lo : hi + 1])
        p[v, graph.nbr[lo:hi]] += w / w.sum()
    t = np.zeros(n, dtype=bool)
    t[np.asarray(targets, dtype=np.int64)] = True
    free = ~t
    a = np.eye(free.sum()) - p[np.ix_(free, free)]
    h = np.zeros(n)
    h[free] = np.linalg.solve(a, np.ones(free.sum()))
    return h


# ---------------------------------------------------------------------------
# Lemma-level closed forms and exact samplers
# ---------------------------------------------------------------------------


def sample_visited_set(b_size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draw of the deeply-visited subset V among b_size big leaves.

    #V is uniform on {0..b_size} and, given its size, the subset is uniform;
    equivalently P(V = A) = (1/(1+b)) / binom(b, |A|).
    """
    if b_size < 0:
        raise ValueError("b_size must be >= 0")
    out = np.zeros(b_size, dtype=bool)
    if b_size == 0:
        return out
    v = int(rng.integers(0, b_size + 1))
    if v:
        out[rng.choice(b_size, size=v, replace=False)] = True
    return out


def visited_set_pmf(b_size: int) -> dict[tuple[int, ...], float]:
    """Exact pmf of V over subsets, for enumeration oracles (b_size <= ~12)."""
    from itertools import combinations

    pmf = {}
    for size in range(b_size + 1):
        for a in combinations(range(b_size), size):
            pmf[a] = 1.0 / ((b_size + 1) * math.comb(b_size, size))
    return pmf


def visited_height_tail(law: OffspringLaw, x: int, h_n: int) -> float:
    """P(max height among deeply-visited big leaves >= x) = q_x^(a-1) l(q_x).

    Exact for x >= h_n >= 1; for the geometric law this is 1/(x+2).
    """
    if x < h_n:
        raise ValueError("tail formula requires x >= h_n")
    if h_n < 1:
        raise ValueError("need h_n >= 1 so that q_x < 1")
    q = law.q_table(x)
    qx = float(q[x])
    return float(qx ** (law.alpha - 1.0) * law.slowvar_l(qx))


def full_height_tail(law: OffspringLaw, x: int) -> float:
    """P(max height over all buds at one backbone vertex >= x) = 1 - f'(1-q_x)."""
    q = law.q_table(x)
    return 1.0 - float(law.dpgf(1.0 - q[x]))


# ---------------------------------------------------------------------------
# quenched means
# ---------------------------------------------------------------------------


def leaf_log_weight(tree: ExplicitTree, log_beta: float) -> float:
    """log of w = sum_d v(d) beta^d for one realized leaf (bud at depth 0).

    beta^i * w is the total conductance the leaf contributes to T_i (bud edge
    included), counting each edge once.
    """
    gens = tree.generation_sizes().astype(float)
    d = np.arange(len(gens))
    return log_sum(np.log(gens) + d * log_beta)


def quenched_mean_sigma(leaves: list[ExplicitTree], i: int, beta: float) -> float:
    """Expected exit time of T_i started at its backbone vertex.

    Equals 1 + (beta^-(i-1)/(1+beta)) * C for i >= 1 where C is the
    conductance sum over ordered adjacent pairs in T_i; C telescopes to
    2 beta^i W with W the total leaf weight, giving 1 + 2 beta W/(1+beta)
    (and 1 + 2W at the root, where there is no extra backbone edge to slow
    the escape).
    """
    if not leaves:
        return 1.0
    w = sum(math.exp(leaf_log_weight(t, math.log(beta))) for t in leaves)
    if i == 0:
        return 1.0 + 2.0 * w
    return 1.0 + 2.0 * beta * w / (1.0 + beta)


def log_sigma_from_log_weight(log_a: np.ndarray, beta: float) -> np.ndarray:
    """log E sigma_i from per-vertex log total leaf weight (index 0 = root)."""
    log_a = np.asarray(log_a, dtype=float)
    out = np.logaddexp(0.0, math.log(2.0 * beta / (1.0 + beta)) + log_a)
    if len(out):
        out[0] = np.logaddexp(0.0, math.log(2.0) + log_a[0])
    return out


@dataclass(frozen=True)
class QuenchedMeanResult:
    log_lower: float
    log_upper: float
    log_exact: float | None
    capped_fraction: float = 0.0

    def contains(self, log_value: float) -> bool:
        return self.log_lower - 1e-9 <= log_value <= self.log_upper + 1e-9


def quenched_mean_delta(
    log_a: np.ndarray, beta: float, capped_fraction: float = 0.0
) -> QuenchedMeanResult:
    """Quenched mean of the level-n hitting time from per-vertex leaf weights.

    log_a[i] = log sum_j w_ij (leaf weights at backbone vertex i; -inf when
    there are no buds), i = 0..n-1. Bounds come from the visit-count sandwich

        sum_i E sigma_i <= E Delta_n <= ((beta+1)/(beta-1)) sum_i E sigma_i,

    and the exact value from the backbone recursion

        E Delta_n = sum_{i<n} (1 + 2 beta^-i (sum_{k<i} beta^k
                                              + sum_{k<=i} beta^k A_k)),

    all evaluated in log-domain. When some leaves were capped the exact part
    is reported as None and only the bounds are meaningful.
    """
    log_a = np.asarray(log_a, dtype=float)
    n = len(log_a)
    if n == 0:
        raise ValueError("need at least one backbone vertex")
    log_sig = log_sigma_from_log_weight(log_a, beta)
    log_lower = log_sum(log_sig)
    log_upper = log_lower + math.log((beta + 1.0) / (beta - 1.0))
    lb = math.log(beta)
    i = np.arange(n)
    run_q = log_cumsum(i * lb + log_a)  # log sum_{k<=i} beta^k A_k
    with np.errstate(divide="ignore"):
        # log sum_{k<i} beta^k = i ln(beta) + log1p(-beta^-i) - log(beta-1)
        log_p = np.where(
            i > 0,
            i * lb + np.log1p(-np.exp(-i * lb)) - math.log(beta - 1.0),
            NEG_INF,
        )
    inner = np.logaddexp(log_p, run_q)
    terms = np.logaddexp(0.0, math.log(2.0) - i * lb + inner)
    log_exact = log_sum(terms)
    return QuenchedMeanResult(
        log_lower=log_lower,
        log_upper=log_upper,
        log_exact=None if capped_fraction > 0 else log_exact,
        capped_fraction=capped_fraction,
    )


def spine_log_weights(
    law: OffspringLaw, n: int, beta: float, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Per-vertex log leaf weights A_i for a fresh spine of length n.

    Buds are size-biased counts minus one; each leaf contributes its exact
    generation-profile weight (no explicit trees needed). Returns
    (log_a, capped_fraction).
    """
    z_tilde = np.asarray(law.sample_z_tilde(rng, size=n), dtype=np.int64)
    buds = z_tilde - 1
    offsets = np.concatenate(([0], np.cumsum(buds)))
    total = int(offsets[-1])
    _, logw, capped = leaf_profile_logweights(law, total, math.log(beta), rng)
    log_a = np.full(n, NEG_INF)
    has = buds > 0
    if total:
        padded = np.concatenate((logw, [NEG_INF]))
        seg = np.logaddexp.reduceat(padded, offsets[:-1])
        log_a[has] = seg[has]
    return log_a, float(np.mean(capped)) if total else 0.0


def quenched_mean_rescaled_stat(
    law: OffspringLaw, beta: float, n: int, rng: np.random.Generator
) -> float:
    """(alpha-1) ln_+ E Delta_n / (n alpha ln beta) for one sampled spine.

    The extra alpha in the denominator (relative to the hitting-time
    statistic) reflects that the quenched mean feels every big leaf, not just
    the deeply-visited ones.
    """
    log_a, capped = spine_log_weights(law, n, beta, rng)
    res = quenched_mean_delta(log_a, beta, capped_fraction=capped)
    log_e = res.log_exact if res.log_exact is not None else res.log_lower
    return (law.alpha - 1.0) * max(log_e, 0.0) / (n * law.alpha * math.log(beta))


# ---------------------------------------------------------------------------
# surrogate engine
# ---------------------------------------------------------------------------


@dataclass
class TreeHittingRecord:
    """Per-level log hitting times plus the engine that produced them."""

    beta: float
    n: int
    log_delta: np.ndarray  # index k = 0..levels: ln Delta_k (log scale only)
    engine: str
    visited_max_heights: np.ndarray | None = None  # per backbone vertex


def sample_visited_max_heights(
    law: OffspringLaw,
    count: int,
    h_n: int,
    rng: np.random.Generator,
    height_cap: int = 4_000_000,
) -> np.ndarray:
    """H_i = max height among deeply-visited big leaves for `count` vertices.

    Per vertex: bud count Z~-1, big-leaf count B ~ Binomial(buds, q_{h_n}),
    #V uniform on {0..B} (the visited-set law), and #V conditioned-big
    heights; H_i = 0 when nothing big is visited. Tail is exactly
    q_x^(a-1) l(q_x) for x >= h_n.
    """
    q = law.q_table(height_cap)
    z_tilde = np.asarray(law.sample_z_tilde(rng, size=count), dtype=np.int64)
    buds = z_tilde - 1
    b = rng.binomial(buds, q[h_n])
    v = (rng.random(count) * (b + 1)).astype(np.int64)  # uniform on {0..B}
    out = np.zeros(count, dtype=np.int64)
    total = int(v.sum())
    if total:
        hs, _ = sample_big_heights(q, h_n, rng, total)
        ends = np.cumsum(v)
        starts = ends - v
        idx = np.flatnonzero(v > 0)
        padded = np.concatenate((hs, [0]))
        seg_max = np.maximum.reduceat(padded, starts[idx])
        out[idx] = seg_max
    return out


def surrogate_hitting_path(
    law: OffspringLaw,
    beta: float,
    n: int,
    grid,
    rng: np.random.Generator,
) -> TreeHittingRecord:
    """Log-scale surrogate for the level-crossing times of the tree walk.

    ln Delta_k = ln(beta) * max_{i<k} H_i with H_i the deepest visited big
    leaf at backbone vertex i; this is the dominant term of the clock on the
    ln-scale (the time in one deep leaf of height h is beta^h up to
    polynomial factors, with matching upper and lower tail bounds).
    """
    if n < 10:
        raise ValueError("surrogate is meant for n >= 10")
    grid = np.asarray(grid, dtype=float)
    levels = int(math.floor(n * float(grid.max())))
    h_n = int(math.ceil(critical_height(n)))
    heights = sample_visited_max_heights(law, levels, h_n, rng)
    run = np.concatenate(([0], np.maximum.accumulate(heights)))
    log_delta = math.log(beta) * run.astype(float)
    return TreeHittingRecord(
        beta=beta,
        n=n,
        log_delta=log_delta,
        engine="surrogate",
        visited_max_heights=heights,
    )


def rescaled_tree_path(record: TreeHittingRecord, law: OffspringLaw, grid) -> np.ndarray:
    """(alpha-1) ln_+ Delta_{floor(n t)} / (n ln beta) on the grid."""
    grid = np.asarray(grid, dtype=float)
    ks = np.floor(record.n * grid).astype(np.int64)
    if np.any(ks >= len(record.log_delta)):
        raise ValueError("record does not cover n * max(grid)")
    vals = np.maximum(record.log_delta[ks], 0.0)
    return (law.alpha - 1.0) * vals / (record.n * math.log(record.beta))


def localization_index(heights: np.ndarray, u: float, beta: float) -> int:
    """First backbone index whose visited-leaf max height reaches u/ln(beta).

    Returns len(heights) when no vertex clears the threshold (caller extends).
    """
    thr = u / math.log(beta)
    hits = np.flatnonzero(heights >= thr)
    return int(hits[0]) if hits.size else len(heights)


def tree_aging_indicator(
    law: OffspringLaw,
    beta: float,
    n: int,
    a: float,
    b: float,
    rng: np.random.Generator,
    chunk: int = 4096,
    height_cap: int = 4_000_000,
) -> bool:
    """Surrogate aging: does the walk localize at the same backbone vertex at
    the e^(an) and e^(bn) timescales?

    Implemented through the localization identity: the position at time
    e^(xn) is the first backbone vertex whose deeply-visited leaf heights
    reach xn/ln(beta), so equality holds iff that first vertex already clears
    the larger threshold.
    """
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    h_n = int(math.ceil(critical_height(n)))
    thr_a = a * n / math.log(beta)
    thr_b = b * n / math.log(beta)
    l_a = l_b = None
    offset = 0
    while l_b is None:
        hs = sample_visited_max_heights(law, chunk, h_n, rng, height_cap)
        for idx in np.flatnonzero(hs >= thr_a):
            if l_a is None:
                l_a = offset + int(idx)
            if hs[idx] >= thr_b:
                l_b = offset + int(idx)
                break
        offset += chunk
    return l_a == l_b


# ---------------------------------------------------------------------------
# explicit tree-context assembly (oracle-scale)
# ---------------------------------------------------------------------------


@dataclass
class TreeContext:
    """Explicit T_i context: backbone piece with realized leaves.

    Vertex ids live in one WalkGraph; pi maps each vertex to its backbone
    index (the projection used by aging observables).
    """

    graph: WalkGraph
    backbone: np.ndarray  # vertex ids of rho_0..rho_M
    pi: np.ndarray  # per-vertex backbone projection
    leaves: list  # (backbone index, bud vertex id, ExplicitTree)
    deep_flags: np.ndarray | None = None
    entrances: list | None = None


def build_star(
    n_arms: int, arm_len: int, beta: float, gen0: int = 0
) -> tuple[WalkGraph, int, list[int], int]:
    """Symmetric star: center plus n_arms entrance arms and one escape arm.

    Every arm carries the conductance profile beta^(gen0), beta^(gen0+1), ...
    so the walk is equally likely to reach any arm end first. Returns
    (graph, center, entrance_end_ids, escape_end_id).
    """
    gb = GraphBuilder()
    center = gb.add_vertices(1)
    ends = []
    for _ in range(n_arms + 1):
        prev = center
        for k in range(arm_len):
            v = gb.add_vertices(1)
            gb.add_edge(prev, v, beta ** (gen0 + k))
            prev = v
        ends.append(prev)
    return gb.build(), center, ends[:-1], ends[-1]


def build_tree_context(
    law: OffspringLaw,
    beta: float,
    backbone_len: int,
    rng: np.random.Generator,
    height_cutoff: int,
    h_n: int | None = None,
    entrance_level: int | None = None,
    leaf_size_cap: int = 200_000,
) -> TreeContext:
    """Realize a truncated copy of the infinite tree for the exact engine.

    Backbone rho_0..rho_M; each vertex gets size-biased bud counts; bud leaf
    heights are drawn from the q-table conditioned below height_cutoff
    (rejection) and the leaves realized height-exactly. When h_n and
    entrance_level are given, vertices strictly below the entrance of each
    big leaf are flagged (deep_flags) and entrances recorded.
    """
    q = law.q_table(height_cutoff + 1)
    gb = GraphBuilder()
    backbone = gb.add_vertices(backbone_len + 1)
    for i in range(backbone_len):
        gb.add_edge(i, i + 1, beta**i)
    pi = list(range(backbone_len + 1))
    leaves = []
    flags = []
    entrances = []
    for i in range(backbone_len + 1):
        buds = int(law.sample_z_tilde(rng)) - 1
        for _ in range(buds):
            while True:
                h, capped = sample_heights(q, rng, None)
                h = int(h)
                if not capped and h < height_cutoff:
                    break
            tree = realize_leaf(law, rng, height_exact=h, cap=leaf_size_cap)
            if tree.overflow:
                continue
            ids = np.empty(tree.size, dtype=np.int64)
            ids[0] = gb.add_vertices(tree.size)
            ids[1:] = ids[0] + 1 + np.arange(tree.size - 1)
            gb.add_edge(i, int(ids[0]), beta**i)
            for v in range(1, tree.size):
                # bud sits at generation i+1, so depth d joins via beta^(i+d)
                gb.add_edge(
                    int(ids[tree.parents[v]]),
                    int(ids[v]),
                    beta ** (i + 1 + tree.depths[v] - 1),
                )
            pi.extend([i] * tree.size)
            leaves.append((i, int(ids[0]), tree))
            if h_n is not None and entrance_level is not None and h >= h_n:
                y = tree.deepest_vertex()
                x_entry = tree.ancestor_at_depth(y, entrance_level)
                entrances.append((i, int(ids[x_entry])))
                below = [
                    int(ids[v])
                    for v in range(tree.size)
                    if tree.depths[v] >= entrance_level
                    and tree.ancestor_at_depth(v, entrance_level) == x_entry
                ]
                flags.extend(below)
    graph = gb.build()
    deep = None
    if h_n is not None:
        deep = np.zeros(graph.n_vertices, dtype=bool)
        if flags:
            deep[np.array(flags)] = True
    return TreeContext(
        graph=graph,
        backbone=np.arange(backbone_len + 1),
        pi=np.array(pi, dtype=np.int64),
        leaves=leaves,
        deep_flags=deep,
        entrances=entrances if h_n is not None else None,
    )
