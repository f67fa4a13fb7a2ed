"""Critical Galton-Watson machinery: offspring laws, survival probabilities,
size-biasing, the spinal decomposition, and height-conditioned tree building.

Two built-in mean-one offspring laws are provided. The geometric law
p_k = 2^-(k+1) has pgf f(s) = 1/(2-s) and lands in the stable domain with
index 2; the Zipf family p_k = k^-(1+a)/zeta(a) (k >= 1) has index a for
a in (1, 2). Both expose the decomposition f(s) = s + (1-s)^a * l(1-s) with
l slowly varying at 0, which drives the survival recursion
q_{n+1} = 1 - f(1 - q_n) in the cancellation-free form q - gap(q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .logdomain import NEG_INF

# ---------------------------------------------------------------------------
# zeta constants: direct summation plus an Euler-Maclaurin tail bound.
# ---------------------------------------------------------------------------

_ZETA_TERMS = 1_000_000


def zeta_direct(x: float, terms: int = _ZETA_TERMS) -> float:
    """Riemann zeta for x > 1 by summation with an integral tail correction."""
    if x <= 1:
        raise ValueError("zeta_direct needs x > 1")
    k = np.arange(1, terms + 1, dtype=float)
    head = float(np.sum(k ** (-x)))
    kk = terms + 1
    tail = kk ** (1 - x) / (x - 1) + 0.5 * kk ** (-x) - (x / 12.0) * kk ** (-x - 1)
    return head + tail


def _zeta_any(x: float) -> float:
    """zeta at arbitrary real arguments (series coefficients); mpmath-backed."""
    import mpmath

    return float(mpmath.zeta(x))


# ---------------------------------------------------------------------------
# offspring laws
# ---------------------------------------------------------------------------


class OffspringLaw:
    """Mean-one offspring distribution with pgf access and survival table.

    Subclasses implement the pmf, the pgf f and derivative f', the stable
    "gap" f(1-u) - (1-u) = u^alpha * l(u) without cancellation, and exact
    samplers for Z, the size-biased Z-tilde, and sums of iid copies.
    """

    alpha: float
    family: str

    def __init__(self):
        self._q_cache = np.array([1.0])

    # pgf interface -----------------------------------------------------

    def pmf(self, k):
        raise NotImplementedError

    def pgf(self, s):
        raise NotImplementedError

    def dpgf(self, s):
        raise NotImplementedError

    def gap(self, u):
        """f(1-u) - (1-u), evaluated stably; equals u^alpha * l(u)."""
        raise NotImplementedError

    def slowvar_l(self, u):
        """l(u) = (f(1-u) - (1-u)) / u^alpha from the pgf decomposition."""
        u = np.asarray(u, dtype=float)
        return self.gap(u) / u**self.alpha

    # samplers -----------------------------------------------------------

    def sample_z(self, rng, size=None):
        raise NotImplementedError

    def sample_z_tilde(self, rng, size=None):
        raise NotImplementedError

    def sample_sum(self, counts, rng):
        """Vector of sums of iid Z draws; counts is an integer array."""
        counts = np.asarray(counts)
        out = np.zeros(counts.shape, dtype=np.int64)
        pos = counts > 0
        if np.any(pos):
            out[pos] = self._sample_sum_pos(counts[pos], rng)
        return out

    def _sample_sum_pos(self, counts, rng):
        total = int(np.sum(counts))
        draws = self.sample_z(rng, size=total)
        ends = np.cumsum(counts)
        starts = np.concatenate(([0], ends[:-1]))
        return np.add.reduceat(draws, starts) if total else np.zeros(0, np.int64)

    # survival probabilities ----------------------------------------------

    def q_table(self, n_max: int) -> np.ndarray:
        """q_k = P(Z_k > 0) for k = 0..n_max via q_{k+1} = q_k - gap(q_k)."""
        if n_max + 1 > len(self._q_cache):
            q = np.empty(n_max + 1)
            old = self._q_cache
            q[: len(old)] = old
            for k in range(len(old) - 1, n_max):
                q[k + 1] = q[k] - float(self.gap(q[k]))
            self._q_cache = q
        return self._q_cache[: n_max + 1]


class GeometricLaw(OffspringLaw):
    """p_k = 2^-(k+1): f(s) = 1/(2-s), alpha = 2, q_n = 1/(n+1)."""

    def __init__(self):
        super().__init__()
        self.alpha = 2.0
        self.family = "geometric"

    def pmf(self, k):
        k = np.asarray(k, dtype=float)
        return 0.5 ** (k + 1)

    def pgf(self, s):
        return 1.0 / (2.0 - np.asarray(s, dtype=float))

    def dpgf(self, s):
        return (2.0 - np.asarray(s, dtype=float)) ** (-2.0)

    def gap(self, u):
        u = np.asarray(u, dtype=float)
        return u * u / (1.0 + u)

    def slowvar_l(self, u):
        return 1.0 / (1.0 + np.asarray(u, dtype=float))

    def sample_z(self, rng, size=None):
        return rng.geometric(0.5, size=size) - 1

    def sample_z_tilde(self, rng, size=None):
        # k * 2^-(k+1) is 1 + NegBinomial(2, 1/2)
        return rng.negative_binomial(2, 0.5, size=size) + 1

    def _sample_sum_pos(self, counts, rng):
        # sum of m iid Geometric0(1/2) is NegBinomial(m, 1/2)
        return rng.negative_binomial(counts, 0.5)

    def q_table(self, n_max: int) -> np.ndarray:
        if n_max + 1 > len(self._q_cache):
            old = self._q_cache
            q = np.empty(n_max + 1)
            q[: len(old)] = old
            qk = float(old[-1])
            for k in range(len(old) - 1, n_max):
                qk = qk / (1.0 + qk)  # q - q^2/(1+q), scalar fast path
                q[k + 1] = qk
            self._q_cache = q
        return self._q_cache[: n_max + 1]


class ZipfLaw(OffspringLaw):
    """p_k = k^-(1+alpha)/zeta(alpha) for k >= 1; p_0 fills the mean-one gap.

    Tail P(Z > k) ~ k^-alpha/(alpha*zeta(alpha)) puts Z in the stable-alpha
    domain for alpha in (1, 2).
    """

    _SERIES_TERMS = 12

    def __init__(self, alpha: float):
        if not 1.0 < alpha < 2.0:
            raise ValueError("stable index must lie in (1, 2)")
        super().__init__()
        self.alpha = float(alpha)
        self.family = "zipf"
        self.zeta_a = zeta_direct(alpha)
        self.zeta_a1 = zeta_direct(1.0 + alpha)
        self.p0 = 1.0 - self.zeta_a1 / self.zeta_a
        if self.p0 < 0:
            raise ValueError("zeta(1+a) > zeta(a): impossible")
        from scipy.special import gamma as _gamma

        self._gamma_neg_a = float(_gamma(-self.alpha))
        self._gamma_1_minus_a = float(_gamma(1.0 - self.alpha))
        # polylog series coefficients zeta(1+a-j), zeta(a-j) for j = 0..J
        J = self._SERIES_TERMS
        self._z1aj = np.array([_zeta_any(1.0 + alpha - j) for j in range(J + 1)])
        self._zaj = np.array([_zeta_any(alpha - j) for j in range(J + 1)])

    def pmf(self, k):
        k = np.asarray(k, dtype=float)
        out = np.where(k >= 1, np.maximum(k, 1.0) ** (-(1.0 + self.alpha)) / self.zeta_a, 0.0)
        return np.where(k == 0, self.p0, out)

    def _series_sum(self, s, powers):
        """sum_{k>=1} k^-powers * s^k truncated where s^k underflows."""
        s = float(s)
        if s <= 0:
            return 0.0
        k_max = min(int(-745.0 / math.log(s)) + 2 if s < 1 else 10**6, 10**6)
        k = np.arange(1, k_max + 1, dtype=float)
        return float(np.sum(k ** (-powers) * s**k))

    def pgf(self, s):
        # f(s) = s + gap(1 - s) exactly, and gap is cancellation-free
        s = np.asarray(s, dtype=float)
        return s + self.gap(1.0 - s)

    def dpgf(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty(s.shape)
        for i, si in enumerate(s):
            if si >= 0.61:
                out[i] = self._dpgf_expansion(1.0 - si)
            else:
                out[i] = self._series_sum(si, self.alpha) / (max(si, 1e-300) * self.zeta_a)
        return float(out[0]) if scalar else out

    def _dpgf_expansion(self, u: float) -> float:
        """f'(1-u) for small u via the polylog expansion at s = e^-t."""
        t = -math.log1p(-u)
        j = np.arange(self._SERIES_TERMS + 1)
        series = float(np.sum(self._zaj * (-t) ** j / _factorials(self._SERIES_TERMS)))
        li = self._gamma_1_minus_a * t ** (self.alpha - 1.0) + series
        return li / ((1.0 - u) * self.zeta_a)

    def gap(self, u):
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        out = np.empty(u.shape)
        for i, ui in enumerate(u):
            out[i] = self._gap_one(float(ui))
        return float(out[0]) if scalar else out

    def _gap_one(self, u: float) -> float:
        if u <= 0:
            return 0.0
        if u >= 0.39:
            # direct: f(s) - s = p0*u - s * sum_{k>=2} p_k (1 - s^{k-1})
            s = 1.0 - u
            k = np.arange(2, 400, dtype=float)
            pk = k ** (-(1.0 + self.alpha)) / self.zeta_a
            mass_ge2 = 1.0 - self.p0 - 1.0 / self.zeta_a
            geo = float(np.sum(pk * s ** (k - 1.0)))
            return self.p0 * u - s * (mass_ge2 - geo)
        # polylog expansion: gap = (u-t) + G(-a) t^a / z(a) + sum_{j>=2} ...
        t = -math.log1p(-u)
        if u < 1e-4:
            u_minus_t = -(u**2 / 2.0 + u**3 / 3.0 + u**4 / 4.0 + u**5 / 5.0)
        else:
            u_minus_t = u - t
        j = np.arange(2, self._SERIES_TERMS + 1)
        series = float(
            np.sum(self._z1aj[2:] * (-t) ** j / _factorials(self._SERIES_TERMS)[2:])
        )
        return u_minus_t + (self._gamma_neg_a * t**self.alpha + series) / self.zeta_a

    def sample_z(self, rng, size=None):
        u = rng.random(size)
        body = rng.zipf(1.0 + self.alpha, size=size)
        return np.where(u < self.p0, 0, body) if size is not None else (
            0 if u < self.p0 else int(body)
        )

    def sample_z_tilde(self, rng, size=None):
        # k*p_k proportional to k^-alpha: the textbook Zipf(alpha) on {1,2,...}
        return rng.zipf(self.alpha, size=size)


_FACT_CACHE: dict[int, np.ndarray] = {}


def _factorials(n: int) -> np.ndarray:
    if n not in _FACT_CACHE:
        _FACT_CACHE[n] = np.array([math.factorial(j) for j in range(n + 1)], dtype=float)
    return _FACT_CACHE[n]


def make_geometric_law() -> GeometricLaw:
    return GeometricLaw()


def make_stable_law(alpha: float) -> ZipfLaw:
    return ZipfLaw(alpha)


def make_law(family: str, alpha: float | None = None) -> OffspringLaw:
    if family == "geometric":
        return make_geometric_law()
    if family == "zipf":
        if alpha is None:
            raise ValueError("zipf family needs alpha")
        return make_stable_law(alpha)
    raise ValueError(f"unknown offspring family {family!r}")


# ---------------------------------------------------------------------------
# survival table and height-ratio constants
# ---------------------------------------------------------------------------


def survival_table(law: OffspringLaw, n_max: int) -> np.ndarray:
    """q_0..q_{n_max} with q_0 = 1 and q_{n+1} = 1 - f(1 - q_n)."""
    if n_max < 1:
        raise ValueError("need n_max >= 1")
    return law.q_table(n_max)


def height_ratio_constants(law: OffspringLaw, n: int) -> float:
    """c_n = P(h(T) = n) / P(h(T) = n+1) = (q_n - q_{n+1}) / (q_{n+1} - q_{n+2}).

    Computed from the cancellation-free gaps q_k - q_{k+1} = gap(q_k).
    """
    q = law.q_table(n + 2)
    num = float(law.gap(q[n]))
    den = float(law.gap(q[n + 1]))
    assert den > 0.0, "degenerate height law: consecutive q values equal"
    return num / den


# ---------------------------------------------------------------------------
# heights from the q table
# ---------------------------------------------------------------------------


def sample_heights(q: np.ndarray, rng, size, thresholds=None):
    """Leaf heights with P(h >= k) = q_k by inverse transform on the table.

    Returns (heights, capped) where capped marks draws whose height reached
    the table length (true height is >= table length there).
    """
    n_max = len(q) - 1
    u = rng.random(size) if thresholds is None else np.asarray(thresholds)
    rev = q[::-1]
    count = np.searchsorted(rev, u, side="right")
    h = n_max - count
    capped = h >= n_max
    return h, capped


def sample_big_heights(q: np.ndarray, h_n: int, rng, size):
    """Heights conditioned to be big: P(h >= x | h >= h_n) = q_x / q_{h_n}."""
    u = rng.random(size) * q[h_n]
    return sample_heights(q, rng, size, thresholds=u)


# ---------------------------------------------------------------------------
# spinal decomposition
# ---------------------------------------------------------------------------


@dataclass
class SpinalSkeleton:
    """Backbone of length n with per-vertex bud counts and per-bud leaf heights.

    Leaves are lazy: only heights are stored here (flat array + offsets);
    explicit trees are realized on demand via realize_leaf.
    """

    length: int
    bud_counts: np.ndarray  # Z~_i - 1 per backbone vertex
    leaf_heights: np.ndarray  # flat, grouped by vertex
    offsets: np.ndarray  # bud_counts prefix sums, len = length + 1
    capped: np.ndarray  # per-leaf flag: height hit the q-table cap
    h_crit: float  # critical height h_n = n_scale / ln(n_scale)

    def heights_of(self, i: int) -> np.ndarray:
        return self.leaf_heights[self.offsets[i] : self.offsets[i + 1]]

    def big_leaf_counts(self) -> np.ndarray:
        """N_n(i) = number of leaves of height >= h_crit per vertex."""
        big = self.leaf_heights >= self.h_crit
        return np.add.reduceat(
            np.concatenate((big, [False])).astype(np.int64), self.offsets[:-1]
        ) * (self.bud_counts > 0)


def critical_height(n_scale: float) -> float:
    if n_scale <= 1:
        raise ValueError("critical height needs n_scale > 1")
    return n_scale / math.log(n_scale)


def build_spine(
    law: OffspringLaw,
    length: int,
    n_scale: float,
    rng,
    height_cap: int = 1_000_000,
) -> SpinalSkeleton:
    """Sample the spinal skeleton: iid size-biased bud counts, iid leaf heights."""
    q = law.q_table(height_cap)
    z_tilde = np.asarray(law.sample_z_tilde(rng, size=length), dtype=np.int64)
    buds = z_tilde - 1
    offsets = np.concatenate(([0], np.cumsum(buds)))
    total = int(offsets[-1])
    heights, capped = sample_heights(q, rng, total)
    return SpinalSkeleton(
        length=length,
        bud_counts=buds,
        leaf_heights=heights,
        offsets=offsets,
        capped=capped,
        h_crit=critical_height(n_scale),
    )


# ---------------------------------------------------------------------------
# explicit trees
# ---------------------------------------------------------------------------


@dataclass
class ExplicitTree:
    """Rooted ordered tree as a parent array (birth order preserved)."""

    parents: np.ndarray
    depths: np.ndarray
    height: int
    overflow: bool = False
    child_order: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.parents)

    def children_csr(self):
        """(offsets, children) with children of each vertex in birth order."""
        n = self.size
        counts = np.zeros(n, dtype=np.int64)
        for p in self.parents[1:]:
            counts[p] += 1
        offsets = np.concatenate(([0], np.cumsum(counts)))
        children = np.empty(max(n - 1, 0), dtype=np.int64)
        fill = offsets[:-1].copy()
        for v in range(1, n):
            p = self.parents[v]
            children[fill[p]] = v
            fill[p] += 1
        return offsets, children

    def deepest_vertex(self) -> int:
        """First vertex at maximal depth in lexicographic (birth) order."""
        cands = np.flatnonzero(self.depths == self.height)
        if len(cands) == 1:
            return int(cands[0])
        paths = [self._birth_path(int(v)) for v in cands]
        return int(cands[int(np.argmin(np.array([p for p in paths], dtype=object)))])

    def _birth_path(self, v: int):
        path = []
        while self.parents[v] >= 0:
            path.append(int(self.child_order[v]))
            v = int(self.parents[v])
        return tuple(reversed(path))

    def ancestor_at_depth(self, v: int, depth: int) -> int:
        while self.depths[v] > depth:
            v = int(self.parents[v])
        return int(v)

    def generation_sizes(self) -> np.ndarray:
        return np.bincount(self.depths, minlength=self.height + 1)


class _TreeBuilder:
    def __init__(self, cap: int):
        self.parents = [-1]
        self.depths = [0]
        self.child_order = [0]
        self.cap = cap
        self.overflow = False

    def add(self, parent: int, order: int) -> int:
        if len(self.parents) >= self.cap:
            self.overflow = True
            return -1
        self.parents.append(parent)
        self.depths.append(self.depths[parent] + 1)
        self.child_order.append(order)
        return len(self.parents) - 1

    def finish(self) -> ExplicitTree:
        depths = np.array(self.depths, dtype=np.int64)
        return ExplicitTree(
            parents=np.array(self.parents, dtype=np.int64),
            depths=depths,
            height=int(depths.max()),
            overflow=self.overflow,
            child_order=np.array(self.child_order, dtype=np.int64),
        )


def _grow_unconditioned(builder: _TreeBuilder, law, rng, root: int, max_height=None):
    """Attach an unconditioned Galton-Watson tree below an existing vertex.

    Returns the realized height below root (0 = no offspring). Stops early on
    builder overflow. If max_height is given, growth is abandoned (returning
    max_height) as soon as the subtree exceeds it, for use in rejection loops.
    """
    frontier = [root]
    h = 0
    while frontier and not builder.overflow:
        counts = law.sample_z(rng, size=len(frontier))
        nxt = []
        for v, c in zip(frontier, np.atleast_1d(counts)):
            for j in range(int(c)):
                w = builder.add(v, j)
                if w >= 0:
                    nxt.append(w)
        if nxt:
            h += 1
            if max_height is not None and h > max_height:
                return h
        frontier = nxt
    return h


def _sample_conditioned_subtree(builder, law, rng, parent, order, strict_below: int):
    """GW tree conditioned on height < strict_below, by rejection.

    Acceptance probability is exactly 1 - q_{strict_below}.
    """
    while True:
        mark = len(builder.parents)
        root = builder.add(parent, order)
        if root < 0:
            return
        h = _grow_unconditioned(builder, law, rng, root, max_height=strict_below - 1)
        if h < strict_below or builder.overflow:
            return
        del builder.parents[mark:]
        del builder.depths[mark:]
        del builder.child_order[mark:]


class _GKTables:
    """Cached inverse-transform tables for the (xi, zeta) joint law at level m.

    P(xi = j, zeta = k) = c_{m-1} p_k (1-q_{m-1})^{j-1} (1-q_m)^{k-j} for
    1 <= j <= k; the zeta-marginal uses the closed geometric-block sum.
    """

    def __init__(self, law: OffspringLaw):
        self.law = law
        self.cache: dict[int, tuple[np.ndarray, float, float]] = {}

    def tables(self, m: int):
        if m not in self.cache:
            q = self.law.q_table(m + 1)
            a = 1.0 - q[m - 1]  # left-sibling acceptance
            b = 1.0 - q[m]  # right-sibling acceptance (a <= b)
            c_m1 = float(self.law.gap(q[m - 1]) / self.law.gap(q[m]))
            # geometric-block sum (b^k - a^k)/(b - a) = b^(k-1)(1-r^k)/(1-r),
            # r = a/b, kept stable via expm1 when b - a is tiny
            cum = []
            total = 0.0
            k = 1
            if a == 0.0:
                log_r = None  # block reduces to b^(k-1)
            elif a == b:
                log_r = 0.0
            else:
                log_r = math.log1p(-(b - a) / b)
            while total < 1.0 - 1e-12 and k < 2_000_000:
                pk = float(self.law.pmf(k))
                if log_r is None:
                    block = b ** (k - 1)
                elif log_r == 0.0:
                    block = float(k) * b ** (k - 1)
                else:
                    block = b ** (k - 1) * math.expm1(k * log_r) / math.expm1(log_r)
                total += c_m1 * pk * block
                cum.append(min(total, 1.0))
                k += 1
            self.cache[m] = (np.array(cum), a, b)
        return self.cache[m]

    def sample(self, m: int, rng):
        cum, a, b = self.tables(m)
        k = int(np.searchsorted(cum, rng.random(), side="right")) + 1
        # j | k proportional to (a/b)^{j-1}, j = 1..k
        if a == 0.0:
            return 1, k
        r = a / b
        w = r ** np.arange(k)
        w /= w.sum()
        j = int(np.searchsorted(np.cumsum(w), rng.random(), side="right")) + 1
        return min(j, k), k


def realize_leaf(
    law: OffspringLaw,
    rng,
    height_exact: int | None = None,
    cap: int = 10**7,
) -> ExplicitTree:
    """Realize one leaf as an explicit tree.

    Unconditioned mode grows a plain Galton-Watson tree (overflow-flagged at
    the size cap). Height-exact mode runs the recursive construction that
    conditions the tree to have height exactly height_exact: the distinguished
    path is extended one level at a time with (xi, zeta) drawn from the joint
    law above, left siblings carrying subtrees conditioned strictly below the
    remaining height minus one and right siblings strictly below the remaining
    height, both by rejection with exact acceptance probabilities.
    """
    builder = _TreeBuilder(cap)
    if height_exact is None:
        _grow_unconditioned(builder, law, rng, 0)
        return builder.finish()
    if height_exact < 0:
        raise ValueError("height must be nonnegative")
    gk = getattr(law, "_gk_tables", None)
    if gk is None:
        gk = _GKTables(law)
        law._gk_tables = gk
    distinguished = 0
    for m in range(height_exact, 0, -1):
        j, k = gk.sample(m, rng)
        next_dist = None
        for pos in range(1, k + 1):
            if pos == j:
                next_dist = builder.add(distinguished, pos - 1)
            elif pos < j:
                _sample_conditioned_subtree(
                    builder, law, rng, distinguished, pos - 1, strict_below=m - 1
                )
            else:
                _sample_conditioned_subtree(
                    builder, law, rng, distinguished, pos - 1, strict_below=m
                )
        if next_dist is None or next_dist < 0:
            builder.overflow = True
            break
        distinguished = next_dist
    tree = builder.finish()
    if not tree.overflow and tree.height != height_exact:
        raise AssertionError("height-exact construction produced wrong height")
    return tree


# ---------------------------------------------------------------------------
# generation-profile chains (exact leaf weights without explicit trees)
# ---------------------------------------------------------------------------


def leaf_profile_logweights(
    law: OffspringLaw,
    n_leaves: int,
    log_beta: float,
    rng,
    height_cap: int = 20_000_000,
):
    """Realize iid leaf generation profiles and conductance weights.

    For each leaf, runs the generation-size chain Z_0 = 1,
    Z_{d+1} = sum of Z_d iid offspring, and accumulates
    log W = log(sum_d Z_d * beta^d) (the per-leaf edge-conductance weight:
    the bud edge plus each child edge at depth d contributes beta^d relative
    to the bud's generation). Returns (heights, logW, capped).

    Only one vectorized offspring-sum draw is made per generation, so the
    cost is the total of the realized heights, not the tree sizes.
    """
    heights = np.zeros(n_leaves, dtype=np.int64)
    logw = np.zeros(n_leaves)  # d = 0 term: one bud, beta^0
    capped = np.zeros(n_leaves, dtype=bool)
    alive = np.arange(n_leaves)
    widths = np.ones(n_leaves, dtype=np.int64)
    d = 0
    while alive.size:
        nxt = law.sample_sum(widths[alive], rng)
        d += 1
        survive = nxt > 0
        alive = alive[survive]
        if alive.size == 0:
            break
        widths[alive] = nxt[survive]
        heights[alive] = d
        logw[alive] = np.logaddexp(
            logw[alive], np.log(nxt[survive].astype(float)) + d * log_beta
        )
        if d >= height_cap:
            capped[alive] = True
            break
    return heights, logw, capped
