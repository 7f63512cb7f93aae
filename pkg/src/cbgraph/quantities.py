"""Exact and approximate graph quantities.

Exact routines are exhaustive searches meant for desk-scale graphs; each
takes a ``cap`` on the number of vertices and raises ``SizeLimitError``
above it.  Every exact routine returns a :class:`QuantityReport` whose
certificate can be re-checked with :func:`verify_report`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, InvalidInputError, SizeLimitError
from .graph import FeedbackGraph, bits, format_set, from_mask, longest_path_mask, lowest

EXACT_CAP = 24
SMALL_CAP = 14
TINY_CAP = 10

QUANTITY_NAMES = ("alpha", "delta", "mas", "beta_M", "beta_bar_M", "beta_dom", "rho")


@dataclass(frozen=True)
class QuantityReport:
    name: str
    value: int
    certificate: tuple
    method: str = "exact"

    def format(self) -> str:
        sets = " ".join(format_set(s) for s in self.certificate)
        return f"{self.name} {self.value} {self.method} {sets}".rstrip()


def _check_cap(g: FeedbackGraph, cap: int, what: str, n: Optional[int] = None):
    n = g.K if n is None else n
    if n > cap:
        raise SizeLimitError(f"{what}: {n} vertices exceeds exact-search cap {cap}")


def log_factor(K: int) -> float:
    """The ``1 + ln K`` factor of the greedy domination bounds."""
    return 1.0 + math.log(max(K, 1))


# -- independence ------------------------------------------------------------

def mis_mask(g: FeedbackGraph, cand: int) -> int:
    """A maximum independent subset of ``cand`` (branch and bound)."""
    cm = g.conflict_masks
    best = [0, 0]  # size, mask

    def rec(cur, size, cand):
        while cand:
            # vertices of degree <= 1 inside cand can always be taken
            low_v = -1
            for v in bits(cand):
                if (cm[v] & cand).bit_count() <= 1:
                    low_v = v
                    break
            if low_v < 0:
                break
            cur |= 1 << low_v
            size += 1
            cand &= ~(cm[low_v] | 1 << low_v)
        if not cand:
            if size > best[0]:
                best[0], best[1] = size, cur
            return
        if size + cand.bit_count() <= best[0]:
            return
        v = max(bits(cand), key=lambda u: (cm[u] & cand).bit_count())
        rec(cur | 1 << v, size + 1, cand & ~(cm[v] | 1 << v))
        rec(cur, size, cand & ~(1 << v))

    rec(0, 0, cand)
    return best[1]


def independence_number_exact(g: FeedbackGraph, cap: int = EXACT_CAP) -> QuantityReport:
    _check_cap(g, cap, "independence number")
    m = mis_mask(g, g.full_mask)
    return QuantityReport("alpha", m.bit_count(), (from_mask(m),))


def approx_independent_set(g: FeedbackGraph, a, rng: np.random.Generator, restarts: Optional[int] = None) -> frozenset:
    """Large independent subset of ``a`` in polynomial time.

    Best of several random-order greedy passes, compared against a
    min-degree peeling pass; the larger wins (peeling on ties).
    """
    am = g.mask(a)
    if not am:
        return frozenset()
    cm = g.conflict_masks
    if restarts is None:
        restarts = math.ceil(math.log2(max(g.K, 1))) + 1
    verts = list(bits(am))

    best = 0
    orders = np.argsort(rng.random((restarts, len(verts))), axis=1).tolist()
    for order in orders:
        taken = 0
        for i in order:
            v = verts[i]
            if not cm[v] & taken:
                taken |= 1 << v
        if taken.bit_count() > best.bit_count():
            best = taken

    peel = 0
    rest = am
    while rest:
        v = min(bits(rest), key=lambda u: ((cm[u] & rest).bit_count(), u))
        peel |= 1 << v
        rest &= ~(cm[v] | 1 << v)
    if peel.bit_count() >= best.bit_count():
        best = peel
    return from_mask(best)


# -- domination ----------------------------------------------------------------

def greedy_dom_mask(g: FeedbackGraph, a: int) -> int:
    """Repeatedly take the uncovered vertex covering the most uncovered ones."""
    om = g.out_masks
    d = 0
    rest = a
    while rest:
        v = max(bits(rest), key=lambda u: ((om[u] & rest).bit_count(), -u))
        d |= 1 << v
        rest &= ~om[v]
    return d


def greedy_dominating_set(g: FeedbackGraph, a) -> frozenset:
    return from_mask(greedy_dom_mask(g, g.mask(a)))


def min_dom_mask(g: FeedbackGraph, s: int) -> int:
    """Smallest D within ``s`` with s ⊆ N_out(D) (branch and bound)."""
    if not s:
        return 0
    om, im = g.out_masks, g.in_masks
    best = [greedy_dom_mask(g, s)]

    def rec(d, size, rest):
        if not rest:
            if size < best[0].bit_count():
                best[0] = d
            return
        maxcov = max((om[w] & rest).bit_count() for w in bits(s))
        if size + -(-rest.bit_count() // maxcov) >= best[0].bit_count():
            return
        u = min(bits(rest), key=lambda x: ((im[x] & s).bit_count(), x))
        choices = sorted(bits(im[u] & s), key=lambda w: -(om[w] & rest).bit_count())
        for w in choices:
            rec(d | 1 << w, size + 1, rest & ~om[w])

    rec(0, 0, s)
    return best[0]


def dominating_number_exact(g: FeedbackGraph, restricted_to=None, cap: int = EXACT_CAP) -> QuantityReport:
    s = g.full_mask if restricted_to is None else g.mask(restricted_to)
    _check_cap(g, cap, "dominating number", s.bit_count())
    d = min_dom_mask(g, s)
    return QuantityReport("delta", d.bit_count(), (from_mask(d),))


@lru_cache(maxsize=64)
def _dom_table(g: FeedbackGraph) -> list:
    """δ of the induced subgraph on every vertex subset (3^K sweep)."""
    n = 1 << g.K
    table = [g.K + 1] * n
    table[0] = 0
    for b in range(1, n):
        cover = g.nout(b)
        size = b.bit_count()
        free = cover & ~b
        sub = free
        while True:
            v = b | sub
            if size < table[v]:
                table[v] = size
            if not sub:
                break
            sub = (sub - 1) & free
    return table


# -- acyclic sets ----------------------------------------------------------------

def _closes_cycle(g: FeedbackGraph, s: int, v: int) -> bool:
    """Whether adding v to the acyclic set s creates a directed cycle."""
    om = g.out_masks
    target = g.in_masks[v] & s & ~(1 << v)
    if not target:
        return False
    seen = 0
    frontier = om[v] & s & ~(1 << v)
    while frontier:
        if frontier & target:
            return True
        seen |= frontier
        nxt = 0
        for w in bits(frontier):
            nxt |= om[w]
        frontier = nxt & s & ~seen
    return False


def max_acyclic_mask(g: FeedbackGraph, mask: int) -> int:
    """Largest subset of ``mask`` inducing an acyclic subgraph."""
    if g.acyclic_mask(mask):
        return mask
    cm = g.conflict_masks
    order = sorted(bits(mask), key=lambda v: ((cm[v] & mask).bit_count(), v))
    n = len(order)
    om, im = g.out_masks, g.in_masks
    # bidirected partners: at most one of each such pair survives
    bi = [om[v] & im[v] & ~(1 << v) & mask for v in range(g.K)]

    seed = 0
    for v in order:
        if not _closes_cycle(g, seed, v):
            seed |= 1 << v
    best = [seed]

    def bound(s, i):
        rest = 0
        for v in order[i:]:
            rest |= 1 << v
        # undecided vertices whose bidirected partner is already in s are out
        blocked = 0
        for v in bits(rest):
            if bi[v] & s:
                blocked |= 1 << v
        rest &= ~blocked
        # greedy matching of bidirected pairs among the remainder
        matched = 0
        pairs = 0
        for v in bits(rest):
            if matched >> v & 1:
                continue
            w = bi[v] & rest & ~matched & ~(1 << v)
            if w:
                matched |= 1 << v | (w & -w)
                pairs += 1
        return s.bit_count() + rest.bit_count() - pairs

    def rec(s, i):
        if i == n:
            if s.bit_count() > best[0].bit_count():
                best[0] = s
            return
        if bound(s, i) <= best[0].bit_count():
            return
        v = order[i]
        if not _closes_cycle(g, s, v):
            rec(s | 1 << v, i + 1)
        rec(s, i + 1)

    rec(0, 0)
    return best[0]


def mas_number_exact(g: FeedbackGraph, cap: int = EXACT_CAP) -> QuantityReport:
    if not g.acyclic_mask(g.full_mask):
        _check_cap(g, cap, "MAS number")
    m = max_acyclic_mask(g, g.full_mask)
    return QuantityReport("mas", m.bit_count(), (from_mask(m),))


def longest_path_witness(g: FeedbackGraph) -> tuple:
    """A longest simple directed path (self-loops ignored), as a vertex tuple."""
    if g.K == 0:
        return ()
    om = g.out_masks
    frontier = {(1 << v, v): (v,) for v in range(g.K)}
    best = next(iter(frontier.values()))
    while frontier:
        nxt = {}
        for (visited, v), path in frontier.items():
            for w in bits(om[v] & ~visited):
                key = (visited | 1 << w, w)
                if key not in nxt:
                    nxt[key] = path + (w,)
        if nxt:
            best = next(iter(nxt.values()))
        frontier = nxt
    return best


def rho_exact(g: FeedbackGraph) -> QuantityReport:
    path = longest_path_witness(g)
    if len(path) != longest_path_mask(g, g.full_mask):
        raise InternalConsistencyError("longest path routes disagree")
    return QuantityReport("rho", len(path), (tuple(path),))


# -- beta_M -------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _height_table(g: FeedbackGraph) -> tuple:
    """For each height h, the largest acyclic set whose longest path has h vertices.

    A set splits into M independent sets I_1..I_M with no edge from an
    earlier set to a later one exactly when it is acyclic and its longest
    path has at most M vertices (take I_c = c-th layer of sinks).
    """
    n = 1 << g.K
    om = g.out_masks
    height = bytearray(n)  # 255 marks cyclic
    best = {}
    for s in range(1, n):
        sinks = 0
        m = s
        while m:
            low = m & -m
            v = low.bit_length() - 1
            if not (om[v] & s & ~low):
                sinks |= low
            m ^= low
        if not sinks:
            height[s] = 255
            continue
        h = height[s & ~sinks]
        if h == 255:
            height[s] = 255
            continue
        h += 1
        height[s] = h
        size = s.bit_count()
        if h not in best or size > best[h][0]:
            best[h] = (size, s)
    return tuple(sorted(best.items()))


def sink_layers(g: FeedbackGraph, s: int) -> list:
    layers = []
    while s:
        sinks = g.sinks_mask(s)
        layers.append(sinks)
        s &= ~sinks
    return layers


def beta_M_exact(g: FeedbackGraph, M: int, cap: int = SMALL_CAP) -> QuantityReport:
    """β_M with witness (I_1, ..., I_M); I_i has no edge into I_j for i < j."""
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    _check_cap(g, cap, "beta_M")
    size, s = 0, 0
    for h, (sz, mask) in _height_table(g):
        if h <= M and sz > size:
            size, s = sz, mask
    layers = sink_layers(g, s)
    layers += [0] * (M - len(layers))
    return QuantityReport("beta_M", size, tuple(from_mask(m) for m in layers))


def beta_profile(g: FeedbackGraph, cap: int = SMALL_CAP) -> list:
    """[β_1, ..., β_K]."""
    _check_cap(g, cap, "beta_M")
    table = dict(_height_table(g))
    out = []
    cur = 0
    for M in range(1, g.K + 1):
        if M in table:
            cur = max(cur, table[M][0])
        out.append(cur)
    return out


def _independent_subsets(g: FeedbackGraph, cand: int):
    """All independent subsets of ``cand``, including the empty set."""
    cm = g.conflict_masks

    def rec(cur, cand):
        if not cand:
            yield cur
            return
        v = lowest(cand)
        yield from rec(cur | 1 << v, cand & ~(cm[v] | 1 << v))
        yield from rec(cur, cand & ~(1 << v))

    yield from rec(0, cand)


def beta_M_tuple_search(g: FeedbackGraph, M: int, cap: int = 9) -> QuantityReport:
    """β_M by direct search over ordered tuples (I_1, ..., I_M).

    Exponentially slower than :func:`beta_M_exact`; kept as an independent
    check of it.
    """
    _check_cap(g, cap, "beta_M tuple search")
    memo = {}

    def f(avail, c):
        if c == 0 or not avail:
            return 0, ()
        key = (avail, c)
        if key in memo:
            return memo[key]
        if c == 1:
            m = mis_mask(g, avail)
            res = (m.bit_count(), (m,))
        else:
            res = (-1, ())
            for i in _independent_subsets(g, avail):
                val, rest = f(avail & ~g.nout(i), c - 1)
                val += i.bit_count()
                if val > res[0]:
                    res = (val, (i,) + rest)
        memo[key] = res
        return res

    val, sets = f(g.full_mask, M)
    sets = tuple(sets) + (0,) * (M - len(sets))
    return QuantityReport("beta_M", val, tuple(from_mask(m) for m in sets))


# -- beta_bar_M -------------------------------------------------------------------------

def maximal_independent_sets(g: FeedbackGraph, cand: int):
    """Bron-Kerbosch with pivoting on the conflict graph's complement."""
    cm = g.conflict_masks

    def rec(r, p, x):
        if not p and not x:
            yield r
            return
        pivot_pool = p | x
        u = max(bits(pivot_pool), key=lambda w: (p & ~cm[w] & ~(1 << w)).bit_count())
        # non-neighbours in the complement = vertices in conflict with u, plus u
        for v in bits(p & (cm[u] | 1 << u)):
            nb = ~cm[v] & ~(1 << v)
            yield from rec(r | 1 << v, p & nb, x & nb)
            p &= ~(1 << v)
            x |= 1 << v

    yield from rec(0, cand, 0)


def beta_bar_M_exact(g: FeedbackGraph, M: int, cap: int = SMALL_CAP) -> QuantityReport:
    """β̄_M: most vertices covered by M pairwise disjoint independent sets."""
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    _check_cap(g, cap, "beta_bar_M")
    return _beta_bar(g, g.full_mask, M)


def _beta_bar(g: FeedbackGraph, mask: int, M: int) -> QuantityReport:
    memo = {}

    # WLOG the first set is maximal inside what is left: any vertex it could
    # still absorb can be moved out of a later set without loss.
    def f(avail, c):
        if c == 0 or not avail:
            return 0, ()
        if c == 1:
            m = mis_mask(g, avail)
            return m.bit_count(), (m,)
        key = (avail, c)
        if key in memo:
            return memo[key]
        res = (-1, ())
        for i in maximal_independent_sets(g, avail):
            val, rest = f(avail & ~i, c - 1)
            val += i.bit_count()
            if val > res[0]:
                res = (val, (i,) + rest)
                if val == avail.bit_count():
                    break
        memo[key] = res
        return res

    val, sets = f(mask, M)
    sets = tuple(sets) + (0,) * (M - len(sets))
    return QuantityReport("beta_bar_M", val, tuple(from_mask(m) for m in sets))


# -- beta_dom -------------------------------------------------------------------------

def beta_dom_exact(g: FeedbackGraph, M: int, cap: int = TINY_CAP, mas_cap: int = EXACT_CAP) -> QuantityReport:
    """β_dom(G, M) with certificate (V_1..V_M, B_1..B_M).

    The MAS number bounds β_dom from above, and disjoint independent sets
    inside a maximum acyclic set give a feasible certificate from below.
    When the two meet no further search is needed, so the vertex cap only
    applies to the exhaustive fallback.
    """
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    if not g.acyclic_mask(g.full_mask):
        _check_cap(g, mas_cap, "beta_dom upper bound")
    mas = max_acyclic_mask(g, g.full_mask)
    upper = mas.bit_count()
    lower = _beta_bar(g, mas, M)
    if lower.value == upper:
        cert = tuple(lower.certificate) * 2
        return QuantityReport("beta_dom", upper, cert)
    _check_cap(g, cap, "beta_dom")
    val, vs, bs = _beta_dom_search(g, M, upper)
    vs = list(vs) + [0] * (M - len(vs))
    bs = list(bs) + [0] * (M - len(bs))
    return QuantityReport("beta_dom", val, tuple(from_mask(m) for m in vs + bs))


def _beta_dom_search(g: FeedbackGraph, M: int, upper: int):
    K = g.K
    r = log_factor(K)
    dom = _dom_table(g)
    n = 1 << K
    # inclusion-minimal valid V for each acyclic B, indexed by min(V)
    by_min = {}
    for b in range(1, n):
        if not g.acyclic_mask(b):
            continue
        size = b.bit_count()
        free = g.nout(b) & ~b
        valid = []
        sub = free
        while True:
            v = b | sub
            if size <= dom[v] * r + 1e-9:
                valid.append(v)
            if not sub:
                break
            sub = (sub - 1) & free
        valid.sort(key=lambda m: m.bit_count())
        minimal = []
        for v in valid:
            if not any(w & ~v == 0 for w in minimal):
                minimal.append(v)
        for v in minimal:
            by_min.setdefault(lowest(v), []).append((size, v, b))
    for lst in by_min.values():
        lst.sort(key=lambda t: -t[0])
    max_block = max((lst[0][0] for lst in by_min.values()), default=0)

    best = [0, (), ()]

    def rec(undecided, union_b, blocks_left, total, vs, bs):
        if total > best[0]:
            best[0], best[1], best[2] = total, vs, bs
        if best[0] >= upper or not undecided or not blocks_left:
            return
        if total + min(undecided.bit_count(), blocks_left * max_block) <= best[0]:
            return
        x = lowest(undecided)
        for size, v, b in by_min.get(x, ()):
            if v & ~undecided:
                continue
            if total + size + min((undecided & ~v).bit_count(), (blocks_left - 1) * max_block) <= best[0]:
                continue
            nb = union_b | b
            if not g.acyclic_mask(nb):
                continue
            rec(undecided & ~v, nb, blocks_left - 1, total + size, vs + (v,), bs + (b,))
            if best[0] >= upper:
                return
        rec(undecided & ~(1 << x), union_b, blocks_left, total, vs, bs)

    rec(g.full_mask, 0, M, 0, (), ())
    return best[0], best[1], best[2]


def verify_dom_certificate(g: FeedbackGraph, vs, bs) -> list:
    """Problems with a (V_c, B_c) certificate; empty list when valid."""
    problems = []
    r = log_factor(g.K)
    seen = 0
    union_b = 0
    for c, (v, b) in enumerate(zip(vs, bs)):
        vm, bm = g.mask(v), g.mask(b)
        if vm & seen:
            problems.append(f"V_{c + 1} overlaps an earlier V")
        seen |= vm
        if bm & ~vm:
            problems.append(f"B_{c + 1} not inside V_{c + 1}")
        if vm & ~g.nout(bm):
            problems.append(f"B_{c + 1} does not dominate V_{c + 1}")
        d = min_dom_mask(g, vm).bit_count()
        if bm.bit_count() > d * r + 1e-9:
            problems.append(f"|B_{c + 1}|={bm.bit_count()} exceeds δ(V)(1+ln K)={d * r:.3f}")
        union_b |= bm
    if not g.acyclic_mask(union_b):
        problems.append("union of B_c is cyclic")
    return problems


# -- report verification ---------------------------------------------------------------

def verify_report(g: FeedbackGraph, rep: QuantityReport) -> bool:
    """Re-check that a certificate satisfies its constraints and attains the value."""
    cert = rep.certificate
    if rep.name == "alpha":
        return g.independent_mask(g.mask(cert[0])) and len(cert[0]) == rep.value
    if rep.name == "delta":
        return len(cert[0]) == rep.value
    if rep.name == "mas":
        return g.acyclic_mask(g.mask(cert[0])) and len(cert[0]) == rep.value
    if rep.name == "rho":
        path = cert[0]
        ok = len(set(path)) == len(path) == rep.value
        return ok and all(g.has_edge(u, v) for u, v in zip(path, path[1:]))
    if rep.name in ("beta_M", "beta_bar_M"):
        masks = [g.mask(s) for s in cert]
        if sum(m.bit_count() for m in masks) != rep.value:
            return False
        if not all(g.independent_mask(m) for m in masks):
            return False
        for i, a in enumerate(masks):
            for j, b in enumerate(masks):
                if i != j and a & b:
                    return False
                if rep.name == "beta_M" and i < j and g.nout(a) & b:
                    return False
        return True
    if rep.name == "beta_dom":
        half = len(cert) // 2
        vs, bs = cert[:half], cert[half:]
        return not verify_dom_certificate(g, vs, bs) and sum(len(b) for b in bs) == rep.value
    raise InvalidInputError(f"unknown quantity {rep.name!r}")


def all_quantities(g: FeedbackGraph, M: int, cap: int = EXACT_CAP) -> list:
    """Every quantity for the CLI, skipping those whose search caps are exceeded."""
    out = []
    jobs = [
        lambda: independence_number_exact(g, cap=cap),
        lambda: dominating_number_exact(g, cap=cap),
        lambda: mas_number_exact(g, cap=cap),
        lambda: beta_M_exact(g, M, cap=min(cap, SMALL_CAP)),
        lambda: beta_bar_M_exact(g, M, cap=min(cap, SMALL_CAP)),
        lambda: beta_dom_exact(g, M, cap=min(cap, TINY_CAP), mas_cap=cap),
        lambda: rho_exact(g),
    ]
    for job in jobs:
        try:
            out.append(job())
        except SizeLimitError:
            continue
    return out
