"""Directed feedback graphs over actions 0..K-1.

Vertex sets are handled in two forms: ``frozenset[int]`` at the public
surface and Python ``int`` bitmasks inside the search code (bit ``v`` set
means vertex ``v`` is a member).  Every vertex carries a self-loop; the
self-loop is part of the observation structure but never counts as a
cycle or a path step.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, PreconditionError

VertexSet = frozenset


# -- bitmask helpers ---------------------------------------------------------

@lru_cache(maxsize=1 << 16)
def bits(mask: int) -> tuple:
    """Set bit positions of ``mask`` in increasing order."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def from_mask(mask: int) -> frozenset:
    return frozenset(bits(mask))


def lowest(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


@dataclass(frozen=True)
class FeedbackGraph:
    """Immutable directed graph on ``K`` vertices with all self-loops.

    ``out_masks[v]`` is the bitmask of ``N_out(v)``, which always includes
    ``v``.  ``labels`` optionally attaches a (row, column) pair to every
    vertex; the grid constructor fills it in.
    """

    K: int
    out_masks: tuple
    labels: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.K < 0 or len(self.out_masks) != self.K:
            raise InvalidInputError("out_masks must have exactly K entries")
        full = (1 << self.K) - 1
        fixed = tuple((m & full) | (1 << v) for v, m in enumerate(self.out_masks))
        if any(m & ~full for m in self.out_masks):
            raise InvalidInputError("edge endpoint out of range")
        object.__setattr__(self, "out_masks", fixed)
        if self.labels is not None and len(self.labels) != self.K:
            raise InvalidInputError("labels must have exactly K entries")

    @classmethod
    def from_edges(cls, K: int, edges: Iterable[tuple], labels=None) -> "FeedbackGraph":
        masks = [0] * K
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < K and 0 <= v < K):
                raise InvalidInputError(f"edge ({u}, {v}) out of range for K={K}")
            masks[u] |= 1 << v
        return cls(K, tuple(masks), labels=labels)

    @classmethod
    def from_adjacency(cls, adj) -> "FeedbackGraph":
        adj = np.asarray(adj, dtype=bool)
        K = adj.shape[0]
        return cls.from_edges(K, zip(*np.nonzero(adj)))

    @property
    def full_mask(self) -> int:
        return (1 << self.K) - 1

    @cached_property
    def in_masks(self) -> tuple:
        masks = [0] * self.K
        for u, m in enumerate(self.out_masks):
            for v in bits(m):
                masks[v] |= 1 << u
        return tuple(masks)

    @cached_property
    def conflict_masks(self) -> tuple:
        """Undirected adjacency without self-loops: u ~ v iff u->v or v->u."""
        return tuple(
            (self.out_masks[v] | self.in_masks[v]) & ~(1 << v) for v in range(self.K)
        )

    @cached_property
    def edges(self) -> frozenset:
        return frozenset((u, v) for u in range(self.K) for v in bits(self.out_masks[u]))

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.out_masks[u] >> v & 1)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.K, self.K), dtype=bool)
        for u, v in self.edges:
            a[u, v] = True
        return a

    def mask(self, s: Iterable[int]) -> int:
        """Bitmask of a vertex collection, with range checking."""
        if isinstance(s, int):
            raise InvalidInputError("expected an iterable of vertices, got int")
        m = 0
        for v in s:
            if not 0 <= v < self.K:
                raise InvalidInputError(f"vertex {v} out of range for K={self.K}")
            m |= 1 << v
        return m

    # -- mask-level primitives, used by every search ------------------------

    def nout(self, mask: int) -> int:
        out = 0
        om = self.out_masks
        while mask:
            low = mask & -mask
            out |= om[low.bit_length() - 1]
            mask ^= low
        return out

    def independent_mask(self, mask: int) -> bool:
        cm = self.conflict_masks
        return all(not (cm[v] & mask) for v in bits(mask))

    def acyclic_mask(self, mask: int) -> bool:
        rest = mask
        while rest:
            srcs = self.sources_mask(rest)
            if not srcs:
                return False
            rest &= ~srcs
        return True

    def sources_mask(self, mask: int) -> int:
        """Vertices of ``mask`` with no in-edge from another member."""
        im = self.in_masks
        out = 0
        for v in bits(mask):
            if not (im[v] & mask & ~(1 << v)):
                out |= 1 << v
        return out

    def sinks_mask(self, mask: int) -> int:
        om = self.out_masks
        out = 0
        for v in bits(mask):
            if not (om[v] & mask & ~(1 << v)):
                out |= 1 << v
        return out

    def induced_outdegree(self, v: int, mask: int) -> int:
        """Out-degree of ``v`` inside ``mask``, self-loop excluded."""
        return (self.out_masks[v] & mask & ~(1 << v)).bit_count()

    def induced(self, s: Iterable[int]) -> "FeedbackGraph":
        """Subgraph induced by ``s``, relabelled 0..|s|-1 in increasing order."""
        verts = sorted(set(s))
        index = {v: i for i, v in enumerate(verts)}
        edges = [(index[u], index[v]) for u in verts for v in bits(self.out_masks[u]) if v in index]
        labels = tuple(self.labels[v] for v in verts) if self.labels else None
        return FeedbackGraph.from_edges(len(verts), edges, labels=labels)

    def __repr__(self):
        nontrivial = len(self.edges) - self.K
        return f"FeedbackGraph(K={self.K}, edges={nontrivial})"


# -- public set operations ---------------------------------------------------

def out_neighbors(g: FeedbackGraph, s: Iterable[int]) -> frozenset:
    return from_mask(g.nout(g.mask(s)))


def is_independent(g: FeedbackGraph, s: Iterable[int]) -> bool:
    return g.independent_mask(g.mask(s))


def dominates(g: FeedbackGraph, d: Iterable[int], a: Iterable[int]) -> bool:
    am = g.mask(a)
    return am & ~g.nout(g.mask(d)) == 0


def is_acyclic_subset(g: FeedbackGraph, s: Iterable[int]) -> bool:
    return g.acyclic_mask(g.mask(s))


def peel_layers_mask(g: FeedbackGraph, mask: int) -> list:
    layers = []
    rest = mask
    while rest:
        srcs = g.sources_mask(rest)
        if not srcs:
            raise PreconditionError("vertex set induces a directed cycle")
        layers.append(srcs)
        rest &= ~srcs
    return layers


def peel_indegree_zero_layers(g: FeedbackGraph, s: Iterable[int]) -> list:
    """Split an acyclic set into successive layers of in-degree-zero vertices."""
    return [from_mask(m) for m in peel_layers_mask(g, g.mask(s))]


def longest_path_mask(g: FeedbackGraph, mask: int) -> int:
    """Vertices on a longest simple directed path inside ``mask``."""
    if not mask:
        return 0
    if g.acyclic_mask(mask):
        # height by repeatedly stripping sinks
        height = 0
        rest = mask
        while rest:
            rest &= ~g.sinks_mask(rest)
            height += 1
        return height
    # exhaustive over (visited set, endpoint) pairs, grown one vertex at a time
    om = g.out_masks
    frontier = {(1 << v, v) for v in bits(mask)}
    best = 1
    while frontier:
        nxt = set()
        for visited, v in frontier:
            for w in bits(om[v] & mask & ~visited):
                nxt.add((visited | 1 << w, w))
        if nxt:
            best += 1
        frontier = nxt
    return best


def longest_path_length(g: FeedbackGraph) -> int:
    return longest_path_mask(g, g.full_mask)


# -- generators ----------------------------------------------------------------

def complete(K: int) -> FeedbackGraph:
    return FeedbackGraph(K, tuple([(1 << K) - 1] * K))


def edgeless(K: int) -> FeedbackGraph:
    return FeedbackGraph(K, tuple([0] * K))


def chain(K: int, closed: bool = True) -> FeedbackGraph:
    """Path 0->1->...->K-1, transitively closed by default."""
    if closed:
        return FeedbackGraph.from_edges(K, itertools.combinations(range(K), 2))
    return FeedbackGraph.from_edges(K, [(i, i + 1) for i in range(K - 1)])


def star(K: int) -> FeedbackGraph:
    """Vertex 0 points to every other vertex."""
    return FeedbackGraph.from_edges(K, [(0, v) for v in range(1, K)])


def cycle(K: int, undirected: bool = True) -> FeedbackGraph:
    edges = [(i, (i + 1) % K) for i in range(K)]
    if undirected:
        edges += [(v, u) for u, v in edges]
    return FeedbackGraph.from_edges(K, edges)


def symmetrize(g: FeedbackGraph) -> FeedbackGraph:
    return FeedbackGraph(g.K, tuple(o | i for o, i in zip(g.out_masks, g.in_masks)), labels=g.labels)


def transitive_closure(g: FeedbackGraph) -> FeedbackGraph:
    reach = list(g.out_masks)
    for k in range(g.K):
        for u in range(g.K):
            if reach[u] >> k & 1:
                reach[u] |= reach[k]
    return FeedbackGraph(g.K, tuple(reach), labels=g.labels)


def disjoint_union(*graphs: FeedbackGraph) -> FeedbackGraph:
    masks = []
    offset = 0
    for g in graphs:
        masks.extend(m << offset for m in g.out_masks)
        offset += g.K
    return FeedbackGraph(offset, tuple(masks))


def erdos_renyi(K: int, p: float, rng: np.random.Generator) -> FeedbackGraph:
    """Each ordered pair u != v becomes an edge independently with prob. p."""
    adj = rng.random((K, K)) < p
    np.fill_diagonal(adj, True)
    return FeedbackGraph.from_adjacency(adj)


def random_undirected(K: int, p: float, rng: np.random.Generator) -> FeedbackGraph:
    upper = np.triu(rng.random((K, K)) < p, 1)
    adj = upper | upper.T
    np.fill_diagonal(adj, True)
    return FeedbackGraph.from_adjacency(adj)


def random_dag(K: int, p: float, rng: np.random.Generator) -> FeedbackGraph:
    """Forward edges of a random vertex order, each kept with prob. p."""
    order = rng.permutation(K)
    upper = np.triu(rng.random((K, K)) < p, 1)
    adj = np.zeros((K, K), dtype=bool)
    adj[np.ix_(order, order)] = upper
    np.fill_diagonal(adj, True)
    return FeedbackGraph.from_adjacency(adj)


def random_transitive_closure(K: int, p: float, rng: np.random.Generator) -> FeedbackGraph:
    return transitive_closure(random_dag(K, p, rng))


def random_tournament(K: int, rng: np.random.Generator) -> FeedbackGraph:
    """Orient every pair independently at random; no bidirected pairs."""
    flip = rng.random((K, K)) < 0.5
    upper = np.triu(np.ones((K, K), dtype=bool), 1)
    adj = (upper & flip) | (upper & ~flip).T
    np.fill_diagonal(adj, True)
    return FeedbackGraph.from_adjacency(adj)


def grid(k: int, M: int) -> FeedbackGraph:
    """Acyclic k x M grid with edges (i,j)->(i',j') iff i<i', j!=j' or i=i', j<j'.

    Vertex ``(i-1)*M + (j-1)`` carries label ``(i, j)`` with 1-indexed row i
    and column j.
    """
    labels = tuple((i, j) for i in range(1, k + 1) for j in range(1, M + 1))
    edges = []
    for u, (i, j) in enumerate(labels):
        for v, (i2, j2) in enumerate(labels):
            if (i < i2 and j != j2) or (i == i2 and j < j2):
                edges.append((u, v))
    return FeedbackGraph.from_edges(k * M, edges, labels=labels)


def grid_vertex(k: int, M: int, i: int, j: int) -> int:
    if not (1 <= i <= k and 1 <= j <= M):
        raise InvalidInputError(f"({i}, {j}) outside {k}x{M} grid")
    return (i - 1) * M + (j - 1)


# -- text format ---------------------------------------------------------------

def parse_graph(text: str) -> FeedbackGraph:
    """Parse the line format: ``K`` then one ``u v`` pair per edge.

    Blank lines and ``#`` comments are skipped.  A ``# grid k M`` comment
    restores grid labels when it matches the parsed graph.
    """
    K = None
    edges = []
    grid_hint = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] == "grid":
                grid_hint = (int(parts[1]), int(parts[2]))
            continue
        parts = line.split()
        try:
            nums = [int(x) for x in parts]
        except ValueError as exc:
            raise InvalidInputError(f"line {lineno}: not integers: {raw!r}") from exc
        if K is None:
            if len(nums) != 1 or nums[0] < 0:
                raise InvalidInputError(f"line {lineno}: expected vertex count")
            K = nums[0]
        else:
            if len(nums) != 2:
                raise InvalidInputError(f"line {lineno}: expected 'u v'")
            edges.append((nums[0], nums[1]))
    if K is None:
        raise InvalidInputError("empty graph file")
    g = FeedbackGraph.from_edges(K, edges)
    if grid_hint is not None:
        gg = grid(*grid_hint)
        if gg.K == g.K and gg.edges == g.edges:
            g = gg
    return g


def format_graph(g: FeedbackGraph) -> str:
    lines = []
    if g.labels is not None:
        k = max(i for i, _ in g.labels)
        M = max(j for _, j in g.labels)
        if g.K == k * M and grid(k, M).edges == g.edges:
            lines.append(f"# grid {k} {M}")
    lines.append(str(g.K))
    for u, v in sorted(g.edges):
        if u != v:
            lines.append(f"{u} {v}")
    return "\n".join(lines) + "\n"


def read_graph(path) -> FeedbackGraph:
    return parse_graph(Path(path).read_text())


def write_graph(g: FeedbackGraph, path) -> None:
    Path(path).write_text(format_graph(g))


def format_set(s: Iterable[int]) -> str:
    return "[" + ", ".join(str(v) for v in sorted(s)) + "]"


def parse_set(text: str) -> frozenset:
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise InvalidInputError(f"expected bracketed list, got {text!r}")
    inner = body[1:-1].replace(",", " ").split()
    return frozenset(int(x) for x in inner)


def as_sets(masks: Sequence[int]) -> list:
    return [from_mask(m) for m in masks]
