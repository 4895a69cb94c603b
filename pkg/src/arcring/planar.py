"""Crossingless matchings with platforms, flat tangles, gluing and circle types.

Conventions
-----------
A matching of 2n points lives on a line with points numbered 1..2n left to
right.  When a platform size k is given, the left platform covers points
1..n-k, the right platform covers points 2n-k+1..2n, and the middle n points
are "free".  A matching is admissible when no arc joins two points of the
same platform.

Gluing W(c) T b closes the picture as follows: the flat tangle's bottom
endpoints attach to the free points of the bottom matching b, its top
endpoints to the free points of the (reflected) top matching c.  Platform
points are closed by arcs running alongside the platforms: bottom and top
platform points on the same side pair up innermost first; when the two sides
of the tangle have unequal arities, the leftover outermost platform points of
the longer side are joined left-to-right around the outside.  A circle
crossing a one-sided closure arc picks up one mark on that platform; a
crossing of a left-to-right closure arc adds one mark on each platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .errors import ArityMismatch, ParityMismatch, PlatformMismatch


class CircleType(Enum):
    TYPE_I = "I"
    TYPE_II = "II"
    TYPE_III = "III"


def _is_noncrossing(pairs) -> bool:
    for (a, b), (c, d) in itertools.combinations(pairs, 2):
        if a < c < b < d or c < a < d < b:
            return False
    return True


@dataclass(frozen=True)
class PlatformMatching:
    """Crossingless matching of 2n points, optionally with platforms of size (n-k, k)."""

    n: int
    k: int | None
    pairs: tuple

    def __post_init__(self):
        pts = sorted(p for pair in self.pairs for p in pair)
        if pts != list(range(1, 2 * self.n + 1)):
            raise ValueError("pairs must form a perfect matching of 1..2n")
        norm = tuple(sorted((min(p), max(p)) for p in self.pairs))
        object.__setattr__(self, "pairs", norm)
        if not _is_noncrossing(norm):
            raise ValueError("matching has a crossing")
        if self.k is not None:
            if not 0 <= self.k <= self.n:
                raise ValueError("k out of range")
            left, right = self.left_platform, self.right_platform
            for a, b in norm:
                if a in left and b in left:
                    raise ValueError("arc inside the left platform")
                if a in right and b in right:
                    raise ValueError("arc inside the right platform")

    @property
    def left_platform(self) -> range:
        if self.k is None:
            return range(1, 1)
        return range(1, self.n - self.k + 1)

    @property
    def right_platform(self) -> range:
        if self.k is None:
            return range(1, 1)
        return range(2 * self.n - self.k + 1, 2 * self.n + 1)

    @property
    def free_points(self) -> range:
        if self.k is None:
            return range(1, 2 * self.n + 1)
        return range(self.n - self.k + 1, 2 * self.n - self.k + 1)

    def partner(self, p: int) -> int:
        for a, b in self.pairs:
            if a == p:
                return b
            if b == p:
                return a
        raise KeyError(p)

    def sort_key(self):
        return self.pairs

    def __str__(self):
        plat = "" if self.k is None else f"^{{{self.n - self.k},{self.k}}}"
        return f"B{plat}{list(self.pairs)}"


def _catalan_matchings(points):
    """All non-crossing perfect matchings of an ordered point list."""
    if not points:
        yield ()
        return
    first = points[0]
    for idx in range(1, len(points), 2):
        inside = points[1:idx]
        outside = points[idx + 1 :]
        for m_in in _catalan_matchings(inside):
            for m_out in _catalan_matchings(outside):
                yield ((first, points[idx]),) + m_in + m_out


@lru_cache(maxsize=None)
def enumerate_matchings(n: int, k: int | None = None) -> tuple:
    """All matchings of B^n (k omitted) or B^{n-k,k}, in lexicographic order."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if k is not None and not 0 <= k <= n:
        raise ValueError("k out of range")
    out = []
    for pairs in _catalan_matchings(tuple(range(1, 2 * n + 1))):
        try:
            out.append(PlatformMatching(n, k, pairs))
        except ValueError:
            continue
    out.sort(key=lambda m: m.sort_key())
    return tuple(out)


def reflect(a: PlatformMatching) -> PlatformMatching:
    """Reflection W(a) about the horizontal axis.

    The arc data of the mirror image is the same involution; the flip between
    upper and lower half-plane is implicit in how gluing consumes it.
    """
    return a


def vertical_reflect(a: PlatformMatching) -> PlatformMatching:
    """Reflect about a vertical axis: B^{n-k,k} -> B^{k,n-k}."""
    n2 = 2 * a.n
    pairs = tuple((n2 + 1 - b, n2 + 1 - a_) for a_, b in a.pairs)
    new_k = None if a.k is None else a.n - a.k
    return PlatformMatching(a.n, new_k, pairs)


# ---------------------------------------------------------------------------
# Flat tangles


@dataclass(frozen=True)
class FlatTangle:
    """Isotopy class of a crossingless (m, n)-tangle.

    Boundary points are tagged ('b', i) for bottom 1..n and ('t', j) for top
    1..m, left to right.  Only the boundary matching and the number of free
    circles are recorded.
    """

    m: int
    n: int
    pairs: tuple
    free_circles: int = 0

    def __post_init__(self):
        if (self.m + self.n) % 2:
            raise ParityMismatch("m + n must be even")
        pts = sorted(p for pair in self.pairs for p in pair)
        expect = sorted([("b", i) for i in range(1, self.n + 1)] + [("t", j) for j in range(1, self.m + 1)])
        if pts != expect:
            raise ValueError("pairs must match all boundary points exactly once")
        norm = tuple(sorted(tuple(sorted(p)) for p in self.pairs))
        object.__setattr__(self, "pairs", norm)
        if not _is_noncrossing([tuple(sorted((self._circ(p), self._circ(q)))) for p, q in norm]):
            raise ValueError("tangle matching is not planar in the strip")

    def _circ(self, pt) -> int:
        side, i = pt
        return i if side == "b" else self.n + (self.m - i + 1)

    def partner(self, pt):
        for p, q in self.pairs:
            if p == pt:
                return q
            if q == pt:
                return p
        raise KeyError(pt)

    def __str__(self):
        return f"FlatTangle({self.m}<-{self.n}, {list(self.pairs)}, circles={self.free_circles})"


def identity_tangle(n: int) -> FlatTangle:
    return FlatTangle(n, n, tuple((("b", i), ("t", i)) for i in range(1, n + 1)))


def cup_tangle(position: int = 1, strands: int = 0) -> FlatTangle:
    """The (strands+2, strands)-tangle with a single cup at `position`."""
    pairs = [(("t", position), ("t", position + 1))]
    for i in range(1, strands + 1):
        j = i if i < position else i + 2
        pairs.append((("b", i), ("t", j)))
    return FlatTangle(strands + 2, strands, tuple(pairs))


def cap_tangle(position: int = 1, strands: int = 2) -> FlatTangle:
    """The (strands-2, strands)-tangle with a single cap at `position`."""
    pairs = [(("b", position), ("b", position + 1))]
    for i in range(1, strands + 1):
        if i == position or i == position + 1:
            continue
        j = i if i < position else i - 2
        pairs.append((("b", i), ("t", j)))
    return FlatTangle(strands - 2, strands, tuple(pairs))


def compose_flat(t2: FlatTangle, t1: FlatTangle) -> FlatTangle:
    """Concatenation t2 . t1 (t1 at the bottom); closed loops become free circles."""
    if t2.n != t1.m:
        raise ArityMismatch(f"middle arities differ: {t2.n} vs {t1.m}")
    s = t2.n
    link = {}
    for p, q in t1.pairs:
        link[("lo", p)] = ("lo", q)
        link[("lo", q)] = ("lo", p)
    for p, q in t2.pairs:
        link[("hi", p)] = ("hi", q)
        link[("hi", q)] = ("hi", p)

    def hop(node):
        # Jump across the glued middle boundary.
        layer, (side, i) = node
        if layer == "lo" and side == "t":
            return ("hi", ("b", i))
        if layer == "hi" and side == "b":
            return ("lo", ("t", i))
        return None

    def strip(node):
        layer, (side, i) = node
        return ("b", i) if layer == "lo" else ("t", i)

    visited = set()
    pairs = []
    ends = [("lo", ("b", i)) for i in range(1, t1.n + 1)] + [("hi", ("t", j)) for j in range(1, t2.m + 1)]
    for start in ends:
        if start in visited:
            continue
        visited.add(start)
        cur = start
        while True:
            cur = link[cur]
            visited.add(cur)
            nxt = hop(cur)
            if nxt is None:
                break
            cur = nxt
            visited.add(cur)
        pairs.append((strip(start), strip(cur)))
    loops = 0
    for j in range(1, s + 1):
        node = ("lo", ("t", j))
        if node in visited:
            continue
        loops += 1
        cur = node
        while cur not in visited:
            visited.add(cur)
            nxt = link[cur]
            visited.add(nxt)
            cur = hop(nxt)
    return FlatTangle(t2.m, t1.n, tuple(pairs), t1.free_circles + t2.free_circles + loops)


# ---------------------------------------------------------------------------
# Gluing: closed diagrams with marked circles


@dataclass(frozen=True)
class Circle:
    """One circle of a closed diagram: visited boundary points and platform marks."""

    bottom_points: frozenset
    top_points: frozenset
    left_marks: int
    right_marks: int
    free_id: tuple | None = None

    @property
    def circle_type(self) -> CircleType:
        if self.left_marks == 0 and self.right_marks == 0:
            return CircleType.TYPE_I
        if self.left_marks <= 1 and self.right_marks <= 1:
            return CircleType.TYPE_II
        return CircleType.TYPE_III


def classify_circle(c: Circle) -> CircleType:
    return c.circle_type


@dataclass(frozen=True)
class ClosedDiagram:
    """Closure of W(top) T bottom: circles in canonical order.

    Circles are ordered by their minimal visited boundary point (bottom points
    1..2n first, then top points); circles with no boundary point (free
    circles of the tangle) come last in tangle-creation order.
    """

    circles: tuple

    @property
    def has_type_iii(self) -> bool:
        return any(c.circle_type is CircleType.TYPE_III for c in self.circles)

    def type_counts(self):
        out = {CircleType.TYPE_I: 0, CircleType.TYPE_II: 0, CircleType.TYPE_III: 0}
        for c in self.circles:
            out[c.circle_type] += 1
        return out


def _circle_sort_key(circle: Circle, n_bottom_points: int):
    if circle.bottom_points or circle.top_points:
        vals = list(circle.bottom_points) + [n_bottom_points + j for j in circle.top_points]
        return (0, min(vals))
    return (1, circle.free_id)


def platform_closure_arcs(bottom: PlatformMatching, top: PlatformMatching):
    """Closure arcs joining the two platform lines.

    Verticals pair bottom and top platform points innermost first on each
    side; the leftover outermost points of the longer line are joined left
    platform to right platform, nested.  Returns (left verticals as
    (bottom, top) pairs, right verticals, side of the cross arcs 'b'|'t',
    cross arc point pairs).
    """
    bl = list(bottom.left_platform)          # outermost (1) .. innermost (n-k)
    tl = list(top.left_platform)
    br = list(bottom.right_platform)         # innermost (2n-k+1) .. outermost (2n)
    tr = list(top.right_platform)
    vl = min(len(bl), len(tl))
    vr = min(len(br), len(tr))
    verts_l = [(bl[-1 - idx], tl[-1 - idx]) for idx in range(vl)]
    verts_r = [(br[idx], tr[idx]) for idx in range(vr)]
    lo_l = bl[: len(bl) - vl] or tl[: len(tl) - vl]
    lo_r = br[vr:] or tr[vr:]
    side = "b" if (len(bl) > vl or len(br) > vr) else "t"
    assert len(lo_l) == len(lo_r)
    crosses = [(lo_l[idx], lo_r[-1 - idx]) for idx in range(len(lo_l))]
    return verts_l, verts_r, side, crosses


class GlueFrame:
    """Edge-level model of the closure of W(top) T bottom.

    Nodes are ('b', i), ('t', j) and ('f', fid, 0/1) for free-circle dummies.
    Each edge is (node, node, (left_mark, right_mark)) and carries a stable id.
    """

    def __init__(self, top: PlatformMatching, tangle: FlatTangle | None, bottom: PlatformMatching):
        if tangle is None:
            n_free = len(bottom.free_points)
            tangle = identity_tangle(n_free)
        self.top = top
        self.tangle = tangle
        self.bottom = bottom
        m, n = tangle.m, tangle.n
        if len(bottom.free_points) != n:
            raise ArityMismatch("bottom matching free points do not match tangle bottom arity")
        if len(top.free_points) != m:
            raise ArityMismatch("top matching free points do not match tangle top arity")
        if (bottom.k is None) != (top.k is None):
            raise PlatformMismatch("mixed platform and platform-free matchings")
        if bottom.k is not None:
            l2 = m - n
            if l2 % 2:
                raise ParityMismatch("m - n must be even")
            if top.k != bottom.k + l2 // 2:
                raise PlatformMismatch(
                    f"top platform size must be k+l = {bottom.k + l2 // 2}, got {top.k}"
                )
        self.edges = {}
        self._build()

    def _add(self, eid, u, v, marks=(0, 0)):
        assert eid not in self.edges
        self.edges[eid] = (u, v, marks)

    def _build(self):
        bottom, top, tangle = self.bottom, self.top, self.tangle
        bfree = list(bottom.free_points)
        tfree = list(top.free_points)
        for a, b in bottom.pairs:
            self._add(("bot", (a, b)), ("b", a), ("b", b))
        for a, b in top.pairs:
            self._add(("top", (a, b)), ("t", a), ("t", b))
        for p, q in tangle.pairs:
            self._add(("strand", (p, q)), self._embed(p, bfree, tfree), self._embed(q, bfree, tfree))
        for fid in range(tangle.free_circles):
            self._add(("loop", fid, 0), ("f", fid, 0), ("f", fid, 1))
            self._add(("loop", fid, 1), ("f", fid, 0), ("f", fid, 1))
        # Platform closure arcs.
        verts_l, verts_r, cross_side, crosses = platform_closure_arcs(bottom, top)
        for idx, (bp, tp) in enumerate(verts_l):
            self._add(("vert", "L", idx), ("b", bp), ("t", tp), (1, 0))
        for idx, (bp, tp) in enumerate(verts_r):
            self._add(("vert", "R", idx), ("b", bp), ("t", tp), (0, 1))
        for idx, (p1, p2) in enumerate(crosses):
            self._add(("cross", cross_side, idx), (cross_side, p1), (cross_side, p2), (1, 1))

    def _embed(self, pt, bfree, tfree):
        side, i = pt
        if side == "b":
            return ("b", bfree[i - 1])
        return ("t", tfree[i - 1])

    def components(self):
        """Connected components as frozensets of nodes, each with its mark totals."""
        adj = {}
        for eid, (u, v, _) in self.edges.items():
            adj.setdefault(u, []).append((eid, v))
            adj.setdefault(v, []).append((eid, u))
        seen = set()
        comps = []
        for node in sorted(adj):
            if node in seen:
                continue
            stack = [node]
            nodes = set()
            eids = set()
            while stack:
                cur = stack.pop()
                if cur in nodes:
                    continue
                nodes.add(cur)
                for eid, other in adj[cur]:
                    eids.add(eid)
                    if other not in nodes:
                        stack.append(other)
            seen |= nodes
            comps.append((frozenset(nodes), frozenset(eids)))
        return comps

    def diagram(self):
        """Canonical ClosedDiagram plus the node-set -> circle-index map."""
        circles = []
        for nodes, eids in self.components():
            lm = sum(self.edges[e][2][0] for e in eids)
            rm = sum(self.edges[e][2][1] for e in eids)
            bpts = frozenset(node[1] for node in nodes if node[0] == "b")
            tpts = frozenset(node[1] for node in nodes if node[0] == "t")
            fid = None
            if not bpts and not tpts:
                fid = ("loop", min(node[1] for node in nodes))
            circles.append((nodes, Circle(bpts, tpts, lm, rm, fid)))
        nb = 2 * self.bottom.n
        circles.sort(key=lambda pair: _circle_sort_key(pair[1], nb))
        node_map = {nodes: idx for idx, (nodes, _) in enumerate(circles)}
        return ClosedDiagram(tuple(c for _, c in circles)), node_map


def glue(top: PlatformMatching, tangle_or_bottom, bottom: PlatformMatching | None = None) -> ClosedDiagram:
    """Closure W(top) T bottom; with two arguments, the ring closure W(top)bottom."""
    if bottom is None:
        tangle, bottom = None, tangle_or_bottom
    else:
        tangle = tangle_or_bottom
    return GlueFrame(top, tangle, bottom).diagram()[0]


# ---------------------------------------------------------------------------
# Parity partition by elementary moves


def _elementary_neighbors(a: PlatformMatching, universe):
    """Matchings differing from `a` by one elementary change on four points."""
    out = []
    pairs = set(a.pairs)
    for p1, p2 in itertools.combinations(a.pairs, 2):
        others = pairs - {p1, p2}
        pts = sorted(p1 + p2)
        for alt in _catalan_matchings(tuple(pts)):
            alt = tuple(sorted(alt))
            if alt == tuple(sorted([p1, p2])):
                continue
            try:
                cand = PlatformMatching(a.n, a.k, tuple(others) + alt)
            except ValueError:
                continue
            if cand in universe:
                out.append(cand)
    return out


def elementary_move_graph(n: int, k: int | None):
    """Adjacency of the elementary-change graph on B^{n-k,k}."""
    universe = set(enumerate_matchings(n, k))
    return {a: set(_elementary_neighbors(a, universe)) for a in universe}


def parity_partition(n: int, k: int):
    """Two-coloring of B^{n-k,k} by parity of move distance from the first element."""
    elems = enumerate_matchings(n, k)
    if not elems:
        raise ValueError("empty matching set")
    graph = elementary_move_graph(n, k)
    base = elems[0]
    dist = {base: 0}
    frontier = [base]
    while frontier:
        nxt = []
        for u in frontier:
            for v in graph[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    b1 = frozenset(a for a in elems if a in dist and dist[a] % 2 == 0)
    b2 = frozenset(a for a in elems if a in dist and dist[a] % 2 == 1)
    if len(dist) != len(elems):
        raise ValueError("elementary-move graph is not connected")
    return b1, b2
