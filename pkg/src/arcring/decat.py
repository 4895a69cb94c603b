"""Decategorification: sign sequences, the module V^n, vectors p_a, the
K-group action of flat tangles, graded Euler characteristics, and an
independent Kauffman-bracket state sum.

Grading conventions follow the rings: the circle contributes q^-1 + q
(label ONE in degree -1), and the bracket is calibrated so that the unknot
evaluates to q^-1 + q and one positive crossing shifts by {-1}.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import ArityMismatch, NotClosed
from .laurent import CIRCLE_POLY, LaurentPoly
from .planar import (
    FlatTangle,
    PlatformMatching,
    enumerate_matchings,
    platform_closure_arcs,
)


# ---------------------------------------------------------------------------
# Sign sequences and V^n


def s_sequence(a: PlatformMatching) -> tuple:
    """The sequence s(a): +1 at left arc endpoints, -1 at right ones,
    restricted to the free points."""
    if a.k is None:
        raise ValueError("s_sequence needs a platform matching")
    signs = {}
    for p, q in a.pairs:
        signs[p] = 1
        signs[q] = -1
    return tuple(signs[p] for p in a.free_points)


def sequence_weight(s) -> int:
    return sum(s)


def all_sequences(n: int):
    """J_n: all length-n sequences of +-1, by descending order (1 > -1)."""
    out = []
    for bits in range(2 ** n):
        out.append(tuple(1 if (bits >> (n - 1 - i)) & 1 else -1 for i in range(n)))
    out.sort(key=lambda s: tuple(-x for x in s))
    return out


class VnVector:
    """Element of V^n: a map from sign sequences to Laurent polynomials."""

    def __init__(self, n: int, terms=None):
        self.n = n
        self.terms = {}
        if terms:
            for s, c in terms.items():
                if len(s) != n:
                    raise ValueError("sequence length mismatch")
                poly = c if isinstance(c, LaurentPoly) else LaurentPoly({0: c})
                if poly:
                    self.terms[tuple(s)] = poly

    def __eq__(self, other):
        return isinstance(other, VnVector) and self.n == other.n and self.terms == other.terms

    def __add__(self, other):
        out = dict(self.terms)
        for s, c in other.terms.items():
            out[s] = out.get(s, LaurentPoly.zero()) + c
        return VnVector(self.n, out)

    def scale(self, poly: LaurentPoly) -> "VnVector":
        return VnVector(self.n, {s: c * poly for s, c in self.terms.items()})

    def is_zero(self):
        return not self.terms

    def leading_sequence(self):
        """Maximal sequence in the order induced by 1 > -1."""
        if not self.terms:
            return None
        return max(self.terms, key=lambda s: tuple(s))

    def __repr__(self):
        return f"VnVector({self.n}, {self.terms!r})"


def p_vector(a: PlatformMatching) -> VnVector:
    """The vector p_a: free-free arcs expand as v1 v-1 + q v-1 v1, an arc to
    the left platform contributes v-1, to the right platform v1."""
    free = list(a.free_points)
    pos = {p: i for i, p in enumerate(free)}
    n = len(free)
    terms = {(): LaurentPoly.one()}
    factors = []
    for p, q in a.pairs:
        p_free, q_free = p in pos, q in pos
        if p_free and q_free:
            factors.append(("ff", pos[p], pos[q]))
        elif q_free and p in a.left_platform:
            factors.append(("fixed", pos[q], -1))
        elif q_free and p in a.right_platform:
            factors.append(("fixed", pos[q], 1))
        elif p_free and q in a.left_platform:
            factors.append(("fixed", pos[p], -1))
        elif p_free and q in a.right_platform:
            factors.append(("fixed", pos[p], 1))
        # platform-to-platform arcs contribute no tensor factor
    expansion = [({}, LaurentPoly.one())]
    for f in factors:
        new = []
        for assign, coeff in expansion:
            if f[0] == "fixed":
                a2 = dict(assign)
                a2[f[1]] = f[2]
                new.append((a2, coeff))
            else:
                _, i, j = f
                a2 = dict(assign)
                a2[i], a2[j] = 1, -1
                new.append((a2, coeff))
                a3 = dict(assign)
                a3[i], a3[j] = -1, 1
                new.append((a3, coeff * LaurentPoly.q(1)))
        expansion = new
    out = {}
    for assign, coeff in expansion:
        seq = tuple(assign[i] for i in range(n))
        out[seq] = out.get(seq, LaurentPoly.zero()) + coeff
    return VnVector(n, out)


# ---------------------------------------------------------------------------
# K-classes and the basis change


class KClass:
    """Formal Z[q,q^-1]-combination of matchings from one union of B^{n-k,k}."""

    def __init__(self, n: int, terms=None):
        self.n = n
        self.terms = {}
        if terms:
            for a, c in terms.items():
                poly = c if isinstance(c, LaurentPoly) else LaurentPoly({0: c})
                if poly:
                    self.terms[a] = poly

    @classmethod
    def of(cls, a: PlatformMatching) -> "KClass":
        return cls(a.n, {a: LaurentPoly.one()})

    def __eq__(self, other):
        return isinstance(other, KClass) and self.n == other.n and self.terms == other.terms

    def __add__(self, other):
        out = dict(self.terms)
        for a, c in other.terms.items():
            out[a] = out.get(a, LaurentPoly.zero()) + c
        return KClass(self.n, out)

    def scale(self, poly) -> "KClass":
        if not isinstance(poly, LaurentPoly):
            poly = LaurentPoly({0: poly})
        return KClass(self.n, {a: c * poly for a, c in self.terms.items()})

    def is_zero(self):
        return not self.terms

    def __repr__(self):
        return f"KClass({self.n}, {self.terms!r})"


@lru_cache(maxsize=None)
def matching_of_sequence(n: int):
    """The inverse of a -> s(a) over the union of all B^{n-k,k}."""
    out = {}
    for k in range(n + 1):
        for a in enumerate_matchings(n, k):
            s = s_sequence(a)
            if s in out:
                raise ValueError("s is not injective")
            out[s] = a
    return out


def kclass_to_vn(x: KClass) -> VnVector:
    out = VnVector(x.n)
    for a, coeff in x.terms.items():
        out = out + p_vector(a).scale(coeff)
    return out


def vn_to_kclass(v: VnVector) -> KClass:
    """Back-substitution along the descending sequence order."""
    table = matching_of_sequence(v.n)
    residue = v
    out = KClass(v.n)
    while not residue.is_zero():
        s = residue.leading_sequence()
        coeff = residue.terms[s]
        a = table[s]
        out = out + KClass.of(a).scale(coeff)
        residue = residue + p_vector(a).scale(coeff * LaurentPoly({0: -1}))
    return out


# ---------------------------------------------------------------------------
# Flat tangle action on the K-group


def flat_action_on_matching(tangle: FlatTangle, a: PlatformMatching):
    """[F(T)] [P_a]: compose geometrically, with (q^-1 + q) per free circle.

    Components that meet one platform at least twice kill the class; marked
    circles through the closure arcs contribute a factor 1.
    """
    if a.k is None:
        raise ValueError("flat action needs a platform matching")
    if len(a.free_points) != tangle.n:
        raise ArityMismatch("tangle bottom arity does not match the matching")
    m, n, k = tangle.m, tangle.n, a.k
    l = (m - n) // 2
    k_top = k + l
    if not 0 <= k_top <= m:
        return KClass(m, {})
    top = _positions_matching(m, k_top)
    verts_l, verts_r, side, crosses = platform_closure_arcs(a, top)
    # Edge model: bottom matching arcs, tangle strands, closure arcs.
    bfree = list(a.free_points)
    tfree = list(top.free_points)
    edges = []
    for p, q in a.pairs:
        edges.append((("b", p), ("b", q), (0, 0)))
    for p, q in tangle.pairs:
        edges.append((_embed(p, bfree, tfree), _embed(q, bfree, tfree), (0, 0)))
    for bp, tp in verts_l:
        edges.append((("b", bp), ("t", tp), (1, 0)))
    for bp, tp in verts_r:
        edges.append((("b", bp), ("t", tp), (0, 1)))
    for p1, p2 in crosses:
        edges.append(((side, p1), (side, p2), (1, 1)))
    adj = {}
    for idx, (u, v, marks) in enumerate(edges):
        adj.setdefault(u, []).append((idx, v, marks))
        adj.setdefault(v, []).append((idx, u, marks))
    terminals = {("t", p) for p in top.left_platform} | {("t", p) for p in top.right_platform}
    terminals |= {("t", p) for p in tfree}
    poly = LaurentPoly.one()
    pairs = []
    seen_edges = set()
    seen_nodes = set()
    for t in sorted(terminals):
        if t in seen_nodes:
            continue
        seen_nodes.add(t)
        if len(adj.get(t, ())) != 1:
            raise ArityMismatch("top boundary point is not simple")
        lm = rm = 0
        eidx, cur, marks = adj[t][0]
        lm += marks[0]
        rm += marks[1]
        seen_edges.add(eidx)
        while cur not in terminals:
            seen_nodes.add(cur)
            nxt = [(e, o, mk) for e, o, mk in adj[cur] if e != eidx]
            if len(nxt) != 1:
                raise ArityMismatch("composite path is not a chain")
            eidx, cur, marks = nxt[0]
            lm += marks[0]
            rm += marks[1]
            seen_edges.add(eidx)
        seen_nodes.add(cur)
        if lm >= 2 or rm >= 2:
            return KClass(m, {})
        pairs.append((t[1], cur[1]))
    # Remaining components are cycles.
    for idx, (u, v, marks) in enumerate(edges):
        if idx in seen_edges or u in seen_nodes:
            continue
        lm = rm = 0
        start = u
        eidx, cur = idx, v
        lm, rm = marks
        seen_edges.add(eidx)
        seen_nodes.add(u)
        while cur != start:
            seen_nodes.add(cur)
            nxt = [(e, o, mk) for e, o, mk in adj[cur] if e != eidx]
            eidx, cur, mk = nxt[0]
            lm += mk[0]
            rm += mk[1]
            seen_edges.add(eidx)
        if lm >= 2 or rm >= 2:
            return KClass(m, {})
        if lm == 0 and rm == 0:
            poly = poly * CIRCLE_POLY
    for _ in range(tangle.free_circles):
        poly = poly * CIRCLE_POLY
    composite = PlatformMatching(m, k_top, tuple(tuple(sorted(p)) for p in pairs))
    return KClass(m, {composite: poly})


def _positions_matching(m: int, k_top: int):
    """A placeholder matching carrying only the platform geometry of B^{m-k',k'}."""
    elems = enumerate_matchings(m, k_top)
    if not elems:
        raise ValueError("empty top matching family")
    return elems[0]


def _embed(pt, bfree, tfree):
    side, i = pt
    if side == "b":
        return ("b", bfree[i - 1])
    return ("t", tfree[i - 1])


def flat_action_on_kclass(tangle: FlatTangle, x) -> KClass:
    """Extend the flat action linearly to K-classes."""
    if isinstance(x, PlatformMatching):
        return flat_action_on_matching(tangle, x)
    out = KClass(tangle.m)
    for a, coeff in x.terms.items():
        out = out + flat_action_on_matching(tangle, a).scale(coeff)
    return out


# ---------------------------------------------------------------------------
# Euler characteristics and the bracket oracle


def graded_euler_characteristic(homology) -> LaurentPoly:
    """Sum of (-1)^i q^j free ranks; torsion is ignored (see torsion_summary)."""
    out = {}
    for (i, j), summary in homology.items():
        if summary.free_rank:
            out[j] = out.get(j, 0) + (-1) ** i * summary.free_rank
    return LaurentPoly(out)


def torsion_summary(homology) -> dict:
    return {key: tuple(s.torsion) for key, s in homology.items() if s.torsion}


def kauffman_bracket(diagram, closed: bool = True) -> LaurentPoly:
    """Independent state-sum oracle for closed diagrams.

    chi = (-1)^x q^(2x - y) * sum over states (-1)^{|r|} q^{-|r|} (q^-1+q)^{c(r)},
    with c(r) counted by direct cycle tracing, independent of the homology path.
    """
    from .complexes import auto_orient, crossing_signs

    if diagram.n or diagram.m:
        raise NotClosed("the bracket oracle is defined for closed diagrams")
    d = diagram
    crossings = [i for i, tok in enumerate(d.tokens) if tok[0] == "cross"]
    if crossings and d.orient_bottom is None and d.orient_top is None:
        d = auto_orient(d)
    x, y = crossing_signs(d) if crossings else (0, 0)
    total = LaurentPoly.zero()
    for state in range(2 ** len(crossings)):
        bits = [(state >> i) & 1 for i in range(len(crossings))]
        weight = sum(bits)
        circles = _count_state_circles(d, dict(zip(crossings, bits)))
        term = CIRCLE_POLY ** circles * LaurentPoly.q(-weight, (-1) ** weight)
        total = total + term
    shift = LaurentPoly.q(2 * x - y, (-1) ** x)
    return shift * total


def _count_state_circles(diagram, state_bits) -> int:
    """Circle count of one smoothing state, by elementary strand tracing."""
    parent = {}

    def find(u):
        parent.setdefault(u, u)
        root = u
        while parent[root] != root:
            root = parent[root]
        while parent[u] != root:
            parent[u], u = root, parent[u]
        return root

    def union(u, v):
        """Union; True when u and v were already connected (a cycle closes)."""
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            return False
        return True

    circles = 0
    wires = []
    fresh = iter(range(10 ** 9))
    for i in range(diagram.n):
        wires.append(next(fresh))
    for level, tok in enumerate(diagram.tokens):
        kind, pos = tok[0], tok[1]
        if kind == "cup":
            a, b = next(fresh), next(fresh)
            union(a, b)
            wires[pos - 1 : pos - 1] = [a, b]
        elif kind == "cap":
            a, b = wires.pop(pos - 1), wires.pop(pos - 1)
            if union(a, b):
                circles += 1
        else:
            bit = state_bits[level]
            smoothing = ("id" if bit == 0 else "cupcap") if tok[2] == "over" else ("cupcap" if bit == 0 else "id")
            if smoothing == "id":
                continue
            a, b = wires[pos - 1], wires[pos]
            if union(a, b):
                circles += 1
            c2, d2 = next(fresh), next(fresh)
            union(c2, d2)
            wires[pos - 1], wires[pos] = c2, d2
    return circles
