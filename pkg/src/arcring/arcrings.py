"""The arc rings: H^n, the subring ATilde^{n-k,k}, the quotient A^{n-k,k},
and the product ring A^n, with multiplication, gradings, idempotents,
centers, and quiver presentations.

Block (b, a) of a ring holds F(W(b)a){n}; multiplication contracts the middle
matching by minimal cobordisms.  In kind "A" every block is reduced modulo
the ideal: blocks with a type III circle vanish and type II circles carry the
forced label ONE.

Ring handles are immutable after construction; multiplication tables are
memoized lazily (concurrent idempotent writes are safe: same key, same value).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

from .errors import IsomorphismFailure, RingMismatch
from .laurent import LaurentPoly
from .planar import (
    CircleType,
    ClosedDiagram,
    PlatformMatching,
    enumerate_matchings,
    glue,
)
from .tqft import ONE, X, label_degree, multiply_basis

KINDS = ("H", "ATilde", "A", "An")


@dataclass(frozen=True)
class RingDescriptor:
    kind: str
    n: int
    k: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ring kind {self.kind!r}")
        if self.kind in ("ATilde", "A"):
            if self.k is None or not 0 <= self.k <= self.n:
                raise ValueError("kinds ATilde/A require 0 <= k <= n")
        if self.kind in ("H", "An") and self.k is not None:
            raise ValueError(f"kind {self.kind} takes no k")

    def __str__(self):
        if self.kind == "H":
            return f"H^{self.n}"
        if self.kind == "An":
            return f"A^{self.n} (product)"
        tilde = "~" if self.kind == "ATilde" else ""
        return f"A{tilde}^{{{self.n - self.k},{self.k}}}"


@dataclass(frozen=True)
class BlockBasis:
    """Graded basis of one (b, a) block."""

    diagram: ClosedDiagram
    labelings: tuple
    degrees: tuple

    def index(self, labeling) -> int:
        return self.labelings.index(tuple(labeling))


def _block_labelings(diagram: ClosedDiagram, reduced: bool):
    if reduced and diagram.has_type_iii:
        return ()
    choices = []
    for c in diagram.circles:
        if reduced and c.circle_type is CircleType.TYPE_II:
            choices.append((ONE,))
        else:
            choices.append((ONE, X))
    return tuple(itertools.product(*choices))


class Ring:
    """Handle for one arc ring: ordered basis and lazy multiplication tables."""

    def __init__(self, desc: RingDescriptor):
        if desc.kind == "An":
            raise ValueError("use ProductRing for the product ring A^n")
        self.desc = desc
        self.shift = desc.n
        self.matchings = enumerate_matchings(desc.n, desc.k if desc.kind != "H" else None)
        self.reduced = desc.kind == "A"
        self.blocks = {}
        for bi, b in enumerate(self.matchings):
            for ai, a in enumerate(self.matchings):
                dia = glue(b, a)
                labs = _block_labelings(dia, self.reduced)
                degs = tuple(label_degree(lab, self.shift) for lab in labs)
                self.blocks[(bi, ai)] = BlockBasis(dia, labs, degs)
        self._tables = {}

    def block(self, bi: int, ai: int) -> BlockBasis:
        return self.blocks[(bi, ai)]

    def index_of(self, a: PlatformMatching) -> int:
        return self.matchings.index(a)

    def basis(self):
        """Iterate (bi, ai, labeling, degree) over the whole ring."""
        for (bi, ai), blk in sorted(self.blocks.items()):
            for lab, deg in zip(blk.labelings, blk.degrees):
                yield bi, ai, lab, deg

    def total_rank(self) -> int:
        return sum(len(blk.labelings) for blk in self.blocks.values())

    def reduce_terms(self, bi: int, ai: int, terms: dict) -> dict:
        """Reduce a term map over the (bi, ai) glue diagram modulo the ideal."""
        if not self.reduced:
            return {lab: c for lab, c in terms.items() if c}
        dia = self.blocks[(bi, ai)].diagram
        if dia.has_type_iii:
            return {}
        out = {}
        for lab, coeff in terms.items():
            if not coeff:
                continue
            if any(
                lab[i] == X and c.circle_type is CircleType.TYPE_II
                for i, c in enumerate(dia.circles)
            ):
                continue
            out[lab] = out.get(lab, 0) + coeff
        return {lab: c for lab, c in out.items() if c}

    def multiply_table(self, bi: int, ai: int, ci: int) -> dict:
        """(lab1, lab2) -> {labeling: coeff} for block product (bi,ai)x(ai,ci)."""
        key = (bi, ai, ci)
        table = self._tables.get(key)
        if table is not None:
            return table
        b, a, c = self.matchings[bi], self.matchings[ai], self.matchings[ci]
        table = {}
        for lab1 in self.blocks[(bi, ai)].labelings:
            for lab2 in self.blocks[(ai, ci)].labelings:
                prod = multiply_basis(b, a, c, lab1, lab2)
                table[(lab1, lab2)] = self.reduce_terms(bi, ci, prod)
        self._tables[key] = table
        return table


@lru_cache(maxsize=None)
def build_ring(desc: RingDescriptor):
    if desc.kind == "An":
        return ProductRing(desc.n)
    return Ring(desc)


class ProductRing:
    """A^n as the direct product of A^{n-k,k} over 0 <= k <= n."""

    def __init__(self, n: int):
        self.desc = RingDescriptor("An", n)
        self.n = n
        self.components = {
            k: build_ring(RingDescriptor("A", n, k)) for k in range(n + 1)
        }

    def total_rank(self) -> int:
        return sum(r.total_rank() for r in self.components.values())


# ---------------------------------------------------------------------------
# Ring elements


class RingElement:
    """Element of an arc ring: a term map per (b, a) block."""

    def __init__(self, ring: Ring, blocks=None):
        self.ring = ring
        self.blocks = {}
        if blocks:
            for key, terms in blocks.items():
                clean = ring.reduce_terms(key[0], key[1], dict(terms))
                if clean:
                    self.blocks[key] = clean

    @classmethod
    def basis_element(cls, ring: Ring, bi: int, ai: int, labeling) -> "RingElement":
        return cls(ring, {(bi, ai): {tuple(labeling): 1}})

    def is_zero(self) -> bool:
        return not self.blocks

    def __eq__(self, other):
        return (
            isinstance(other, RingElement)
            and self.ring is other.ring
            and self.blocks == other.blocks
        )

    def __add__(self, other: "RingElement") -> "RingElement":
        if self.ring is not other.ring:
            raise RingMismatch("elements of different rings")
        out = {k: dict(v) for k, v in self.blocks.items()}
        for k, terms in other.blocks.items():
            tgt = out.setdefault(k, {})
            for lab, c in terms.items():
                tgt[lab] = tgt.get(lab, 0) + c
        return RingElement(self.ring, out)

    def scale(self, c: int) -> "RingElement":
        return RingElement(
            self.ring,
            {k: {lab: c * v for lab, v in terms.items()} for k, terms in self.blocks.items()},
        )

    def __sub__(self, other):
        return self + other.scale(-1)

    def degrees(self):
        out = set()
        for (bi, ai), terms in self.blocks.items():
            for lab in terms:
                out.add(label_degree(lab, self.ring.shift))
        return out

    def __repr__(self):
        return f"RingElement({self.ring.desc}, {self.blocks!r})"


def multiply(x: RingElement, y: RingElement) -> RingElement:
    """Ring product; blocks compose only through a shared middle matching."""
    if x.ring is not y.ring:
        raise RingMismatch("elements of different rings")
    ring = x.ring
    out = {}
    for (bi, ai), terms1 in x.blocks.items():
        for (ai2, ci), terms2 in y.blocks.items():
            if ai2 != ai:
                continue
            table = ring.multiply_table(bi, ai, ci)
            tgt = out.setdefault((bi, ci), {})
            for lab1, c1 in terms1.items():
                for lab2, c2 in terms2.items():
                    for lab, c in table[(lab1, lab2)].items():
                        tgt[lab] = tgt.get(lab, 0) + c1 * c2 * c
    return RingElement(ring, out)


def idempotent(ring: Ring, a) -> RingElement:
    """1_a: the all-ONE labeling of the diagonal block at a."""
    ai = a if isinstance(a, int) else ring.index_of(a)
    blk = ring.block(ai, ai)
    lab = (ONE,) * len(blk.diagram.circles)
    return RingElement.basis_element(ring, ai, ai, lab)


def unit(desc_or_ring) -> RingElement:
    ring = desc_or_ring if isinstance(desc_or_ring, Ring) else build_ring(desc_or_ring)
    out = RingElement(ring)
    for ai in range(len(ring.matchings)):
        out = out + idempotent(ring, ai)
    return out


def reduce_mod_ideal(x: RingElement) -> RingElement:
    """Image of an ATilde element in the quotient ring A."""
    if x.ring.desc.kind != "ATilde":
        raise RingMismatch("reduce_mod_ideal expects an ATilde element")
    target = build_ring(RingDescriptor("A", x.ring.desc.n, x.ring.desc.k))
    return RingElement(target, {k: dict(v) for k, v in x.blocks.items()})


def in_ideal(x: RingElement) -> bool:
    """Membership of an ATilde element in the ideal I^{n-k,k}."""
    ring = x.ring
    if ring.desc.kind != "ATilde":
        raise RingMismatch("ideal membership is defined for ATilde elements")
    for (bi, ai), terms in x.blocks.items():
        dia = ring.block(bi, ai).diagram
        if dia.has_type_iii:
            continue
        for lab in terms:
            if not any(
                lab[i] == X and c.circle_type is CircleType.TYPE_II
                for i, c in enumerate(dia.circles)
            ):
                return False
    return True


def ideal_basis(ring: Ring):
    """Basis of I^{n-k,k} inside an ATilde ring."""
    if ring.desc.kind != "ATilde":
        raise RingMismatch("the ideal lives in an ATilde ring")
    out = []
    for (bi, ai), blk in sorted(ring.blocks.items()):
        dia = blk.diagram
        for lab in blk.labelings:
            if dia.has_type_iii or any(
                lab[i] == X and c.circle_type is CircleType.TYPE_II
                for i, c in enumerate(dia.circles)
            ):
                out.append((bi, ai, lab))
    return out


def graded_rank(desc: RingDescriptor, b, a) -> LaurentPoly:
    """Graded rank of the (b, a) block as a Laurent polynomial in q."""
    ring = build_ring(desc)
    bi = b if isinstance(b, int) else ring.index_of(b)
    ai = a if isinstance(a, int) else ring.index_of(a)
    out = {}
    for deg in ring.block(bi, ai).degrees:
        out[deg] = out.get(deg, 0) + 1
    return LaurentPoly(out)


# ---------------------------------------------------------------------------
# Structure reports


@dataclass(frozen=True)
class CenterReport:
    rank: int
    invertibles: str
    components: tuple


def center_degree_zero(desc: RingDescriptor) -> CenterReport:
    """Degree-zero center: solutions of vx = xv with v in the idempotent span."""
    ring = build_ring(desc)
    if isinstance(ring, ProductRing):
        raise RingMismatch("center_degree_zero expects a single ring component")
    n_el = len(ring.matchings)
    parent = list(range(n_el))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # v = sum v_a 1_a is central iff v_a = v_b whenever the (a, b) block is nonzero.
    for (bi, ai), blk in ring.blocks.items():
        if bi != ai and blk.labelings:
            ra, rb = find(bi), find(ai)
            if ra != rb:
                parent[ra] = rb
    comps = {}
    for i in range(n_el):
        comps.setdefault(find(i), []).append(i)
    rank = len(comps)
    invertibles = "{+1, -1}" if rank == 1 else f"{{±1}}^{rank} (componentwise signs)"
    return CenterReport(rank=rank, invertibles=invertibles, components=tuple(map(tuple, comps.values())))


@dataclass(frozen=True)
class DegreeZeroReport:
    rank: int
    spanned_by_idempotents: bool


def degree_zero_part(desc: RingDescriptor) -> DegreeZeroReport:
    """Check that the degree-0 part is spanned exactly by the idempotents 1_a."""
    ring = build_ring(desc)
    count = 0
    ok = True
    for bi, ai, lab, deg in ring.basis():
        if deg != 0:
            continue
        count += 1
        if bi != ai or any(l == X for l in lab):
            ok = False
    return DegreeZeroReport(rank=count, spanned_by_idempotents=ok and count == len(ring.matchings))


# ---------------------------------------------------------------------------
# Quiver presentation of A^{1,n-1}


@dataclass(frozen=True)
class QuiverPresentation:
    vertices: tuple
    arrows: tuple
    relations: tuple


@dataclass(frozen=True)
class QuiverReport:
    n: int
    ok: bool
    total_rank: int
    checked: tuple
    presentation: QuiverPresentation


def _path_order(ring: Ring):
    """Order B^{1,n-1} as the quiver path a_1 .. a_n.

    a_1 is the unique element with no free-free arc; a_j (j >= 2) has its single
    free-free arc at points (j, j+1).
    """
    n = ring.desc.n
    order = [None] * n
    for idx, a in enumerate(ring.matchings):
        free = set(a.free_points)
        ff = [(p, q) for p, q in a.pairs if p in free and q in free]
        if not ff:
            order[0] = idx
        else:
            (p, q) = ff[0]
            if len(ff) != 1 or q != p + 1:
                raise IsomorphismFailure(f"unexpected arc pattern in B^{{1,{n-1}}}: {a}")
            order[p - 1] = idx
    if any(v is None for v in order):
        raise IsomorphismFailure("could not identify the quiver path order")
    return order


def verify_quiver(n: int) -> QuiverReport:
    """Verify the path-ring presentation of A^{1,n-1} (n >= 2)."""
    if n < 2:
        raise ValueError("quiver presentation needs n >= 2")
    ring = build_ring(RingDescriptor("A", n, n - 1))
    order = _path_order(ring)
    checked = []
    ok = True

    def block_rank(i, j):
        return len(ring.block(order[i - 1], order[j - 1]).labelings)

    def gen(i, j):
        """The arrow (i|j): generator of the rank-1 block _{a_i}(A)_{a_j}."""
        bi, ai = order[i - 1], order[j - 1]
        (lab,) = ring.block(bi, ai).labelings
        return RingElement.basis_element(ring, bi, ai, lab)

    def loop_value(i, via):
        """(i|via|i) as a coefficient against the degree-2 diagonal basis."""
        prod = multiply(gen(i, via), gen(via, i))
        bi = order[i - 1]
        terms = prod.blocks.get((bi, bi), {})
        blk = ring.block(bi, bi)
        coeffs = []
        for lab, c in terms.items():
            if label_degree(lab, ring.shift) != 2:
                raise IsomorphismFailure("loop product not homogeneous of degree 2")
            coeffs.append(c)
        if not terms:
            return 0
        if len(terms) != 1:
            raise IsomorphismFailure("loop product not a multiple of a single basis vector")
        return coeffs[0]

    # Block dimensions: 0 for |i-j| > 1, 1 for |i-j| = 1, diagonal 1 or 2.
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            r = block_rank(i, j)
            expect = 0
            if i == j:
                expect = 1 if i == 1 else 2
            elif abs(i - j) == 1:
                expect = 1
            if r != expect:
                ok = False
                checked.append((f"rank _{{a_{i}}}(A)_{{a_{j}}} = {expect}", False))
    checked.append(("block dimension table", ok))

    # (1|2|1) = 0
    rel_ok = loop_value(1, 2) == 0
    ok &= rel_ok
    checked.append(("(1|2|1) = 0", rel_ok))

    # (i|i+1|i) = (i|i-1|i) up to a consistent sign rescaling of arrows.
    for i in range(2, n):
        up, down = loop_value(i, i + 1), loop_value(i, i - 1)
        rel_ok = abs(up) == 1 and abs(down) == 1
        ok &= rel_ok
        checked.append((f"(({i}|{i+1}|{i})) = (({i}|{i-1}|{i})) up to unit", rel_ok))
    if n >= 2:
        last = loop_value(n, n - 1)
        rel_ok = abs(last) == 1
        ok &= rel_ok
        checked.append((f"({n}|{n-1}|{n}) generates degree 2", rel_ok))

    # (i|i+1|i+2) = 0 and (i|i-1|i-2) = 0
    for i in range(1, n - 1):
        prod = multiply(gen(i + 2, i + 1), gen(i + 1, i))
        rel_ok = prod.is_zero()
        ok &= rel_ok
        checked.append((f"({i}|{i+1}|{i+2}) = 0", rel_ok))
    for i in range(3, n + 1):
        prod = multiply(gen(i - 2, i - 1), gen(i - 1, i))
        rel_ok = prod.is_zero()
        ok &= rel_ok
        checked.append((f"({i}|{i-1}|{i-2}) = 0", rel_ok))

    total = ring.total_rank()
    rel_ok = total == 4 * n - 3
    ok &= rel_ok
    checked.append((f"total rank = 4n-3 = {4 * n - 3}", rel_ok))

    arrows = tuple((i, i + 1) for i in range(1, n)) + tuple((i + 1, i) for i in range(1, n))
    relations = (
        "(1|2|1) = 0",
        "(i|i+1|i) = (i|i-1|i) for 1 < i < n",
        "(i|i+1|i+2) = 0",
        "(i|i-1|i-2) = 0",
    )
    pres = QuiverPresentation(tuple(range(1, n + 1)), arrows, relations)
    if not ok:
        first = next(name for name, good in checked if not good)
        raise IsomorphismFailure(f"quiver relation failed: {first}")
    return QuiverReport(n=n, ok=ok, total_rank=total, checked=tuple(checked), presentation=pres)
