"""The rank-2 Frobenius algebra and its 2d TQFT on closed diagrams.

Labels: ONE has degree -1, X degree +1.  Multiplication 1*1=1, 1X=X1=X,
X^2=0; comultiplication Delta(1) = 1(x)X + X(x)1, Delta(X) = X(x)X; unit
iota(1) = 1; counit eps(1) = 0, eps(X) = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import CircleNotFound, MalformedEventSequence
from .planar import GlueFrame, PlatformMatching, identity_tangle

ONE = 0
X = 1


def label_degree(labeling, shift: int = 0) -> int:
    """Degree of a pure tensor labeling: #X - #ONE, plus a grading shift."""
    return sum(1 if lab else -1 for lab in labeling) + shift


def merge_labels(l1: int, l2: int):
    """Multiplication table; None encodes the vanishing product X*X."""
    if l1 == ONE:
        return l2
    if l2 == ONE:
        return l1
    return None


# ---------------------------------------------------------------------------
# Algebra elements over an ordered family of circles


@dataclass(frozen=True)
class AlgebraElement:
    """Z-linear combination of labelings of an ordered circle family."""

    circles: tuple
    terms: tuple  # tuple of (labeling tuple, coeff), normalized and sorted

    @classmethod
    def make(cls, circles, term_map) -> "AlgebraElement":
        circles = tuple(circles)
        clean = {}
        for lab, coeff in term_map.items():
            lab = tuple(lab)
            if len(lab) != len(circles):
                raise ValueError("labeling length does not match circle count")
            if coeff:
                clean[lab] = clean.get(lab, 0) + coeff
        items = tuple(sorted((lab, c) for lab, c in clean.items() if c))
        return cls(circles, items)

    @classmethod
    def basis(cls, circles, labeling) -> "AlgebraElement":
        return cls.make(circles, {tuple(labeling): 1})

    @classmethod
    def zero(cls, circles=()) -> "AlgebraElement":
        return cls.make(circles, {})

    def term_map(self) -> dict:
        return dict(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        if self.circles != other.circles:
            raise ValueError("ambient circle families differ")
        out = self.term_map()
        for lab, c in other.terms:
            out[lab] = out.get(lab, 0) + c
        return AlgebraElement.make(self.circles, out)

    def scale(self, c: int) -> "AlgebraElement":
        return AlgebraElement.make(self.circles, {lab: c * v for lab, v in self.terms})

    def _pos(self, cid) -> int:
        try:
            return self.circles.index(cid)
        except ValueError:
            raise CircleNotFound(f"circle {cid!r} not in ambient") from None


def apply_merge(x: AlgebraElement, c1, c2, new_id=None) -> AlgebraElement:
    """Merge circles c1, c2 (multiplication m on their labels)."""
    if c1 == c2:
        raise MalformedEventSequence("cannot merge a circle with itself")
    i, j = x._pos(c1), x._pos(c2)
    if new_id is None:
        new_id = ("m", c1, c2)
    circles = [c for idx, c in enumerate(x.circles) if idx not in (i, j)]
    circles.insert(min(i, j), new_id)
    out = {}
    for lab, coeff in x.terms:
        prod = merge_labels(lab[i], lab[j])
        if prod is None:
            continue
        rest = [l for idx, l in enumerate(lab) if idx not in (i, j)]
        rest.insert(min(i, j), prod)
        key = tuple(rest)
        out[key] = out.get(key, 0) + coeff
    return AlgebraElement.make(circles, out)


def apply_split(x: AlgebraElement, c, id1=None, id2=None) -> AlgebraElement:
    """Split circle c (comultiplication Delta on its label)."""
    i = x._pos(c)
    if id1 is None:
        id1 = ("s", c, 0)
    if id2 is None:
        id2 = ("s", c, 1)
    circles = list(x.circles)
    circles[i : i + 1] = [id1, id2]
    out = {}
    for lab, coeff in x.terms:
        pieces = [(ONE, X), (X, ONE)] if lab[i] == ONE else [(X, X)]
        for a, b in pieces:
            key = tuple(lab[:i]) + (a, b) + tuple(lab[i + 1 :])
            out[key] = out.get(key, 0) + coeff
    return AlgebraElement.make(circles, out)


def apply_birth(x: AlgebraElement, new_id=None) -> AlgebraElement:
    """Append a new circle labeled ONE to every term."""
    if new_id is None:
        new_id = ("b", len(x.circles))
    if new_id in x.circles:
        raise MalformedEventSequence(f"circle id {new_id!r} already present")
    circles = x.circles + (new_id,)
    return AlgebraElement.make(circles, {lab + (ONE,): c for lab, c in x.terms})


def apply_death(x: AlgebraElement, c) -> AlgebraElement:
    """Remove circle c via the counit: terms labeled ONE die, X survives."""
    i = x._pos(c)
    circles = x.circles[:i] + x.circles[i + 1 :]
    out = {}
    for lab, coeff in x.terms:
        if lab[i] == X:
            key = lab[:i] + lab[i + 1 :]
            out[key] = out.get(key, 0) + coeff
    return AlgebraElement.make(circles, out)


# ---------------------------------------------------------------------------
# Cobordism events


@dataclass(frozen=True)
class Birth:
    new_id: object = None


@dataclass(frozen=True)
class Death:
    circle: object = 0


@dataclass(frozen=True)
class Merge:
    c1: object
    c2: object
    into: object = None


@dataclass(frozen=True)
class Split:
    circle: object
    out1: object = None
    out2: object = None


CobordismEvent = (Birth, Death, Merge, Split)


def event_euler_characteristic(events) -> int:
    """chi of the surface assembled from elementary events over a cylinder base."""
    chi = 0
    for ev in events:
        if isinstance(ev, (Birth, Death)):
            chi += 1
        elif isinstance(ev, (Merge, Split)):
            chi -= 1
        else:
            raise MalformedEventSequence(f"unknown event {ev!r}")
    return chi


def evaluate_cobordism(events, x: AlgebraElement) -> AlgebraElement:
    """Apply a sequence of elementary cobordism events to an algebra element."""
    for ev in events:
        if isinstance(ev, Birth):
            x = apply_birth(x, ev.new_id)
        elif isinstance(ev, Death):
            x = apply_death(x, ev.circle)
        elif isinstance(ev, Merge):
            x = apply_merge(x, ev.c1, ev.c2, ev.into)
        elif isinstance(ev, Split):
            x = apply_split(x, ev.circle, ev.out1, ev.out2)
        else:
            raise MalformedEventSequence(f"unknown event {ev!r}")
    return x


# ---------------------------------------------------------------------------
# Surgery engine: resolved saddle sequences on edge-level wirings


class SurgeryRunner:
    """Tracks components of a degree-2 graph through saddle surgeries.

    Components carry stable integer ids; a surgery removes two edges, adds two
    replacement edges, and reports a merge or a split of component ids.
    """

    def __init__(self, edges: dict):
        self.edges = dict(edges)
        self.comp_nodes = {}
        self.node_comp = {}
        self._next = 0
        for nodes in self._components():
            self._register(nodes)

    def _register(self, nodes) -> int:
        cid = self._next
        self._next += 1
        self.comp_nodes[cid] = nodes
        for nd in nodes:
            self.node_comp[nd] = cid
        return cid

    def _components(self):
        adj = {}
        for u, v in self.edges.values():
            adj.setdefault(u, []).append(v)
            adj.setdefault(v, []).append(u)
        seen = set()
        comps = []
        for node in sorted(adj):
            if node in seen:
                continue
            stack, nodes = [node], set()
            while stack:
                cur = stack.pop()
                if cur in nodes:
                    continue
                nodes.add(cur)
                stack.extend(adj[cur])
            seen |= nodes
            comps.append(frozenset(nodes))
        return comps

    def surger(self, rm1, rm2, add_edges):
        """Replace edges rm1, rm2 by add_edges; return the merge/split event."""
        u1, _ = self.edges[rm1]
        u2, _ = self.edges[rm2]
        c1, c2 = self.node_comp[u1], self.node_comp[u2]
        del self.edges[rm1]
        del self.edges[rm2]
        for eid, uv in add_edges.items():
            self.edges[eid] = uv
        affected = self.comp_nodes[c1] | self.comp_nodes[c2]
        del self.comp_nodes[c1]
        if c2 != c1:
            del self.comp_nodes[c2]
        new_ids = []
        for nodes in self._components():
            if nodes & affected:
                new_ids.append(self._register(nodes))
        if c1 != c2:
            if len(new_ids) != 1:
                raise MalformedEventSequence("saddle between two circles must merge them")
            return ("merge", c1, c2, new_ids[0])
        if len(new_ids) != 2:
            raise MalformedEventSequence("self-saddle must split one circle into two")
        return ("split", c1, new_ids[0], new_ids[1])


def run_program(events, terms: dict) -> dict:
    """Apply recorded merge/split events to terms keyed by frozenset{(cid, label)}."""
    for ev in events:
        out = {}
        if ev[0] == "merge":
            _, c1, c2, new = ev
            for key, coeff in terms.items():
                lab = dict(key)
                prod = merge_labels(lab.pop(c1), lab.pop(c2))
                if prod is None:
                    continue
                lab[new] = prod
                k = frozenset(lab.items())
                out[k] = out.get(k, 0) + coeff
        elif ev[0] == "split":
            _, c, n1, n2 = ev
            for key, coeff in terms.items():
                lab = dict(key)
                old = lab.pop(c)
                pieces = [(ONE, X), (X, ONE)] if old == ONE else [(X, X)]
                for a, b in pieces:
                    lab2 = dict(lab)
                    lab2[n1] = a
                    lab2[n2] = b
                    k = frozenset(lab2.items())
                    out[k] = out.get(k, 0) + coeff
        else:
            raise MalformedEventSequence(f"unknown program event {ev!r}")
        terms = out
    return terms


# ---------------------------------------------------------------------------
# Minimal cobordisms: the ring-multiplication contraction


@dataclass(frozen=True)
class ContractionProgram:
    """Label-independent record of a middle-matching contraction.

    events: resolved merge/split list over component ids;
    left_of / right_of: initial component id per circle index of the two factors;
    final_circle: final component id -> circle index in the target diagram;
    target: the target ClosedDiagram.
    """

    events: tuple
    left_of: tuple
    right_of: tuple
    final_circle: tuple
    target: object


def _namespaced_edges(frame: GlueFrame, ns: str) -> dict:
    return {
        (ns, eid): ((ns, u), (ns, v))
        for eid, (u, v, _marks) in frame.edges.items()
    }


@lru_cache(maxsize=None)
def contraction_program(b: PlatformMatching, a: PlatformMatching, c: PlatformMatching) -> ContractionProgram:
    """Program contracting W(b)a W(a)c -> W(b)c along the arcs of a."""
    frame_top = GlueFrame(b, None, a)
    frame_bot = GlueFrame(a, None, c)
    dia_top, map_top = frame_top.diagram()
    dia_bot, map_bot = frame_bot.diagram()
    edges = {}
    edges.update(_namespaced_edges(frame_top, "1"))
    edges.update(_namespaced_edges(frame_bot, "2"))
    runner = SurgeryRunner(edges)

    left_of = [None] * len(dia_top.circles)
    for nodes, idx in map_top.items():
        nd = ("1", min(nodes))
        left_of[idx] = runner.node_comp[nd]
    right_of = [None] * len(dia_bot.circles)
    for nodes, idx in map_bot.items():
        nd = ("2", min(nodes))
        right_of[idx] = runner.node_comp[nd]

    events = []
    for (i, j) in sorted(a.pairs):
        ev = runner.surger(
            ("1", ("bot", (i, j))),
            ("2", ("top", (i, j))),
            {
                ("join", i): (("1", ("b", i)), ("2", ("t", i))),
                ("join", j): (("1", ("b", j)), ("2", ("t", j))),
            },
        )
        events.append(ev)

    target_frame = GlueFrame(b, None, c)
    target_dia, target_map = target_frame.diagram()
    # Final components visit ('2',('b',i)) on the bottom line and ('1',('t',i)) on top.
    final = {}
    by_points = {}
    for nodes, idx in target_map.items():
        bpts = frozenset(nd[1] for nd in nodes if nd[0] == "b")
        by_points[bpts] = idx
    for cid, nodes in runner.comp_nodes.items():
        bpts = frozenset(nd[1][1] for nd in nodes if nd[0] == "2" and nd[1][0] == "b")
        final[cid] = by_points[bpts]
    return ContractionProgram(
        events=tuple(events),
        left_of=tuple(left_of),
        right_of=tuple(right_of),
        final_circle=tuple(sorted(final.items())),
        target=target_dia,
    )


def minimal_cobordism(b: PlatformMatching, a: PlatformMatching, c: PlatformMatching):
    """The n saddle events contracting a against W(a), classified merge/split.

    Circle references: ('L', i) and ('R', j) are the i-th / j-th canonical
    circles of W(b)a and W(a)c; new circles are named by the events.
    """
    prog = contraction_program(b, a, c)
    rename = {}
    for i, cid in enumerate(prog.left_of):
        rename[cid] = ("L", i)
    for j, cid in enumerate(prog.right_of):
        rename[cid] = ("R", j)
    events = []
    for ev in prog.events:
        if ev[0] == "merge":
            _, c1, c2, new = ev
            nid = ("n", new)
            rename[new] = nid
            events.append(Merge(rename[c1], rename[c2], nid))
        else:
            _, c0, n1, n2 = ev
            i1, i2 = ("n", n1), ("n", n2)
            rename[n1], rename[n2] = i1, i2
            events.append(Split(rename[c0], i1, i2))
    return events


def multiply_basis(b, a, c, lab_top, lab_bot) -> dict:
    """Product of basis labelings lab_top in F(W(b)a) and lab_bot in F(W(a)c).

    Returns target labeling tuple -> coefficient over the circles of W(b)c.
    """
    prog = contraction_program(b, a, c)
    key = {}
    for i, cid in enumerate(prog.left_of):
        key[cid] = lab_top[i]
    for j, cid in enumerate(prog.right_of):
        key[cid] = lab_bot[j]
    terms = run_program(prog.events, {frozenset(key.items()): 1})
    final = dict(prog.final_circle)
    ncirc = len(prog.target.circles)
    out = {}
    for tkey, coeff in terms.items():
        lab = [None] * ncirc
        for cid, l in tkey:
            lab[final[cid]] = l
        lab = tuple(lab)
        out[lab] = out.get(lab, 0) + coeff
    return out
