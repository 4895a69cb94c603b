"""Graded bimodules of flat tangles, ring actions, cobordism maps, and the
tensor product over the middle ring.

For a flat (m, n)-tangle T and platform size k with l = (m-n)/2, the block
_c F(T)_b is F of the closure of W(c) T b, shifted by {n + max(0, l)}; blocks
with a type III circle vanish and type II circles carry the forced label ONE
(set reduced=False for the ATilde-level bimodule with its full basis).

Both ring actions contract the shared matching by minimal cobordisms; the
composition comparison map additionally deletes the closed-up platform
circles created by the double closure, forcing label ONE on them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

from .errors import (
    ArityMismatch,
    InternalInvariantError,
    MalformedEventSequence,
    MiddleMismatch,
    ParityMismatch,
    PlatformRangeViolation,
)
from .intlinalg import IntMatrix, smith_normal_form
from .laurent import LaurentPoly
from .planar import (
    CircleType,
    FlatTangle,
    GlueFrame,
    PlatformMatching,
    compose_flat,
    enumerate_matchings,
    glue,
)
from .arcrings import BlockBasis, Ring, RingDescriptor, build_ring, _block_labelings
from .tqft import (
    ONE,
    X,
    Birth,
    Death,
    SurgeryRunner,
    label_degree,
    merge_labels,
    run_program,
)


def k_range(m: int, n: int):
    """Valid platform sizes for an (m, n)-tangle bimodule."""
    if (m + n) % 2:
        raise ParityMismatch("m + n must be even")
    lo = max(0, (n - m) // 2)
    hi = min(n, (m + n) // 2)
    return range(lo, hi + 1)


@dataclass(frozen=True)
class BimoduleShape:
    m: int
    n: int
    k: int
    reduced: bool = True

    def __post_init__(self):
        if self.k not in k_range(self.m, self.n):
            raise PlatformRangeViolation(
                f"k={self.k} outside [{k_range(self.m, self.n).start}, {k_range(self.m, self.n).stop - 1}]"
            )

    @property
    def l(self) -> int:
        return (self.m - self.n) // 2

    @property
    def shift(self) -> int:
        return self.n + max(0, self.l)

    @property
    def left_desc(self) -> RingDescriptor:
        kind = "A" if self.reduced else "ATilde"
        return RingDescriptor(kind, self.m, self.k + self.l)

    @property
    def right_desc(self) -> RingDescriptor:
        kind = "A" if self.reduced else "ATilde"
        return RingDescriptor(kind, self.n, self.k)


class FlatBimodule:
    """The (A^{m-k-l,k+l}, A^{n-k,k})-bimodule of a flat (m, n)-tangle."""

    def __init__(self, tangle: FlatTangle, k: int, reduced: bool = True):
        self.tangle = tangle
        self.shape = BimoduleShape(tangle.m, tangle.n, k, reduced)
        self.left_ring: Ring = build_ring(self.shape.left_desc)
        self.right_ring: Ring = build_ring(self.shape.right_desc)
        self.blocks = {}
        shift = self.shape.shift
        for ci, c in enumerate(self.left_ring.matchings):
            for bi, b in enumerate(self.right_ring.matchings):
                dia = glue(c, tangle, b)
                labs = _block_labelings(dia, reduced)
                degs = tuple(label_degree(lab, shift) for lab in labs)
                self.blocks[(ci, bi)] = BlockBasis(dia, labs, degs)
        self._left_tables = {}
        self._right_tables = {}

    # -- bases ------------------------------------------------------------

    def block(self, ci: int, bi: int) -> BlockBasis:
        return self.blocks[(ci, bi)]

    def basis(self):
        for (ci, bi), blk in sorted(self.blocks.items()):
            for lab, deg in zip(blk.labelings, blk.degrees):
                yield ci, bi, lab, deg

    def basis_list(self):
        return list(self.basis())

    def graded_rank(self, ci: int, bi: int) -> LaurentPoly:
        out = {}
        for deg in self.blocks[(ci, bi)].degrees:
            out[deg] = out.get(deg, 0) + 1
        return LaurentPoly(out)

    def total_graded_rank(self) -> LaurentPoly:
        out = LaurentPoly.zero()
        for key in sorted(self.blocks):
            out = out + self.graded_rank(*key)
        return out

    def reduce_terms(self, ci: int, bi: int, terms: dict) -> dict:
        dia = self.blocks[(ci, bi)].diagram
        if self.shape.reduced:
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
            return out
        return {lab: c for lab, c in terms.items() if c}

    # -- actions ----------------------------------------------------------

    def left_table(self, ai: int, ci: int, bi: int) -> dict:
        """(ring_lab, mod_lab) -> term map in block (ai, bi)."""
        key = (ai, ci, bi)
        tab = self._left_tables.get(key)
        if tab is not None:
            return tab
        a = self.left_ring.matchings[ai]
        c = self.left_ring.matchings[ci]
        b = self.right_ring.matchings[bi]
        prog = left_action_program(a, c, self.tangle, b)
        tab = {}
        for rlab in self.left_ring.block(ai, ci).labelings:
            for mlab in self.blocks[(ci, bi)].labelings:
                raw = _run_action(prog, rlab, mlab)
                tab[(rlab, mlab)] = self.reduce_terms(ai, bi, raw)
        self._left_tables[key] = tab
        return tab

    def right_table(self, ci: int, bi: int, ai: int) -> dict:
        key = (ci, bi, ai)
        tab = self._right_tables.get(key)
        if tab is not None:
            return tab
        c = self.left_ring.matchings[ci]
        b = self.right_ring.matchings[bi]
        a = self.right_ring.matchings[ai]
        prog = right_action_program(c, self.tangle, b, a)
        tab = {}
        for mlab in self.blocks[(ci, bi)].labelings:
            for rlab in self.right_ring.block(bi, ai).labelings:
                raw = _run_action(prog, mlab, rlab)
                tab[(mlab, rlab)] = self.reduce_terms(ci, ai, raw)
        self._right_tables[key] = tab
        return tab

    def __repr__(self):
        return f"FlatBimodule({self.tangle}, k={self.shape.k})"


@lru_cache(maxsize=None)
def _flat_bimodule_cached(tangle: FlatTangle, k: int, reduced: bool) -> FlatBimodule:
    return FlatBimodule(tangle, k, reduced)


def flat_bimodule(tangle: FlatTangle, k: int, reduced: bool = True) -> FlatBimodule:
    return _flat_bimodule_cached(tangle, k, bool(reduced))


def full_bimodule(tangle: FlatTangle, reduced: bool = True) -> dict:
    """The (A^m, A^n)-bimodule as its dict of k-summands."""
    return {k: flat_bimodule(tangle, k, reduced) for k in k_range(tangle.m, tangle.n)}


# ---------------------------------------------------------------------------
# Contraction programs for the two actions


@dataclass(frozen=True)
class ActionProgram:
    events: tuple
    top_of: tuple        # initial component id per circle of the first factor
    bottom_of: tuple     # ... per circle of the second factor
    final_circle: tuple  # final component id -> target circle index
    target: object       # target ClosedDiagram


def _namespaced(frame: GlueFrame, ns: str) -> dict:
    return {(ns, eid): ((ns, u), (ns, v)) for eid, (u, v, _m) in frame.edges.items()}


def _initial_ids(runner, frame_map, ns):
    out = [None] * len(frame_map)
    for nodes, idx in frame_map.items():
        out[idx] = runner.node_comp[(ns, min(nodes))]
    return out


def _contract(frame1, frame2, middle_pairs):
    """Join frame1 over frame2 and contract middle arcs (frame1 bottom, frame2 top)."""
    edges = {}
    edges.update(_namespaced(frame1, "1"))
    edges.update(_namespaced(frame2, "2"))
    runner = SurgeryRunner(edges)
    dia1, map1 = frame1.diagram()
    dia2, map2 = frame2.diagram()
    top_of = _initial_ids(runner, map1, "1")
    bottom_of = _initial_ids(runner, map2, "2")
    events = []
    for (i, j) in sorted(middle_pairs):
        ev = runner.surger(
            ("1", ("bot", (i, j))),
            ("2", ("top", (i, j))),
            {
                ("join", i): (("1", ("b", i)), ("2", ("t", i))),
                ("join", j): (("1", ("b", j)), ("2", ("t", j))),
            },
        )
        events.append(ev)
    return runner, events, top_of, bottom_of


def _final_key(nodes):
    """(bottom points, top points, free id) of a contracted component.

    Bottom boundary lives on frame 2's bottom line, top boundary on frame 1's
    top line; free circles keep their namespace tag for provenance.
    """
    bpts = frozenset(nd[1][1] for nd in nodes if nd[0] == "2" and nd[1][0] == "b")
    tpts = frozenset(nd[1][1] for nd in nodes if nd[0] == "1" and nd[1][0] == "t")
    frees = sorted((nd[0], nd[1][1]) for nd in nodes if nd[1][0] == "f")
    fid = frees[0] if frees else None
    return bpts, tpts, fid


def _match_final(runner, target_frame, free_rename):
    """Map final component ids to target canonical circle indices."""
    target_dia, target_map = target_frame.diagram()
    lookup = {}
    for nodes, idx in target_map.items():
        bpts = frozenset(nd[1] for nd in nodes if nd[0] == "b")
        tpts = frozenset(nd[1] for nd in nodes if nd[0] == "t")
        fids = sorted(nd[1] for nd in nodes if nd[0] == "f")
        fid = fids[0] if fids else None
        lookup[(bpts, tpts, fid)] = idx
    final = {}
    for cid, nodes in runner.comp_nodes.items():
        bpts, tpts, fid = _final_key(nodes)
        if fid is not None:
            fid = free_rename[fid]
        final[cid] = lookup[(bpts, tpts, fid)]
    return target_dia, final


@lru_cache(maxsize=None)
def left_action_program(a, c, tangle, b) -> ActionProgram:
    """Contract W(a)c W(c)Tb -> W(a)Tb along the arcs of c."""
    frame_ring = GlueFrame(a, None, c)
    frame_mod = GlueFrame(c, tangle, b)
    runner, events, top_of, bottom_of = _contract(frame_ring, frame_mod, c.pairs)
    target_frame = GlueFrame(a, tangle, b)
    free_rename = {("2", fid): fid for fid in range(tangle.free_circles)}
    target, final = _match_final(runner, target_frame, free_rename)
    return ActionProgram(tuple(events), tuple(top_of), tuple(bottom_of), tuple(sorted(final.items())), target)


@lru_cache(maxsize=None)
def right_action_program(c, tangle, b, a) -> ActionProgram:
    """Contract W(c)Tb W(b)a -> W(c)Ta along the arcs of b."""
    frame_mod = GlueFrame(c, tangle, b)
    frame_ring = GlueFrame(b, None, a)
    runner, events, top_of, bottom_of = _contract(frame_mod, frame_ring, b.pairs)
    target_frame = GlueFrame(c, tangle, a)
    free_rename = {("1", fid): fid for fid in range(tangle.free_circles)}
    target, final = _match_final(runner, target_frame, free_rename)
    return ActionProgram(tuple(events), tuple(top_of), tuple(bottom_of), tuple(sorted(final.items())), target)


def _run_action(prog: ActionProgram, lab_top, lab_bottom) -> dict:
    key = {}
    for i, cid in enumerate(prog.top_of):
        key[cid] = lab_top[i]
    for j, cid in enumerate(prog.bottom_of):
        key[cid] = lab_bottom[j]
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


# ---------------------------------------------------------------------------
# Bimodule maps


class BimoduleMap:
    """Blockwise homogeneous map between two bimodules of the same shape."""

    def __init__(self, source: FlatBimodule, target: FlatBimodule, degree: int, matrices: dict):
        if source.shape.m != target.shape.m or source.shape.n != target.shape.n or source.shape.k != target.shape.k:
            raise ArityMismatch("bimodule map requires matching shapes")
        self.source = source
        self.target = target
        self.degree = degree
        self.matrices = matrices  # (ci, bi) -> IntMatrix (target rows x source cols)

    def matrix(self, ci: int, bi: int) -> IntMatrix:
        key = (ci, bi)
        if key not in self.matrices:
            t = len(self.target.block(ci, bi).labelings)
            s = len(self.source.block(ci, bi).labelings)
            self.matrices[key] = IntMatrix.zero(t, s)
        return self.matrices[key]

    @classmethod
    def identity(cls, module: FlatBimodule) -> "BimoduleMap":
        mats = {
            key: IntMatrix.identity(len(blk.labelings))
            for key, blk in module.blocks.items()
        }
        return cls(module, module, 0, mats)

    def compose(self, other: "BimoduleMap") -> "BimoduleMap":
        """self after other."""
        if other.target is not self.source:
            raise ArityMismatch("maps are not composable")
        mats = {}
        for key in self.target.blocks:
            mats[key] = self.matrix(*key) @ other.matrix(*key)
        return BimoduleMap(other.source, self.target, self.degree + other.degree, mats)

    def __eq__(self, other):
        if not isinstance(other, BimoduleMap):
            return NotImplemented
        if self.source is not other.source or self.target is not other.target:
            return False
        keys = set(self.target.blocks)
        return all(self.matrix(*k) == other.matrix(*k) for k in keys)

    def is_homogeneous(self) -> bool:
        for (ci, bi), mat in self.matrices.items():
            sdeg = self.source.block(ci, bi).degrees
            tdeg = self.target.block(ci, bi).degrees
            for (r, col), v in mat.entries.items():
                if v and tdeg[r] != sdeg[col] + self.degree:
                    return False
        return True

    def commutes_with_actions(self) -> bool:
        """Check compatibility with both ring actions on every basis vector."""
        src, tgt = self.source, self.target
        nl = len(src.left_ring.matchings)
        nr = len(src.right_ring.matchings)
        for ci in range(nl):
            for bi in range(nr):
                sblk = src.block(ci, bi)
                for col, mlab in enumerate(sblk.labelings):
                    image = _column_terms(self.matrix(ci, bi), col, tgt.block(ci, bi))
                    for ai in range(nl):
                        for rlab in src.left_ring.block(ai, ci).labelings:
                            lhs = src.left_table(ai, ci, bi)[(rlab, mlab)]
                            lhs_img = _apply_map_terms(self, ai, bi, lhs)
                            rhs = _act_left_terms(tgt, ai, ci, bi, rlab, image)
                            if lhs_img != rhs:
                                return False
                    for ai in range(nr):
                        for rlab in src.right_ring.block(bi, ai).labelings:
                            lhs = src.right_table(ci, bi, ai)[(mlab, rlab)]
                            lhs_img = _apply_map_terms(self, ci, ai, lhs)
                            rhs = _act_right_terms(tgt, ci, bi, ai, rlab, image)
                            if lhs_img != rhs:
                                return False
        return True


def _column_terms(mat: IntMatrix, col: int, blk: BlockBasis) -> dict:
    out = {}
    for (r, c), v in mat.entries.items():
        if c == col and v:
            out[blk.labelings[r]] = v
    return out


def _apply_map_terms(fmap: BimoduleMap, ci, bi, terms: dict) -> dict:
    blk_s = fmap.source.block(ci, bi)
    blk_t = fmap.target.block(ci, bi)
    mat = fmap.matrix(ci, bi)
    out = {}
    for lab, coeff in terms.items():
        col = blk_s.index(lab)
        for (r, c), v in mat.entries.items():
            if c == col and v:
                key = blk_t.labelings[r]
                out[key] = out.get(key, 0) + coeff * v
    return {k: v for k, v in out.items() if v}


def _act_left_terms(module: FlatBimodule, ai, ci, bi, rlab, terms: dict) -> dict:
    tab = module.left_table(ai, ci, bi)
    out = {}
    for mlab, coeff in terms.items():
        for lab, v in tab[(rlab, mlab)].items():
            out[lab] = out.get(lab, 0) + coeff * v
    return {k: v for k, v in out.items() if v}


def _act_right_terms(module: FlatBimodule, ci, bi, ai, rlab, terms: dict) -> dict:
    tab = module.right_table(ci, bi, ai)
    out = {}
    for mlab, coeff in terms.items():
        for lab, v in tab[(mlab, rlab)].items():
            out[lab] = out.get(lab, 0) + coeff * v
    return {k: v for k, v in out.items() if v}


# ---------------------------------------------------------------------------
# Cobordism-induced maps between flat bimodules


@dataclass(frozen=True)
class ArcSurgery:
    """A saddle presented by the tangle components it removes and adds.

    Components are ('arc', (pt, pt)) with canonical tangle boundary points, or
    ('loop', fid).  Endpoint multisets of removed and added must agree.
    """

    removed: tuple
    added: tuple


def _tangle_after(t1: FlatTangle, event) -> FlatTangle:
    if isinstance(event, Birth):
        return FlatTangle(t1.m, t1.n, t1.pairs, t1.free_circles + 1)
    if isinstance(event, Death):
        fid = event.circle
        if not 0 <= fid < t1.free_circles:
            raise MalformedEventSequence(f"no free circle {fid}")
        if fid != t1.free_circles - 1:
            raise MalformedEventSequence("death must remove the last free circle")
        return FlatTangle(t1.m, t1.n, t1.pairs, t1.free_circles - 1)
    if isinstance(event, ArcSurgery):
        pairs = set(t1.pairs)
        frees = t1.free_circles
        removed_pts = []
        for comp in event.removed:
            kind, data = comp
            if kind == "arc":
                pair = tuple(sorted(data))
                if pair not in pairs:
                    raise MalformedEventSequence(f"no arc {pair} in source tangle")
                pairs.discard(pair)
                removed_pts.extend(pair)
            else:
                if not 0 <= data < frees:
                    raise MalformedEventSequence(f"no free circle {data}")
                frees -= 1
        added_pts = []
        for comp in event.added:
            kind, data = comp
            if kind == "arc":
                pairs.add(tuple(sorted(data)))
                added_pts.extend(data)
            else:
                frees += 1
        if sorted(removed_pts) != sorted(added_pts):
            raise MalformedEventSequence("surgery endpoints do not match")
        return FlatTangle(t1.m, t1.n, tuple(sorted(pairs)), frees)
    raise MalformedEventSequence(f"unknown event {event!r}")


def _single_event_map(source: FlatBimodule, event) -> BimoduleMap:
    t1 = source.tangle
    t2 = _tangle_after(t1, event)
    target = flat_bimodule(t2, source.shape.k, source.shape.reduced)
    mats = {}
    for (ci, bi), sblk in source.blocks.items():
        tblk = target.block(ci, bi)
        mat = IntMatrix.zero(len(tblk.labelings), len(sblk.labelings))
        c = source.left_ring.matchings[ci]
        b = source.right_ring.matchings[bi]
        sframe = GlueFrame(c, t1, b)
        tframe = GlueFrame(c, t2, b)
        sdia, smap = sframe.diagram()
        tdia, tmap = tframe.diagram()
        s_key = _circle_keys(sdia)
        t_key = _circle_keys(tdia)

        for col, mlab in enumerate(sblk.labelings):
            out = _apply_event_block(event, t1, t2, sframe, tframe, sdia, tdia, mlab)
            out = target.reduce_terms(ci, bi, out)
            for lab, coeff in out.items():
                row = tblk.index(lab)
                mat.set(row, col, mat.get(row, col) + coeff)
        mats[(ci, bi)] = mat
    degree = -1 if isinstance(event, (Birth, Death)) else 1
    fmap = BimoduleMap(source, target, degree, mats)
    if not fmap.is_homogeneous():
        raise InternalInvariantError("cobordism map is not homogeneous of the stated degree")
    return fmap


def _circle_keys(dia):
    return {
        (c.bottom_points, c.top_points, c.free_id): idx for idx, c in enumerate(dia.circles)
    }


def _spectator_map(sdia, tdia, skip_src, skip_tgt):
    """Match untouched circles between source and target closures."""
    t_lookup = {}
    for idx, c in enumerate(tdia.circles):
        if idx in skip_tgt:
            continue
        t_lookup[(c.bottom_points, c.top_points, c.free_id)] = idx
    out = {}
    for idx, c in enumerate(sdia.circles):
        if idx in skip_src:
            continue
        out[idx] = t_lookup[(c.bottom_points, c.top_points, c.free_id)]
    return out


def _apply_event_block(event, t1, t2, sframe, tframe, sdia, tdia, mlab):
    """Term map of one elementary cobordism on one block labeling."""
    if isinstance(event, Birth):
        new_idx = None
        for idx, c in enumerate(tdia.circles):
            if c.free_id == ("loop", t1.free_circles):
                new_idx = idx
        corr = _spectator_map(sdia, tdia, set(), {new_idx})
        lab = [None] * len(tdia.circles)
        for sidx, tidx in corr.items():
            lab[tidx] = mlab[sidx]
        lab[new_idx] = ONE
        return {tuple(lab): 1}
    if isinstance(event, Death):
        dead = None
        for idx, c in enumerate(sdia.circles):
            if c.free_id == ("loop", event.circle):
                dead = idx
        corr = _spectator_map(sdia, tdia, {dead}, set())
        if mlab[dead] != X:
            return {}
        lab = [None] * len(tdia.circles)
        for sidx, tidx in corr.items():
            lab[tidx] = mlab[sidx]
        return {tuple(lab): 1}
    # ArcSurgery: merge or split through the frames.
    s_circ = _component_circles(sframe, sdia, event.removed, t1)
    t_circ = _component_circles(tframe, tdia, event.added, t2)
    if len(s_circ) == 2 and len(t_circ) == 1:
        c1, c2 = sorted(s_circ)
        (tc,) = t_circ
        corr = _spectator_map(sdia, tdia, {c1, c2}, {tc})
        prod = merge_labels(mlab[c1], mlab[c2])
        if prod is None:
            return {}
        lab = [None] * len(tdia.circles)
        for sidx, tidx in corr.items():
            lab[tidx] = mlab[sidx]
        lab[tc] = prod
        return {tuple(lab): 1}
    if len(s_circ) == 1 and len(t_circ) == 2:
        (sc,) = s_circ
        d1, d2 = sorted(t_circ)
        corr = _spectator_map(sdia, tdia, {sc}, {d1, d2})
        base = [None] * len(tdia.circles)
        for sidx, tidx in corr.items():
            base[tidx] = mlab[sidx]
        out = {}
        pieces = [(ONE, X), (X, ONE)] if mlab[sc] == ONE else [(X, X)]
        for a, b in pieces:
            lab = list(base)
            lab[d1], lab[d2] = a, b
            key = tuple(lab)
            out[key] = out.get(key, 0) + 1
        return out
    raise MalformedEventSequence("surgery must merge two circles or split one")


def _component_circles(frame, dia, comps, tangle):
    """Distinct closure-circle indices met by the given tangle components."""
    _, node_map = frame.diagram()
    by_nodes = {}
    for nodes, idx in node_map.items():
        for nd in nodes:
            by_nodes[nd] = idx
    bfree = list(frame.bottom.free_points)
    tfree = list(frame.top.free_points)
    out = set()
    for kind, data in comps:
        if kind == "loop":
            out.add(by_nodes[("f", data, 0)])
        else:
            (side, i) = sorted(data)[0]
            node = ("b", bfree[i - 1]) if side == "b" else ("t", tfree[i - 1])
            out.add(by_nodes[node])
    return out


def cobordism_bimodule_map(events, t1: FlatTangle, k: int, reduced: bool = True) -> BimoduleMap:
    """Bimodule map induced by a sequence of elementary tangle cobordism events.

    The resulting degree is (#saddles - #births - #deaths), which equals
    (n+m)/2 - chi(S) for the swept surface S.
    """
    source = flat_bimodule(t1, k, reduced)
    fmap = BimoduleMap.identity(source)
    for ev in events:
        step = _single_event_map(fmap.target, ev)
        fmap = step.compose(fmap)
    return fmap


# ---------------------------------------------------------------------------
# Tensor product over the middle ring


@dataclass
class TensorBlock:
    generators: list       # (bi, lab2, lab1, degree)
    relations: IntMatrix   # rows: relations over the generators
    graded_rank: LaurentPoly
    torsion: tuple


class TensorBimodule:
    """F(T2) (x)_{A^s} F(T1), presented by generators and relations."""

    def __init__(self, m2: FlatBimodule, m1: FlatBimodule):
        if m2.shape.n != m1.shape.m or m2.shape.k != m1.shape.k + m1.shape.l:
            raise MiddleMismatch(
                f"middle rings differ: right of T2 is {m2.shape.right_desc}, "
                f"left of T1 is {m1.shape.left_desc}"
            )
        self.m2 = m2
        self.m1 = m1
        self.middle: Ring = build_ring(m2.shape.right_desc)
        self.blocks = {}
        nl = len(m2.left_ring.matchings)
        nr = len(m1.right_ring.matchings)
        for ci in range(nl):
            for ai in range(nr):
                self.blocks[(ci, ai)] = self._build_block(ci, ai)

    def _build_block(self, ci: int, ai: int) -> TensorBlock:
        mid_n = len(self.middle.matchings)
        gens = []
        gen_index = {}
        for bi in range(mid_n):
            blk2 = self.m2.block(ci, bi)
            blk1 = self.m1.block(bi, ai)
            for l2, d2 in zip(blk2.labelings, blk2.degrees):
                for l1, d1 in zip(blk1.labelings, blk1.degrees):
                    gen_index[(bi, l2, l1)] = len(gens)
                    gens.append((bi, l2, l1, d2 + d1))
        rows = []
        for bi in range(mid_n):
            for bj in range(mid_n):
                rblk = self.middle.block(bi, bj)
                for rlab, rdeg in zip(rblk.labelings, rblk.degrees):
                    if bi == bj and rdeg == 0:
                        continue  # idempotents give trivial relations
                    for l2 in self.m2.block(ci, bi).labelings:
                        vr = self.m2.right_table(ci, bi, bj)[(l2, rlab)]
                        for l1 in self.m1.block(bj, ai).labelings:
                            rw = self.m1.left_table(bi, bj, ai)[(rlab, l1)]
                            row = {}
                            for lab, coeff in vr.items():
                                idx = gen_index[(bj, lab, l1)]
                                row[idx] = row.get(idx, 0) + coeff
                            for lab, coeff in rw.items():
                                idx = gen_index[(bi, l2, lab)]
                                row[idx] = row.get(idx, 0) - coeff
                            if any(row.values()):
                                rows.append(row)
        rel = IntMatrix(len(rows), len(gens), {(i, j): v for i, row in enumerate(rows) for j, v in row.items()})
        rank_poly, torsion = self._coker_rank(gens, rel)
        return TensorBlock(gens, rel, rank_poly, torsion)

    @staticmethod
    def _coker_rank(gens, rel: IntMatrix):
        by_degree = {}
        for idx, (_bi, _l2, _l1, deg) in enumerate(gens):
            by_degree.setdefault(deg, []).append(idx)
        rank = {}
        torsion = []
        row_deg = {}
        for (i, j), v in rel.entries.items():
            row_deg.setdefault(i, gens[j][3])
        rows_by_degree = {}
        for i, d in row_deg.items():
            rows_by_degree.setdefault(d, []).append(i)
        for deg, cols in by_degree.items():
            rows = rows_by_degree.get(deg, [])
            sub = rel.submatrix(rows, cols)
            factors, r = smith_normal_form(sub)
            free = len(cols) - r
            if free:
                rank[deg] = free
            torsion.extend(f for f in factors if f > 1)
        return LaurentPoly(rank), tuple(sorted(torsion))

    def graded_rank(self, ci: int, ai: int) -> LaurentPoly:
        return self.blocks[(ci, ai)].graded_rank

    def torsion(self):
        out = []
        for blk in self.blocks.values():
            out.extend(blk.torsion)
        return tuple(sorted(out))


def tensor_over_middle(m2: FlatBimodule, m1: FlatBimodule) -> TensorBimodule:
    return TensorBimodule(m2, m1)


# -- comparison with the geometric composite --------------------------------


@dataclass(frozen=True)
class ComparisonProgram:
    events: tuple
    top_of: tuple
    bottom_of: tuple
    final_circle: tuple   # final cid -> target index, pure platform circles absent
    deleted: tuple        # final cids of closed-up platform circles (forced ONE)
    target: object


def _is_closure_eid(eid) -> bool:
    if eid[0] in ("join", "rw"):
        return True
    _ns, inner = eid
    return isinstance(inner, tuple) and inner[0] in ("vert", "cross")


def _closure_pairing(runner, terminals):
    """Pairing of platform terminals through chains of closure edges.

    Returns (matching dict, terminal -> incident closure edge id).
    """
    adj = {}
    for eid, (u, v) in runner.edges.items():
        if not _is_closure_eid(eid):
            continue
        adj.setdefault(u, []).append((eid, v))
        adj.setdefault(v, []).append((eid, u))
    matching = {}
    term_edge = {}
    for t in terminals:
        if t in matching:
            continue
        edges_here = adj.get(t, [])
        if len(edges_here) != 1:
            raise InternalInvariantError("platform terminal without a unique closure edge")
        eid, cur = edges_here[0]
        term_edge[t] = eid
        while cur not in terminals:
            cand = [(e, o) for e, o in adj[cur] if e != eid]
            if len(cand) != 1:
                raise InternalInvariantError("closure path is not a chain")
            eid, cur = cand[0]
        matching[t] = cur
        matching[cur] = t
        term_edge[cur] = eid
    return matching, term_edge


def _rewire_closures(runner, events, terminals, target_arcs):
    """Surger the amalgamated closure arcs into the composite's closure arcs."""
    counter = 0
    while True:
        matching, term_edge = _closure_pairing(runner, terminals)
        todo = None
        for u, v in target_arcs:
            if matching.get(u) != v:
                todo = (u, v)
                break
        if todo is None:
            return
        u, v = todo
        up, vp = matching[u], matching[v]
        e1, e2 = term_edge[up], term_edge[vp]
        (x1, y1) = runner.edges[e1]
        (x2, y2) = runner.edges[e2]
        r1 = y1 if x1 == up else x1
        r2 = y2 if x2 == vp else x2
        same_comp = runner.node_comp[up] == runner.node_comp[vp]
        use_alternate = False
        if same_comp:
            use_alternate = not _connected_without(runner, r1, r2, {e1, e2})
        if use_alternate:
            add = {
                ("rw", counter, 0): (r1, vp),
                ("rw", counter, 1): (r2, up),
            }
        else:
            add = {
                ("rw", counter, 0): (r1, r2),
                ("rw", counter, 1): (up, vp),
            }
        counter += 1
        events.append(runner.surger(e1, e2, add))


def _connected_without(runner, src, dst, removed):
    adj = {}
    for eid, (u, v) in runner.edges.items():
        if eid in removed:
            continue
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    stack, seen = [src], {src}
    while stack:
        cur = stack.pop()
        if cur == dst:
            return True
        for other in adj.get(cur, ()):
            if other not in seen:
                seen.add(other)
                stack.append(other)
    return False


@lru_cache(maxsize=None)
def composition_program(c, t2, b, t1, a) -> ComparisonProgram:
    """Contract W(c)T2 b W(b) T1 a -> W(c)(T2 T1)a along the arcs of b.

    After the middle contraction the closure arcs of the two frames are
    surgered into the closure arcs of the composite frame; platform circles
    closed up by the double closure are deleted with label ONE forced.
    """
    frame2 = GlueFrame(c, t2, b)
    frame1 = GlueFrame(b, t1, a)
    runner, events, top_of, bottom_of = _contract(frame2, frame1, b.pairs)
    events = list(events)
    composite = compose_flat(t2, t1)
    target_frame = GlueFrame(c, composite, a)
    target_dia, target_map = target_frame.diagram()
    terminals = set()
    for p in list(c.left_platform) + list(c.right_platform):
        terminals.add(("1", ("t", p)))
    for p in list(a.left_platform) + list(a.right_platform):
        terminals.add(("2", ("b", p)))
    target_arcs = []
    for eid, (u, v, _marks) in target_frame.edges.items():
        if eid[0] not in ("vert", "cross"):
            continue
        conv = []
        for nd in (u, v):
            conv.append(("1", nd) if nd[0] == "t" else ("2", nd))
        target_arcs.append(tuple(conv))
    _rewire_closures(runner, events, terminals, target_arcs)
    lookup = {}
    for nodes, idx in target_map.items():
        if any(nd[0] == "f" for nd in nodes):
            continue
        bpts = frozenset(nd[1] for nd in nodes if nd[0] == "b")
        tpts = frozenset(nd[1] for nd in nodes if nd[0] == "t")
        lookup[(bpts, tpts)] = idx
    free_targets = sorted(
        idx for idx, circ in enumerate(target_dia.circles) if circ.free_id is not None
    )
    final = {}
    deleted = []
    free_sources = []
    for cid, nodes in sorted(runner.comp_nodes.items()):
        bpts = frozenset(nd[1][1] for nd in nodes if nd[0] == "2" and nd[1][0] == "b")
        tpts = frozenset(nd[1][1] for nd in nodes if nd[0] == "1" and nd[1][0] == "t")
        if bpts or tpts:
            if (bpts, tpts) not in lookup:
                raise InternalInvariantError("contracted circle has no target counterpart")
            final[cid] = lookup[(bpts, tpts)]
            continue
        # No boundary: either a genuine free circle or a closed-up platform circle.
        eids = _component_edge_ids(runner, nodes)
        if all(_is_closure_eid(e) for e in eids):
            deleted.append(cid)
        else:
            free_sources.append((_free_order_key(nodes), cid))
    free_sources.sort()
    if len(free_sources) != len(free_targets):
        raise InternalInvariantError("free circle count mismatch in composition")
    for (_, cid), idx in zip(free_sources, free_targets):
        final[cid] = idx
    return ComparisonProgram(
        tuple(events), tuple(top_of), tuple(bottom_of),
        tuple(sorted(final.items())), tuple(deleted), target_dia,
    )


def _component_edge_ids(runner, nodes):
    return [eid for eid, (u, v) in runner.edges.items() if u in nodes or v in nodes]


def _free_order_key(nodes):
    """Deterministic ordering key for contracted free circles.

    T2's own free circles first, then T1's, then loops closed up by the
    composition (ordered by their smallest middle point).
    """
    f1 = sorted(nd[1][1] for nd in nodes if nd[0] == "1" and nd[1][0] == "f")
    f2 = sorted(nd[1][1] for nd in nodes if nd[0] == "2" and nd[1][0] == "f")
    if f1:
        return (0, f1[0])
    if f2:
        return (1, f2[0])
    mids = sorted(nd[1][1] for nd in nodes if nd[1][0] in ("b", "t"))
    return (2, mids[0] if mids else 0)


def composition_comparison(m2: FlatBimodule, m1: FlatBimodule):
    """Compare the algebraic tensor with the geometric composite bimodule.

    Returns (tensor, composite_module, report) where report carries per-block
    graded ranks and whether the induced comparison map is unimodular.
    """
    tensor = tensor_over_middle(m2, m1)
    composite = compose_flat(m2.tangle, m1.tangle)
    direct = flat_bimodule(composite, m1.shape.k, m1.shape.reduced)
    ranks_match = True
    unimodular = True
    details = []
    for (ci, ai), tblock in sorted(tensor.blocks.items()):
        dblock_rank = direct.graded_rank(ci, ai)
        ok_rank = tblock.graded_rank == dblock_rank
        ranks_match &= ok_rank
        ok_uni = _comparison_unimodular(tensor, direct, ci, ai)
        unimodular &= ok_uni
        details.append(((ci, ai), ok_rank, ok_uni))
    report = {
        "ranks_match": ranks_match,
        "comparison_unimodular": unimodular,
        "torsion": tensor.torsion(),
        "details": details,
    }
    return tensor, direct, report


def _comparison_unimodular(tensor: TensorBimodule, direct: FlatBimodule, ci: int, ai: int) -> bool:
    """Induced map (generators mod relations) -> direct block is a Z-isomorphism."""
    tblock = tensor.blocks[(ci, ai)]
    dblk = direct.block(ci, ai)
    c = tensor.m2.left_ring.matchings[ci]
    a = tensor.m1.right_ring.matchings[ai]
    # Entries of mu on generators.
    mu = IntMatrix.zero(len(dblk.labelings), len(tblock.generators))
    for col, (bi, l2, l1, deg) in enumerate(tblock.generators):
        b = tensor.middle.matchings[bi]
        prog = composition_program(c, tensor.m2.tangle, b, tensor.m1.tangle, a)
        out = _run_comparison(prog, l2, l1)
        out = direct.reduce_terms(ci, ai, out)
        for lab, coeff in out.items():
            row = dblk.index(lab)
            mu.set(row, col, mu.get(row, col) + coeff)
    # Relations must map to zero.
    rel = tblock.relations
    if not (mu @ rel.transpose()).is_zero():
        return False
    # Per degree: [mu | relations] must hit everything with unit cokernel,
    # i.e. the stacked map gens -> direct (+) gens/rel is onto with the
    # relation quotient exact.  Equivalent practical check: Smith form of mu
    # restricted to each degree, modulo the relation image, is square and unit.
    gens_by_degree = {}
    for idx, g in enumerate(tblock.generators):
        gens_by_degree.setdefault(g[3], []).append(idx)
    dcols_by_degree = {}
    for idx, deg in enumerate(dblk.degrees):
        dcols_by_degree.setdefault(deg, []).append(idx)
    rel_rows_by_degree = {}
    for (i, j), v in rel.entries.items():
        rel_rows_by_degree.setdefault(tblock.generators[j][3], set()).add(i)
    from .intlinalg import smith_normal_form_with_transforms

    for deg in set(gens_by_degree) | set(dcols_by_degree):
        gcols = gens_by_degree.get(deg, [])
        drows = dcols_by_degree.get(deg, [])
        rrows = sorted(rel_rows_by_degree.get(deg, ()))
        sub_mu = mu.submatrix(drows, gcols)
        sub_rel = rel.submatrix(rrows, gcols)
        # Quotient Q = Z^g / span(relation rows).  With U sub_rel V = D, the
        # coordinates z = V^T x present the row span as span{d_i e_i}, so Q is
        # free iff all d_i = 1, and mu induces the matrix (sub_mu V^-T) on the
        # trailing coordinates.  Isomorphism onto Z^d needs that square block
        # unimodular.
        factors, r0, _v, v_inv = smith_normal_form_with_transforms(sub_rel)
        if any(f != 1 for f in factors):
            return False
        if len(gcols) - r0 != len(drows):
            return False
        induced_full = sub_mu @ v_inv.transpose()
        induced = induced_full.submatrix(range(len(drows)), range(r0, len(gcols)))
        ifac, irank = smith_normal_form(induced)
        if irank != len(drows) or any(f != 1 for f in ifac):
            return False
    return True


def _run_comparison(prog: ComparisonProgram, lab_top, lab_bottom) -> dict:
    key = {}
    for i, cid in enumerate(prog.top_of):
        key[cid] = lab_top[i]
    for j, cid in enumerate(prog.bottom_of):
        key[cid] = lab_bottom[j]
    terms = run_program(prog.events, {frozenset(key.items()): 1})
    final = dict(prog.final_circle)
    deleted = set(prog.deleted)
    ncirc = len(prog.target.circles)
    out = {}
    for tkey, coeff in terms.items():
        lab = [None] * ncirc
        ok = True
        for cid, l in tkey:
            if cid in deleted:
                if l == X:
                    ok = False
                    break
                continue
            lab[final[cid]] = l
        if not ok:
            continue
        lab = tuple(lab)
        out[lab] = out.get(lab, 0) + coeff
    return out
