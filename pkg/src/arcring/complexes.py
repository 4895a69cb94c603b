"""Tangle diagrams, cubes of resolutions, bigraded homology, and moves.

A tangle diagram is a word of tokens (cup P | cap P | cross P over|under)
read bottom to top.  For a crossing written "over" the strand running from
bottom position P to top position P+1 is the over-strand, and its
0-smoothing is the identity pair; "under" swaps the roles, so mirroring a
diagram swaps every token's chirality.

The complex of a diagram with x negative and y positive crossings is the
total complex of the resolution cube, with vertex r placed in cohomological
degree |r| with internal shift {-|r|}, then shifted by [x]{2x - y} where [r]
lowers cohomological degree by r.  Cube edges carry the sign
(-1)^(number of 1-bits before the flipped crossing).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import lru_cache

from .errors import (
    InternalInvariantError,
    MiddleMismatch,
    MoveNotApplicable,
    NotAComplex,
    OrientationInconsistent,
    OrientationMissing,
    StrandCountError,
    TangleSyntaxError,
)
from .intlinalg import AbelianGroupSummary, IntMatrix, homology_at, smith_normal_form, smith_normal_form_with_transforms
from .laurent import LaurentPoly
from .planar import CircleType, FlatTangle, GlueFrame, glue
from .bimodules import FlatBimodule, flat_bimodule, k_range
from .tqft import ONE, X, merge_labels


# ---------------------------------------------------------------------------
# Diagrams and parsing


@dataclass(frozen=True)
class TangleDiagram:
    """A tangle word with optional boundary orientations."""

    n: int
    m: int
    tokens: tuple
    orient_bottom: tuple | None = None
    orient_top: tuple | None = None

    def __post_init__(self):
        count = self.n
        for idx, tok in enumerate(self.tokens):
            kind, pos = tok[0], tok[1]
            if kind == "cup":
                if not 1 <= pos <= count + 1:
                    raise StrandCountError(f"cup {pos} out of range with {count} strands", idx + 1)
                count += 2
            elif kind == "cap":
                if count < 2 or not 1 <= pos <= count - 1:
                    raise StrandCountError(f"cap {pos} out of range with {count} strands", idx + 1)
                count -= 2
            elif kind == "cross":
                if count < 2 or not 1 <= pos <= count - 1:
                    raise StrandCountError(f"cross {pos} out of range with {count} strands", idx + 1)
            else:
                raise TangleSyntaxError(f"unknown token {tok!r}", idx + 1)
        if count != self.m:
            raise StrandCountError(f"word ends with {count} strands, expected m={self.m}")
        if self.orient_bottom is not None and len(self.orient_bottom) != self.n:
            raise OrientationInconsistent("bottom orientation length mismatch")
        if self.orient_top is not None and len(self.orient_top) != self.m:
            raise OrientationInconsistent("top orientation length mismatch")

    @property
    def crossings(self):
        return tuple(i for i, tok in enumerate(self.tokens) if tok[0] == "cross")

    @property
    def is_closed(self) -> bool:
        return self.m == 0 and self.n == 0

    def mirror(self) -> "TangleDiagram":
        swapped = tuple(
            (t[0], t[1], "under" if t[2] == "over" else "over") if t[0] == "cross" else t
            for t in self.tokens
        )
        return replace(self, tokens=swapped)


def parse_diagram(text: str) -> TangleDiagram:
    """Parse the tangle text format (one token per line, '#' comments)."""
    n = m = None
    tokens = []
    orient_bottom = orient_top = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "tangle":
            try:
                fields = dict(p.split("=", 1) for p in parts[1:])
                n, m = int(fields["n"]), int(fields["m"])
            except (ValueError, KeyError):
                raise TangleSyntaxError("malformed header, expected 'tangle n=<int> m=<int>'", lineno)
            continue
        if parts[0] == "orient":
            try:
                fields = dict(p.split("=", 1) for p in parts[1:])
            except ValueError:
                raise TangleSyntaxError("malformed orient line", lineno)
            if "bottom" in fields:
                orient_bottom = _parse_signs(fields["bottom"], lineno)
            if "top" in fields:
                orient_top = _parse_signs(fields["top"], lineno)
            continue
        if parts[0] in ("cup", "cap"):
            if len(parts) != 2 or not parts[1].isdigit():
                raise TangleSyntaxError(f"expected '{parts[0]} <pos>'", lineno)
            tokens.append((parts[0], int(parts[1])))
            continue
        if parts[0] == "cross":
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in ("over", "under"):
                raise TangleSyntaxError("expected 'cross <pos> over|under'", lineno)
            tokens.append(("cross", int(parts[1]), parts[2]))
            continue
        raise TangleSyntaxError(f"unknown directive {parts[0]!r}", lineno)
    if n is None:
        raise TangleSyntaxError("missing 'tangle n=... m=...' header")
    try:
        return TangleDiagram(n, m, tuple(tokens), orient_bottom, orient_top)
    except TangleSyntaxError:
        raise
    except OrientationInconsistent:
        raise


def _parse_signs(text: str, lineno: int):
    out = []
    for ch in text:
        if ch in "+":
            out.append(1)
        elif ch == "-":
            out.append(-1)
        else:
            raise TangleSyntaxError(f"bad orientation character {ch!r}", lineno)
    return tuple(out)


# ---------------------------------------------------------------------------
# Word wirings


def _wiring(tokens, resolution):
    """Edge-level wiring of a resolved word.

    resolution maps token index -> 'id' | 'cupcap' for every cross token.
    Returns (edges, counts) with nodes (level, position).
    """
    edges = {}
    count = None

    def passthrough(level, j, j2):
        edges[("pass", level, j)] = ((level, j), (level + 1, j2))

    counts = []

    def build(n0):
        nonlocal count
        count = n0
        counts.append(count)
        for level, tok in enumerate(tokens):
            kind, pos = tok[0], tok[1]
            if kind == "cup":
                for j in range(1, count + 1):
                    passthrough(level, j, j if j < pos else j + 2)
                edges[("cupe", level)] = ((level + 1, pos), (level + 1, pos + 1))
                count += 2
            elif kind == "cap":
                edges[("cape", level)] = ((level, pos), (level, pos + 1))
                for j in range(1, count + 1):
                    if j in (pos, pos + 1):
                        continue
                    passthrough(level, j, j if j < pos else j - 2)
                count -= 2
            else:
                smoothing = resolution[level]
                if smoothing == "id":
                    for j in range(1, count + 1):
                        passthrough(level, j, j)
                else:
                    edges[("cape", level)] = ((level, pos), (level, pos + 1))
                    edges[("cupe", level)] = ((level + 1, pos), (level + 1, pos + 1))
                    for j in range(1, count + 1):
                        if j in (pos, pos + 1):
                            continue
                        passthrough(level, j, j)
            counts.append(count)

    return edges, build


@dataclass(frozen=True)
class ResolvedWord:
    """Canonical flat tangle of a resolved word plus surgery bookkeeping."""

    tangle: FlatTangle
    loop_nodes: tuple        # node frozensets, indexed by free-circle id
    cross_comps: tuple       # (token index, component keys of the smoothing)


def resolve_word(diagram: TangleDiagram, resolution: dict) -> ResolvedWord:
    tokens = diagram.tokens
    edges, build = _wiring(tokens, resolution)
    build(diagram.n)
    levels = len(tokens)
    adj = {}
    for i in range(1, diagram.n + 1):
        adj.setdefault((0, i), [])
    for j in range(1, diagram.m + 1):
        adj.setdefault((levels, j), [])
    for eid, (u, v) in edges.items():
        adj.setdefault(u, []).append((eid, v))
        adj.setdefault(v, []).append((eid, u))
    comp_of = {}
    comps = []
    for node in sorted(adj):
        if node in comp_of:
            continue
        stack, nodes = [node], set()
        while stack:
            cur = stack.pop()
            if cur in nodes:
                continue
            nodes.add(cur)
            for _e, other in adj[cur]:
                if other not in nodes:
                    stack.append(other)
        idx = len(comps)
        comps.append(frozenset(nodes))
        for nd in nodes:
            comp_of[nd] = idx
    # Boundary classification.
    pairs = []
    comp_key = {}
    loops = []
    for idx, nodes in enumerate(comps):
        boundary = []
        for (level, p) in nodes:
            if level == 0 and p <= diagram.n:
                boundary.append(("b", p))
            if level == levels:
                boundary.append(("t", p))
        if len(boundary) == 2:
            pair = tuple(sorted(boundary))
            pairs.append(pair)
            comp_key[idx] = ("arc", pair)
        elif len(boundary) == 0:
            loops.append((min(nodes), idx))
        else:
            raise InternalInvariantError("wiring component with odd boundary")
    loops.sort()
    loop_nodes = []
    for fid, (_mn, idx) in enumerate(loops):
        comp_key[idx] = ("loop", fid)
        loop_nodes.append(comps[idx])
    tangle = FlatTangle(diagram.m, diagram.n, tuple(sorted(pairs)), len(loops))
    cross_comps = []
    for level in diagram.crossings:
        smoothing = resolution[level]
        if smoothing == "id":
            pos = tokens[level][1]
            eids = [("pass", level, pos), ("pass", level, pos + 1)]
        else:
            eids = [("cape", level), ("cupe", level)]
        keys = []
        for eid in eids:
            u, _v = edges[eid]
            keys.append(comp_key[comp_of[u]])
        cross_comps.append((level, tuple(keys)))
    return ResolvedWord(tangle, tuple(loop_nodes), tuple(cross_comps))


# ---------------------------------------------------------------------------
# Orientations and crossing signs


def auto_orient(diagram: TangleDiagram) -> TangleDiagram:
    """Fill in boundary orientations; unseeded components flow downward first."""
    bottom, top, _signs = _orient(diagram)
    return replace(diagram, orient_bottom=bottom, orient_top=top)


def crossing_signs(diagram: TangleDiagram):
    """x(D), y(D): the numbers of negative and positive crossings."""
    _b, _t, signs = _orient(diagram)
    x = sum(1 for s in signs.values() if s < 0)
    y = sum(1 for s in signs.values() if s > 0)
    return x, y


def _orient(diagram: TangleDiagram):
    tokens = diagram.tokens
    edges = {}
    count = diagram.n
    for level, tok in enumerate(tokens):
        kind, pos = tok[0], tok[1]
        if kind == "cup":
            for j in range(1, count + 1):
                edges[("pass", level, j)] = ((level, j), (level + 1, j if j < pos else j + 2), 1)
            edges[("cupe", level)] = ((level + 1, pos), (level + 1, pos + 1), -1)
            count += 2
        elif kind == "cap":
            edges[("cape", level)] = ((level, pos), (level, pos + 1), -1)
            for j in range(1, count + 1):
                if j in (pos, pos + 1):
                    continue
                edges[("pass", level, j)] = ((level, j), (level + 1, j if j < pos else j - 2), 1)
            count -= 2
        else:
            edges[("xa", level)] = ((level, pos), (level + 1, pos + 1), 1)
            edges[("xb", level)] = ((level, pos + 1), (level + 1, pos), 1)
            for j in range(1, count + 1):
                if j in (pos, pos + 1):
                    continue
                edges[("pass", level, j)] = ((level, j), (level + 1, j), 1)
    adj = {}
    for u, v, rel in edges.values():
        adj.setdefault(u, []).append((v, rel))
        adj.setdefault(v, []).append((u, rel))

    flow = {}

    def propagate(node, value):
        stack = [(node, value)]
        while stack:
            cur, val = stack.pop()
            if cur in flow:
                if flow[cur] != val:
                    raise OrientationInconsistent("orientations conflict along a strand")
                continue
            flow[cur] = val
            for other, rel in adj.get(cur, ()):
                stack.append((other, val * rel))

    if diagram.orient_bottom is not None:
        for i, sign in enumerate(diagram.orient_bottom, start=1):
            propagate((0, i), sign)
    if diagram.orient_top is not None:
        for j, sign in enumerate(diagram.orient_top, start=1):
            propagate((len(tokens), j), sign)
    for node in sorted(adj):
        if node not in flow:
            propagate(node, -1)

    signs = {}
    for level, tok in enumerate(tokens):
        if tok[0] != "cross":
            continue
        pos = tok[1]
        slash = flow[(level, pos)]
        back = flow[(level, pos + 1)]
        u = (1, 1) if slash > 0 else (-1, -1)
        v = (-1, 1) if back > 0 else (1, -1)
        if tok[2] == "under":
            u, v = v, u
        signs[level] = 1 if (u[0] * v[1] - u[1] * v[0]) > 0 else -1
    bottom = tuple(flow[(0, i)] for i in range(1, diagram.n + 1))
    top = tuple(flow[(len(tokens), j)] for j in range(1, diagram.m + 1))
    return bottom, top, signs


# ---------------------------------------------------------------------------
# Complexes of bimodule summands


@dataclass(frozen=True)
class Summand:
    tangle: FlatTangle
    qshift: int

    def module(self, k: int, reduced: bool = True) -> FlatBimodule:
        return flat_bimodule(self.tangle, k, reduced)


class BimoduleComplex:
    """Bounded complex of direct sums of shifted flat bimodules, at one k."""

    def __init__(self, m, n, k, terms, diffs, reduced=True):
        self.m, self.n, self.k, self.reduced = m, n, k, reduced
        self.terms = {i: tuple(ts) for i, ts in terms.items() if ts}
        self.diffs = dict(diffs)
        self._basis_cache = {}

    @classmethod
    def single(cls, tangle: FlatTangle, k: int, qshift: int = 0, degree: int = 0, reduced=True):
        return cls(tangle.m, tangle.n, k, {degree: (Summand(tangle, qshift),)}, {}, reduced)

    def degrees(self):
        return sorted(self.terms)

    def basis(self, i):
        """List of (summand_idx, ci, bi, labeling, qdeg) for term i."""
        if i in self._basis_cache:
            return self._basis_cache[i]
        out = []
        for s_idx, s in enumerate(self.terms.get(i, ())):
            mod = s.module(self.k, self.reduced)
            for ci, bi, lab, deg in mod.basis():
                out.append((s_idx, ci, bi, lab, deg + s.qshift))
        self._basis_cache[i] = out
        return out

    def rank(self, i):
        return len(self.basis(i))

    def diff(self, i) -> IntMatrix:
        if i in self.diffs:
            return self.diffs[i]
        return IntMatrix.zero(self.rank(i + 1), self.rank(i))

    def validate(self):
        for i in self.degrees():
            d = self.diff(i)
            if d.rows != self.rank(i + 1) or d.cols != self.rank(i):
                raise NotAComplex("differential shape mismatch")
            basis_s, basis_t = self.basis(i), self.basis(i + 1)
            for (r, c), v in d.entries.items():
                if v and basis_t[r][4] != basis_s[c][4]:
                    raise NotAComplex("differential is not of quantum degree 0")
            d2 = self.diff(i + 1) @ d
            if not d2.is_zero():
                raise NotAComplex("d . d != 0")
        return True

    def homology(self):
        """Bigraded homology: {(i, j): AbelianGroupSummary}, trivial groups omitted."""
        out = {}
        degs = self.degrees()
        if not degs:
            return out
        for i in range(min(degs), max(degs) + 1):
            basis_i = self.basis(i)
            if not basis_i:
                continue
            by_q = {}
            for idx, (_s, _c, _b, _l, q) in enumerate(basis_i):
                by_q.setdefault(q, []).append(idx)
            basis_prev = self.basis(i - 1)
            basis_next = self.basis(i + 1)
            d_in = self.diff(i - 1)
            d_out = self.diff(i)
            prev_by_q = {}
            for idx, (_s, _c, _b, _l, q) in enumerate(basis_prev):
                prev_by_q.setdefault(q, []).append(idx)
            next_by_q = {}
            for idx, (_s, _c, _b, _l, q) in enumerate(basis_next):
                next_by_q.setdefault(q, []).append(idx)
            for q, cols in by_q.items():
                din = d_in.submatrix(cols, prev_by_q.get(q, []))
                dout = d_out.submatrix(next_by_q.get(q, []), cols)
                h = homology_at(din, dout)
                if not h.is_trivial:
                    out[(i, q)] = h
        return out

    def total_graded_rank(self, i) -> LaurentPoly:
        out = {}
        for _s, _c, _b, _l, q in self.basis(i):
            out[q] = out.get(q, 0) + 1
        return LaurentPoly(out)


# ---------------------------------------------------------------------------
# The cube of resolutions


def _smoothing_of(token, bit):
    # "over": 0-smoothing is the identity pair; "under" is the mirror.
    if token[2] == "over":
        return "id" if bit == 0 else "cupcap"
    return "cupcap" if bit == 0 else "id"


@lru_cache(maxsize=None)
def _resolved(diagram: TangleDiagram, bits: tuple) -> ResolvedWord:
    crossings = diagram.crossings
    resolution = {level: _smoothing_of(diagram.tokens[level], bit) for level, bit in zip(crossings, bits)}
    return resolve_word(diagram, resolution)


def _circle_index_of_component(frame: GlueFrame, dia, key):
    if key[0] == "loop":
        for idx, c in enumerate(dia.circles):
            if c.free_id == ("loop", key[1]):
                return idx
        raise InternalInvariantError("loop not found in closure")
    (side, i) = sorted(key[1])[0]
    if side == "b":
        pt = list(frame.bottom.free_points)[i - 1]
        for idx, c in enumerate(dia.circles):
            if pt in c.bottom_points:
                return idx
    else:
        pt = list(frame.top.free_points)[i - 1]
        for idx, c in enumerate(dia.circles):
            if pt in c.top_points:
                return idx
    raise InternalInvariantError("arc not found in closure")


def _loop_fid_maps(src: ResolvedWord, tgt: ResolvedWord):
    tgt_by_nodes = {nodes: fid for fid, nodes in enumerate(tgt.loop_nodes)}
    out = {}
    for fid, nodes in enumerate(src.loop_nodes):
        if nodes in tgt_by_nodes:
            out[fid] = tgt_by_nodes[nodes]
    return out


def saddle_block_table(src: ResolvedWord, tgt: ResolvedWord, level: int, c, b, k: int, reduced=True):
    """Per-block table of the saddle at crossing `level`: src labeling -> terms."""
    src_mod = flat_bimodule(src.tangle, k, reduced)
    tgt_mod = flat_bimodule(tgt.tangle, k, reduced)
    ci = src_mod.left_ring.index_of(c)
    bi = src_mod.right_ring.index_of(b)
    sblk = src_mod.block(ci, bi)
    tblk = tgt_mod.block(ci, bi)
    sframe = GlueFrame(c, src.tangle, b)
    tframe = GlueFrame(c, tgt.tangle, b)
    sdia, tdia = sblk.diagram, tblk.diagram

    src_keys = dict(src.cross_comps)[level]
    tgt_keys = dict(tgt.cross_comps)[level]
    active_src = sorted({_circle_index_of_component(sframe, sdia, key) for key in src_keys})
    active_tgt = sorted({_circle_index_of_component(tframe, tdia, key) for key in tgt_keys})

    fid_map = _loop_fid_maps(src, tgt)
    t_lookup = {}
    for idx, circ in enumerate(tdia.circles):
        if idx in active_tgt:
            continue
        t_lookup[(circ.bottom_points, circ.top_points, circ.free_id)] = idx
    corr = {}
    for idx, circ in enumerate(sdia.circles):
        if idx in active_src:
            continue
        fid = circ.free_id
        if fid is not None:
            fid = ("loop", fid_map[fid[1]])
        corr[idx] = t_lookup[(circ.bottom_points, circ.top_points, fid)]

    table = {}
    for mlab in sblk.labelings:
        base = [None] * len(tdia.circles)
        for sidx, tidx in corr.items():
            base[tidx] = mlab[sidx]
        out = {}
        if len(active_src) == 2 and len(active_tgt) == 1:
            prod = merge_labels(mlab[active_src[0]], mlab[active_src[1]])
            if prod is not None:
                lab = list(base)
                lab[active_tgt[0]] = prod
                out[tuple(lab)] = 1
        elif len(active_src) == 1 and len(active_tgt) == 2:
            pieces = [(ONE, X), (X, ONE)] if mlab[active_src[0]] == ONE else [(X, X)]
            for aa, bb in pieces:
                lab = list(base)
                lab[active_tgt[0]], lab[active_tgt[1]] = aa, bb
                key = tuple(lab)
                out[key] = out.get(key, 0) + 1
        else:
            raise InternalInvariantError("saddle must merge two circles or split one")
        table[mlab] = tgt_mod.reduce_terms(ci, bi, out)
    return table, sblk, tblk


def cube_complex_k(diagram: TangleDiagram, k: int, reduced=True) -> BimoduleComplex:
    """The complex of the resolution cube for one platform size k."""
    crossings = diagram.crossings
    c = len(crossings)
    if c and (diagram.orient_bottom is None and diagram.orient_top is None) and diagram.n + diagram.m > 0:
        raise OrientationMissing("crossing signs need boundary orientations (use auto_orient)")
    x, y = crossing_signs(diagram) if c else (0, 0)
    vertices = {}
    for bits in itertools.product((0, 1), repeat=c):
        vertices[bits] = _resolved(diagram, bits)
    # Terms grouped by cohomological degree |r| - x, in lex order of bits.
    terms = {}
    positions = {}
    for bits in sorted(vertices):
        w = sum(bits)
        i = w - x
        summand = Summand(vertices[bits].tangle, -w + 2 * x - y)
        positions[bits] = (i, len(terms.setdefault(i, [])))
        terms[i].append(summand)
    cx = BimoduleComplex(diagram.m, diagram.n, k, terms, {}, reduced)
    # Differentials.
    offsets = {}
    for i in cx.degrees():
        offs, total = [], 0
        for s in cx.terms[i]:
            offs.append(total)
            total += _summand_rank(s, k, reduced)
        offsets[i] = offs
    diffs = {}
    for bits in sorted(vertices):
        src = vertices[bits]
        i, s_pos = positions[bits]
        for ax, level in enumerate(crossings):
            if bits[ax] == 1:
                continue
            tbits = bits[:ax] + (1,) + bits[ax + 1 :]
            tgt = vertices[tbits]
            _i2, t_pos = positions[tbits]
            sign = (-1) ** sum(bits[:ax])
            mat = diffs.setdefault(i, IntMatrix.zero(cx.rank(i + 1), cx.rank(i)))
            _add_saddle_entries(
                mat, diagram, src, tgt, level, k, reduced,
                offsets[i][s_pos], offsets[i + 1][t_pos], sign,
            )
    cx.diffs = diffs
    cx.validate()
    return cx


def _summand_rank(s: Summand, k, reduced):
    return sum(1 for _ in s.module(k, reduced).basis())


def _add_saddle_entries(mat, diagram, src, tgt, level, k, reduced, col_off, row_off, sign):
    src_mod = flat_bimodule(src.tangle, k, reduced)
    tgt_mod = flat_bimodule(tgt.tangle, k, reduced)
    col = col_off
    scol = {}
    for ci, bi, lab, _deg in src_mod.basis():
        scol[(ci, bi, lab)] = col
        col += 1
    row = row_off
    trow = {}
    for ci, bi, lab, _deg in tgt_mod.basis():
        trow[(ci, bi, lab)] = row
        row += 1
    for ci, cm in enumerate(src_mod.left_ring.matchings):
        for bi, bm in enumerate(src_mod.right_ring.matchings):
            if not src_mod.block(ci, bi).labelings:
                continue
            table, _sblk, _tblk = saddle_block_table(src, tgt, level, cm, bm, k, reduced)
            for mlab, terms in table.items():
                c0 = scol[(ci, bi, mlab)]
                for lab, coeff in terms.items():
                    r0 = trow[(ci, bi, lab)]
                    mat.set(r0, c0, mat.get(r0, c0) + sign * coeff)


class TangleComplexes:
    """All k-summands of the complex of a diagram, with aggregated homology."""

    def __init__(self, diagram: TangleDiagram, reduced=True):
        self.diagram = diagram
        if diagram.crossings and diagram.orient_bottom is None and diagram.orient_top is None:
            diagram = auto_orient(diagram)
            self.diagram = diagram
        self.pieces = {k: cube_complex_k(diagram, k, reduced) for k in k_range(diagram.m, diagram.n)}

    def homology(self):
        out = {}
        for piece in self.pieces.values():
            for key, summary in piece.homology().items():
                out[key] = _direct_sum(out[key], summary) if key in out else summary
        return out


def cube_complex(diagram: TangleDiagram, k: int | None = None, reduced=True):
    """Complex of the diagram: one k-piece, or all pieces when k is omitted."""
    if k is not None:
        d = diagram
        if diagram.crossings and diagram.orient_bottom is None and diagram.orient_top is None:
            d = auto_orient(diagram)
        return cube_complex_k(d, k, reduced)
    return TangleComplexes(diagram, reduced)


def _direct_sum(a: AbelianGroupSummary, b: AbelianGroupSummary) -> AbelianGroupSummary:
    torsion = list(a.torsion) + list(b.torsion)
    if not torsion:
        return AbelianGroupSummary(a.free_rank + b.free_rank, ())
    diag = IntMatrix(len(torsion), len(torsion), {(i, i): t for i, t in enumerate(torsion)})
    factors, _r = smith_normal_form(diag)
    return AbelianGroupSummary(a.free_rank + b.free_rank, tuple(f for f in factors if f > 1))


def homology(complex_like):
    """Bigraded homology of a BimoduleComplex, TangleComplexes, or RawComplex."""
    return complex_like.homology()


# ---------------------------------------------------------------------------
# Chain maps, delooping, and Gaussian elimination


class ChainMap:
    """Degree-0-in-i chain map between complexes, as matrices per degree."""

    def __init__(self, source, target, mats, qdegree=0):
        self.source = source
        self.target = target
        self.mats = dict(mats)
        self.qdegree = qdegree

    def mat(self, i) -> IntMatrix:
        if i in self.mats:
            return self.mats[i]
        return IntMatrix.zero(self.target.rank(i), self.source.rank(i))

    def compose(self, other: "ChainMap") -> "ChainMap":
        degs = set(self.mats) | set(other.mats)
        return ChainMap(
            other.source,
            self.target,
            {i: self.mat(i) @ other.mat(i) for i in degs},
            self.qdegree + other.qdegree,
        )

    def is_chain_map(self) -> bool:
        degs = set(self.source.degrees()) | set(self.target.degrees())
        for i in sorted(degs):
            lhs = self.target.diff(i) @ self.mat(i)
            rhs = self.mat(i + 1) @ self.source.diff(i)
            if lhs != rhs:
                return False
        return True

    @classmethod
    def identity(cls, cx) -> "ChainMap":
        return cls(cx, cx, {i: IntMatrix.identity(cx.rank(i)) for i in cx.degrees()})


class Homotopy:
    """Collection of maps h^i: C^i -> C^{i-1}."""

    def __init__(self, cx, mats):
        self.cx = cx
        self.mats = dict(mats)

    def mat(self, i) -> IntMatrix:
        if i in self.mats:
            return self.mats[i]
        return IntMatrix.zero(self.cx.rank(i - 1), self.cx.rank(i))


def homotopy_defect(f: ChainMap, g: ChainMap, h: Homotopy) -> bool:
    """Check id - g.f == d h + h d on the source complex of f."""
    cx = f.source
    degs = set(cx.degrees()) | set(h.mats)
    for i in sorted(degs):
        n = cx.rank(i)
        lhs = IntMatrix.identity(n) - (g.mat(i) @ f.mat(i))
        rhs = (cx.diff(i - 1) @ h.mat(i)) + (h.mat(i + 1) @ cx.diff(i))
        if lhs != rhs:
            return False
    return True


@dataclass
class Retraction:
    """Strong deformation retract data: f g = id, id - g f = d h + h d."""

    f: ChainMap
    g: ChainMap
    h: Homotopy

    def verify(self) -> bool:
        if not (self.f.is_chain_map() and self.g.is_chain_map()):
            return False
        for i in set(self.f.target.degrees()):
            n = self.f.target.rank(i)
            if (self.f.mat(i) @ self.g.mat(i)) != IntMatrix.identity(n):
                return False
        return homotopy_defect(self.f, self.g, self.h)


def _identity_retraction(cx) -> Retraction:
    ident = ChainMap.identity(cx)
    return Retraction(ident, ident, Homotopy(cx, {}))


def deloop_once(cx: BimoduleComplex):
    """Split off the last free circle of some summand as two shifted copies.

    Returns (new complex, iso retraction) or None if no summand has a circle.
    """
    target_loc = None
    for i in cx.degrees():
        for s_idx, s in enumerate(cx.terms[i]):
            if s.tangle.free_circles:
                target_loc = (i, s_idx)
                break
        if target_loc:
            break
    if target_loc is None:
        return None
    i0, s0 = target_loc
    s = cx.terms[i0][s0]
    smaller = FlatTangle(s.tangle.m, s.tangle.n, s.tangle.pairs, s.tangle.free_circles - 1)
    new_terms = dict(cx.terms)
    ts = list(new_terms[i0])
    ts[s0 : s0 + 1] = [Summand(smaller, s.qshift - 1), Summand(smaller, s.qshift + 1)]
    new_terms[i0] = tuple(ts)
    new_cx = BimoduleComplex(cx.m, cx.n, cx.k, new_terms, {}, cx.reduced)
    # Change of basis: phi old -> new, psi new -> old.
    fid = ("loop", s.tangle.free_circles - 1)
    old_basis = cx.basis(i0)
    new_basis = new_cx.basis(i0)
    new_index = {key: r for r, key in enumerate(_basis_keys(new_basis))}
    phi = IntMatrix.zero(len(new_basis), len(old_basis))
    mod = s.module(cx.k, cx.reduced)
    for col, (s_idx, ci, bi, lab, _q) in enumerate(old_basis):
        if s_idx != s0:
            t_idx = s_idx if s_idx < s0 else s_idx + 1
            phi.set(new_index[(t_idx, ci, bi, lab)], col, 1)
            continue
        dia = mod.block(ci, bi).diagram
        circle_pos = next(idx for idx, circ in enumerate(dia.circles) if circ.free_id == fid)
        rest = tuple(l for idx, l in enumerate(lab) if idx != circle_pos)
        t_idx = s0 if lab[circle_pos] == ONE else s0 + 1
        phi.set(new_index[(t_idx, ci, bi, rest)], col, 1)
    psi = _invert_permutationlike(phi)
    # Transport differentials.
    diffs = {}
    for i in cx.degrees():
        d = cx.diff(i)
        if i == i0:
            d = d @ psi
        if i + 1 == i0:
            d = phi @ d
        if not d.is_zero():
            diffs[i] = d
    new_cx.diffs = diffs
    f = ChainMap(cx, new_cx, {i: (phi if i == i0 else IntMatrix.identity(cx.rank(i))) for i in cx.degrees()})
    g = ChainMap(new_cx, cx, {i: (psi if i == i0 else IntMatrix.identity(cx.rank(i))) for i in cx.degrees()})
    return new_cx, Retraction(f, g, Homotopy(cx, {}))


def _basis_keys(basis):
    return [(s, ci, bi, lab) for (s, ci, bi, lab, _q) in basis]


def _invert_permutationlike(m: IntMatrix) -> IntMatrix:
    inv = IntMatrix.zero(m.cols, m.rows)
    for (r, c), v in m.entries.items():
        if v not in (1, -1):
            raise InternalInvariantError("matrix is not signed-permutation")
        inv.set(c, r, v)
    return inv


def _find_unit_summand_entry(cx: BimoduleComplex):
    """A pair of identical summands joined by a +-identity differential block."""
    for i in cx.degrees():
        d = cx.diff(i)
        if d.is_zero():
            continue
        src_spans = _summand_spans(cx, i)
        tgt_spans = _summand_spans(cx, i + 1)
        for s_idx, (s, s_lo, s_hi) in enumerate(src_spans):
            for t_idx, (t, t_lo, t_hi) in enumerate(tgt_spans):
                if s.tangle != t.tangle or s.qshift != t.qshift:
                    continue
                sub = d.submatrix(range(t_lo, t_hi), range(s_lo, s_hi))
                n = t_hi - t_lo
                if n == 0:
                    continue
                if sub == IntMatrix.identity(n) or sub == IntMatrix.identity(n).scale(-1):
                    return i, s_idx, t_idx, 1 if sub == IntMatrix.identity(n) else -1
    return None


def _summand_spans(cx: BimoduleComplex, i):
    spans = []
    off = 0
    for s in cx.terms.get(i, ()):
        r = _summand_rank(s, cx.k, cx.reduced)
        spans.append((s, off, off + r))
        off += r
    return spans


def eliminate_summand_pair(cx: BimoduleComplex, i, s_idx, t_idx, unit):
    """Gaussian elimination of an invertible summand-level differential entry."""
    src_spans = _summand_spans(cx, i)
    tgt_spans = _summand_spans(cx, i + 1)
    _s, s_lo, s_hi = src_spans[s_idx]
    _t, t_lo, t_hi = tgt_spans[t_idx]
    keep_src = [idx for idx in range(cx.rank(i)) if not s_lo <= idx < s_hi]
    keep_tgt = [idx for idx in range(cx.rank(i + 1)) if not t_lo <= idx < t_hi]
    d = cx.diff(i)
    alpha_inv_scale = unit  # alpha = unit * I, alpha^{-1} = unit * I
    beta = d.submatrix(range(t_lo, t_hi), keep_src)
    gamma = d.submatrix(keep_tgt, range(s_lo, s_hi))
    delta = d.submatrix(keep_tgt, keep_src)
    new_terms = dict(cx.terms)
    ts = list(new_terms[i])
    del ts[s_idx]
    new_terms[i] = tuple(ts)
    ts = list(new_terms[i + 1])
    del ts[t_idx]
    new_terms[i + 1] = tuple(ts)
    new_cx = BimoduleComplex(cx.m, cx.n, cx.k, new_terms, {}, cx.reduced)
    diffs = {}
    for j in cx.degrees():
        dj = cx.diff(j)
        if j == i:
            diffs[j] = delta - gamma.scale(alpha_inv_scale) @ beta
        elif j == i - 1:
            diffs[j] = dj.submatrix(keep_src, range(cx.rank(j)))
        elif j == i + 1:
            diffs[j] = dj.submatrix(range(cx.rank(j + 1)), keep_tgt)
        else:
            diffs[j] = dj
    new_cx.diffs = {j: m for j, m in diffs.items() if not m.is_zero()}
    # Retraction data (standard Gaussian elimination formulas).
    f_mats, g_mats, h_mats = {}, {}, {}
    for j in set(cx.degrees()) | {i, i + 1}:
        if j == i:
            # F(s, s') = s'
            f = IntMatrix.zero(len(keep_src), cx.rank(i))
            for r, idx in enumerate(keep_src):
                f.set(r, idx, 1)
            f_mats[j] = f
            # G s' = (-alpha^{-1} beta s', s')
            g = IntMatrix.zero(cx.rank(i), len(keep_src))
            for r, idx in enumerate(keep_src):
                g.set(idx, r, 1)
            for (r, c), v in beta.entries.items():
                g.set(s_lo + r, c, -alpha_inv_scale * v)
            g_mats[j] = g
        elif j == i + 1:
            f = IntMatrix.zero(len(keep_tgt), cx.rank(i + 1))
            for r, idx in enumerate(keep_tgt):
                f.set(r, idx, 1)
            # F(t, t') = t' - gamma alpha^{-1} t
            for (r, c), v in gamma.entries.items():
                f.set(r, t_lo + c, -alpha_inv_scale * v)
            f_mats[j] = f
            g = IntMatrix.zero(cx.rank(i + 1), len(keep_tgt))
            for r, idx in enumerate(keep_tgt):
                g.set(idx, r, 1)
            g_mats[j] = g
            h = IntMatrix.zero(cx.rank(i), cx.rank(i + 1))
            for off in range(s_hi - s_lo):
                h.set(s_lo + off, t_lo + off, alpha_inv_scale)
            h_mats[i + 1] = h
        else:
            f_mats[j] = IntMatrix.identity(cx.rank(j))
            g_mats[j] = IntMatrix.identity(cx.rank(j))
    f = ChainMap(cx, new_cx, f_mats)
    g = ChainMap(new_cx, cx, g_mats)
    return new_cx, Retraction(f, g, Homotopy(cx, h_mats))


def _prune_empty_summands(cx: BimoduleComplex):
    """Drop summands whose blocks all vanish (type III everywhere)."""
    new_terms = {}
    changed = False
    for i, ts in cx.terms.items():
        kept = tuple(s for s in ts if _summand_rank(s, cx.k, cx.reduced))
        if len(kept) != len(ts):
            changed = True
        new_terms[i] = kept
    if not changed:
        return None
    new_cx = BimoduleComplex(cx.m, cx.n, cx.k, new_terms, dict(cx.diffs), cx.reduced)
    ident = {i: IntMatrix.identity(cx.rank(i)) for i in cx.degrees()}
    f = ChainMap(cx, new_cx, ident)
    g = ChainMap(new_cx, cx, dict(ident))
    return new_cx, Retraction(f, g, Homotopy(cx, {}))


def simplify_complex(cx: BimoduleComplex, verify: bool = False):
    """Deloop free circles and cancel identity summand pairs.

    Returns (simplified complex, Retraction from the input onto it).
    """
    ret = _identity_retraction(cx)
    cur = cx
    pruned = _prune_empty_summands(cur)
    if pruned is not None:
        cur, r = pruned
        ret = Retraction(r.f.compose(ret.f), ret.g.compose(r.g), _compose_homotopy(ret, r))
    while True:
        step = deloop_once(cur)
        if step is not None:
            cur, r = step
            ret = Retraction(r.f.compose(ret.f), ret.g.compose(r.g), _compose_homotopy(ret, r))
            pruned = _prune_empty_summands(cur)
            if pruned is not None:
                cur, r = pruned
                ret = Retraction(r.f.compose(ret.f), ret.g.compose(r.g), _compose_homotopy(ret, r))
            continue
        found = _find_unit_summand_entry(cur)
        if found is None:
            break
        cur, r = eliminate_summand_pair(cur, *found)
        ret = Retraction(r.f.compose(ret.f), ret.g.compose(r.g), _compose_homotopy(ret, r))
    if verify:
        if not ret.f.is_chain_map() or not ret.g.is_chain_map():
            raise InternalInvariantError("simplification broke the chain maps")
        for i in cur.degrees():
            if (ret.f.mat(i) @ ret.g.mat(i)) != IntMatrix.identity(cur.rank(i)):
                raise InternalInvariantError("retraction is not split")
        if not homotopy_defect(ret.f, ret.g, ret.h):
            raise InternalInvariantError("homotopy defect on the big complex")
        cur.validate()
    return cur, ret


def _compose_homotopy(outer: Retraction, inner: Retraction) -> Homotopy:
    """Homotopy of the composite retraction inner . outer."""
    cx = outer.f.source
    degs = set(outer.h.mats) | set(inner.h.mats) | set(cx.degrees())
    mats = {}
    for i in degs:
        term1 = outer.h.mat(i)
        term2 = (outer.g.mat(i - 1) @ inner.h.mat(i)) @ outer.f.mat(i)
        m = term1 + term2
        if m.entries:
            mats[i] = m
    return Homotopy(cx, mats)


# ---------------------------------------------------------------------------
# Chain homotopy equivalences for Reidemeister moves


@dataclass
class ChainEquivalence:
    """Mutually inverse homotopy equivalences f: C1 -> C2 and g: C2 -> C1."""

    f: ChainMap
    g: ChainMap
    h_source: Homotopy  # id_C1 - g f = d h + h d
    h_target: Homotopy  # id_C2 - f g = d h + h d

    def verify(self) -> bool:
        if not (self.f.is_chain_map() and self.g.is_chain_map()):
            return False
        if not homotopy_defect(self.f, self.g, self.h_source):
            return False
        return homotopy_defect(self.g, self.f, self.h_target)


def _structurally_equal(c1: BimoduleComplex, c2: BimoduleComplex) -> bool:
    if c1.terms != c2.terms:
        return False
    degs = set(c1.degrees()) | set(c2.degrees())
    return all(c1.diff(i) == c2.diff(i) for i in degs)


def chain_equivalence(c1: BimoduleComplex, c2: BimoduleComplex) -> ChainEquivalence:
    """Equivalence between complexes whose simplifications coincide."""
    s1, r1 = simplify_complex(c1, verify=True)
    s2, r2 = simplify_complex(c2, verify=True)
    if not _structurally_equal(s1, s2):
        raise MoveNotApplicable("complexes do not simplify to one canonical core")
    f = r2.g.compose(r1.f)
    g = r1.g.compose(r2.f)
    eq = ChainEquivalence(f, g, r1.h, r2.h)
    if not eq.verify():
        raise InternalInvariantError("chain equivalence failed verification")
    return eq


def _kink_word(chirality: str, location: int, strands: int):
    tokens = [("cup", location + 1), ("cross", location, chirality), ("cap", location + 1)]
    return TangleDiagram(strands, strands, tuple(tokens))


def reidemeister_equivalence(move: str, location: int = 1, strands: int | None = None, k: int | None = None):
    """Explicit homotopy equivalences for R1 (both kinks) and R2.

    Returns {k: ChainEquivalence} between the complex of the local move
    diagram and the complex of the identity diagram, or a single equivalence
    when k is given.
    """
    if move in ("R1+", "R1-"):
        strands = strands or 1
        if not 1 <= location <= strands:
            raise MoveNotApplicable("kink location out of range")
        chir = "under" if move == "R1+" else "over"
        d1 = _kink_word(chir, location, strands)
    elif move == "R2":
        strands = strands or 2
        if not 1 <= location <= strands - 1:
            raise MoveNotApplicable("R2 location out of range")
        d1 = TangleDiagram(
            strands, strands,
            (("cross", location, "over"), ("cross", location, "under")),
        )
    else:
        raise MoveNotApplicable(f"unsupported move {move!r}")
    d2 = TangleDiagram(strands, strands, ())
    ks = [k] if k is not None else list(k_range(strands, strands))
    out = {}
    for kk in ks:
        out[kk] = chain_equivalence(cube_complex(d1, k=kk), cube_complex(d2, k=kk))
    return out[k] if k is not None else out


# ---------------------------------------------------------------------------
# Morse move chain maps


def _extension_map(src_cx: BimoduleComplex, tgt_cx: BimoduleComplex, entry_fn, qdeg):
    mats = {}
    for i in src_cx.degrees():
        mat = IntMatrix.zero(tgt_cx.rank(i), src_cx.rank(i))
        tgt_index = {}
        for row, key in enumerate(_basis_keys(tgt_cx.basis(i))):
            tgt_index[key] = row
        for col, (s_idx, ci, bi, lab, _q) in enumerate(src_cx.basis(i)):
            for key, coeff in entry_fn(i, s_idx, ci, bi, lab):
                mat.set(tgt_index[key], col, mat.get(tgt_index[key], col) + coeff)
        mats[i] = mat
    fmap = ChainMap(src_cx, tgt_cx, mats, qdegree=qdeg)
    if not fmap.is_chain_map():
        raise InternalInvariantError("morse move map does not commute with differentials")
    return fmap


def morse_birth_map(diagram: TangleDiagram, k: int, reduced=True):
    """Chain map C(D) -> C(D + circle) labeling the new circle ONE."""
    tgt_diagram = replace(diagram, tokens=diagram.tokens + (("cup", 1), ("cap", 1)))
    src_cx = cube_complex(diagram, k=k, reduced=reduced)
    tgt_cx = cube_complex(tgt_diagram, k=k, reduced=reduced)

    def entries(i, s_idx, ci, bi, lab):
        yield (s_idx, ci, bi, lab + (ONE,)), 1

    return _extension_map(src_cx, tgt_cx, entries, -1), tgt_diagram


def morse_death_map(diagram: TangleDiagram, k: int, reduced=True):
    """Chain map C(D + circle) -> C(D); the last two tokens must close a loop."""
    toks = diagram.tokens
    if len(toks) < 2 or toks[-2][0] != "cup" or toks[-1] != ("cap", toks[-2][1]):
        raise MoveNotApplicable("diagram does not end with a detached circle")
    tgt_diagram = replace(diagram, tokens=toks[:-2])
    src_cx = cube_complex(diagram, k=k, reduced=reduced)
    tgt_cx = cube_complex(tgt_diagram, k=k, reduced=reduced)

    def entries(i, s_idx, ci, bi, lab):
        if lab and lab[-1] == X:
            yield (s_idx, ci, bi, lab[:-1]), 1

    return _extension_map(src_cx, tgt_cx, entries, -1), tgt_diagram


def morse_saddle_map(diagram: TangleDiagram, level: int, position: int, k: int, reduced=True):
    """Chain map for the saddle between strands (position, position+1) at word level `level`."""
    toks = diagram.tokens
    if not 0 <= level <= len(toks):
        raise MoveNotApplicable("saddle level out of range")
    aug = TangleDiagram(
        diagram.n, diagram.m if False else diagram.m,
        toks[:level] + (("cross", position, "over"),) + toks[level:],
        diagram.orient_bottom, diagram.orient_top,
    )
    tgt_tokens = toks[:level] + (("cap", position), ("cup", position)) + toks[level:]
    tgt_diagram = replace(diagram, tokens=tgt_tokens)
    src_cx = cube_complex(diagram, k=k, reduced=reduced)
    tgt_cx = cube_complex(tgt_diagram, k=k, reduced=reduced)
    crossings = [idx for idx, t in enumerate(aug.tokens) if t[0] == "cross"]
    ins_axis = crossings.index(level)
    mats = {}
    src_positions = _vertex_positions(src_cx, diagram)
    tgt_positions = _vertex_positions(tgt_cx, tgt_diagram)
    src_mod_cache = {}
    for bits_src, (i, s_pos, src_res) in src_positions.items():
        aug_bits = bits_src[:ins_axis] + (0,) + bits_src[ins_axis:]
        aug_src = _resolved(aug, aug_bits)
        aug_tgt = _resolved(aug, aug_bits[:ins_axis] + (1,) + aug_bits[ins_axis + 1 :])
        mat = mats.setdefault(i, IntMatrix.zero(tgt_cx.rank(i), src_cx.rank(i)))
        (_i2, t_pos, _tres) = tgt_positions[bits_src]
        src_off = _term_offset(src_cx, i, s_pos)
        tgt_off = _term_offset(tgt_cx, i, t_pos)
        _add_saddle_entries_generic(mat, aug_src, aug_tgt, level, k, reduced, src_off, tgt_off, 1)
    fmap = ChainMap(src_cx, tgt_cx, mats, qdegree=+1 + _qshift_delta(src_cx, tgt_cx))
    if not fmap.is_chain_map():
        raise InternalInvariantError("saddle map does not commute with differentials")
    return fmap, tgt_diagram


def _qshift_delta(src_cx, tgt_cx):
    return 0


def _vertex_positions(cx: BimoduleComplex, diagram: TangleDiagram):
    crossings = diagram.crossings
    x, _y = crossing_signs(diagram) if crossings else (0, 0)
    counters = {}
    out = {}
    for bits in sorted(itertools.product((0, 1), repeat=len(crossings))):
        w = sum(bits)
        i = w - x
        pos = counters.get(i, 0)
        counters[i] = pos + 1
        out[bits] = (i, pos, _resolved(diagram, bits))
    return out


def _term_offset(cx: BimoduleComplex, i, s_pos):
    off = 0
    for s in cx.terms.get(i, ())[:s_pos]:
        off += _summand_rank(s, cx.k, cx.reduced)
    return off


def _add_saddle_entries_generic(mat, src, tgt, level, k, reduced, col_off, row_off, sign):
    src_mod = flat_bimodule(src.tangle, k, reduced)
    tgt_mod = flat_bimodule(tgt.tangle, k, reduced)
    col = col_off
    scol = {}
    for ci, bi, lab, _deg in src_mod.basis():
        scol[(ci, bi, lab)] = col
        col += 1
    row = row_off
    trow = {}
    for ci, bi, lab, _deg in tgt_mod.basis():
        trow[(ci, bi, lab)] = row
        row += 1
    for ci, cm in enumerate(src_mod.left_ring.matchings):
        for bi, bm in enumerate(src_mod.right_ring.matchings):
            if not src_mod.block(ci, bi).labelings:
                continue
            table, _s, _t = saddle_block_table(src, tgt, level, cm, bm, k, reduced)
            for mlab, terms in table.items():
                c0 = scol[(ci, bi, mlab)]
                for lab, coeff in terms.items():
                    r0 = trow[(ci, bi, lab)]
                    mat.set(r0, c0, mat.get(r0, c0) + sign * coeff)


def morse_move_map(diagram: TangleDiagram, event, k: int, reduced=True):
    """Chain map for one Morse event: 'birth', 'death', or ('saddle', level, pos)."""
    if event == "birth":
        return morse_birth_map(diagram, k, reduced)
    if event == "death":
        return morse_death_map(diagram, k, reduced)
    if isinstance(event, tuple) and event[0] == "saddle":
        return morse_saddle_map(diagram, event[1], event[2], k, reduced)
    raise MoveNotApplicable(f"unknown morse event {event!r}")


# ---------------------------------------------------------------------------
# Raw complexes: basis-level elimination and tensor products


class RawComplex:
    """Complex of graded free abelian groups, without bimodule structure."""

    def __init__(self, qdegs, diffs):
        self.qdegs = {i: tuple(q) for i, q in qdegs.items() if q}
        self.diffs = dict(diffs)

    @classmethod
    def from_bimodule_complex(cls, cx) -> "RawComplex":
        qdegs = {i: [b[4] for b in cx.basis(i)] for i in cx.degrees()}
        diffs = {i: cx.diff(i) for i in cx.degrees()}
        return cls(qdegs, diffs)

    def degrees(self):
        return sorted(self.qdegs)

    def rank(self, i):
        return len(self.qdegs.get(i, ()))

    def diff(self, i) -> IntMatrix:
        if i in self.diffs:
            return self.diffs[i]
        return IntMatrix.zero(self.rank(i + 1), self.rank(i))

    def homology(self):
        out = {}
        degs = self.degrees()
        if not degs:
            return out
        for i in range(min(degs), max(degs) + 1):
            qs = self.qdegs.get(i, ())
            if not qs:
                continue
            by_q = {}
            for idx, q in enumerate(qs):
                by_q.setdefault(q, []).append(idx)
            prev_by_q = {}
            for idx, q in enumerate(self.qdegs.get(i - 1, ())):
                prev_by_q.setdefault(q, []).append(idx)
            next_by_q = {}
            for idx, q in enumerate(self.qdegs.get(i + 1, ())):
                next_by_q.setdefault(q, []).append(idx)
            d_in, d_out = self.diff(i - 1), self.diff(i)
            for q, cols in by_q.items():
                din = d_in.submatrix(cols, prev_by_q.get(q, []))
                dout = d_out.submatrix(next_by_q.get(q, []), cols)
                h = homology_at(din, dout)
                if not h.is_trivial:
                    out[(i, q)] = h
        return out


def eliminate_unit_entry(raw: RawComplex):
    """One Gaussian elimination of a +-1 differential entry; None if none exists."""
    for i in raw.degrees():
        d = raw.diff(i)
        for (r, c), v in sorted(d.entries.items()):
            if v in (1, -1):
                return _eliminate_raw(raw, i, r, c, v)
    return None


def _eliminate_raw(raw: RawComplex, i, r, c, v):
    keep_src = [idx for idx in range(raw.rank(i)) if idx != c]
    keep_tgt = [idx for idx in range(raw.rank(i + 1)) if idx != r]
    d = raw.diff(i)
    beta = d.submatrix([r], keep_src)
    gamma = d.submatrix(keep_tgt, [c])
    delta = d.submatrix(keep_tgt, keep_src)
    correction = gamma.scale(v) @ beta  # gamma alpha^{-1} beta with alpha^{-1} = v
    qdegs = dict(raw.qdegs)
    qdegs[i] = tuple(q for idx, q in enumerate(raw.qdegs[i]) if idx != c)
    qdegs[i + 1] = tuple(q for idx, q in enumerate(raw.qdegs[i + 1]) if idx != r)
    diffs = {}
    for j in raw.degrees():
        dj = raw.diff(j)
        if j == i:
            diffs[j] = delta - correction
        elif j == i - 1:
            diffs[j] = dj.submatrix(keep_src, range(raw.rank(i - 1)))
        elif j == i + 1:
            diffs[j] = dj.submatrix(range(raw.rank(i + 2)), keep_tgt)
        else:
            diffs[j] = dj
    return RawComplex(qdegs, diffs)


def simplify_raw(raw: RawComplex) -> RawComplex:
    """Repeated basis-level Gaussian elimination of unit differential entries."""
    while True:
        step = eliminate_unit_entry(raw)
        if step is None:
            return raw
        raw = step


def tensor_complexes(c2: BimoduleComplex, c1: BimoduleComplex) -> RawComplex:
    """Total complex of the degreewise tensor over the middle ring.

    Terms are presented on the free cokernel bases of tensor_over_middle with
    Koszul signs; the result carries quantum degrees and differentials but no
    bimodule action data.
    """
    from .bimodules import tensor_over_middle
    from .intlinalg import smith_normal_form_with_transforms

    if c2.n != c1.m:
        raise MiddleMismatch("middle arities differ")

    pair_cache = {}

    def tensor_data(s2: Summand, s1: Summand):
        """(tensor, per-(block,deg) coordinate data, generator index)."""
        key = (s2.tangle, s2.qshift, s1.tangle, s1.qshift)
        if key in pair_cache:
            return pair_cache[key]
        m2 = s2.module(c2.k, c2.reduced)
        m1 = s1.module(c1.k, c1.reduced)
        tens = tensor_over_middle(m2, m1)
        shift = s2.qshift + s1.qshift
        coords = {}
        gen_index = {}
        for blk, block in sorted(tens.blocks.items()):
            gens = block.generators
            for idx, (bi, l2, l1, graw) in enumerate(gens):
                gen_index[(blk, bi, l2, l1)] = (idx, graw + shift)
            by_deg = {}
            for idx, g in enumerate(gens):
                by_deg.setdefault(g[3], []).append(idx)
            rel_rows_by_deg = {}
            for (ri, gj), _val in block.relations.entries.items():
                rel_rows_by_deg.setdefault(gens[gj][3], set()).add(ri)
            for graw in sorted(by_deg):
                cols = by_deg[graw]
                rrows = sorted(rel_rows_by_deg.get(graw, ()))
                sub_rel = block.relations.submatrix(rrows, cols)
                factors, r0, vmat, v_inv = smith_normal_form_with_transforms(sub_rel)
                if any(f != 1 for f in factors):
                    raise InternalInvariantError("tensor term has torsion; raw basis unavailable")
                vt = vmat.transpose()
                pi = vt.submatrix(range(r0, len(cols)), range(len(cols)))
                sigma = v_inv.transpose().submatrix(range(len(cols)), range(r0, len(cols)))
                coords[(blk, graw + shift)] = (cols, pi, sigma)
        pair_cache[key] = (tens, coords, gen_index)
        return pair_cache[key]

    # Global term bases.
    terms = {}
    index = {}
    for p in c2.degrees():
        for q in c1.degrees():
            i = p + q
            for s2_idx, s2 in enumerate(c2.terms[p]):
                for s1_idx, s1 in enumerate(c1.terms[q]):
                    _tens, coords, _gi = tensor_data(s2, s1)
                    for (blk, deg), (cols, pi, _sigma) in sorted(coords.items()):
                        base = terms.setdefault(i, [])
                        for local in range(pi.rows):
                            key = (p, q, s2_idx, s1_idx, blk, deg, local)
                            index[key] = len(base)
                            base.append(key)
    qdegs = {i: [entry[5] for entry in base] for i, base in terms.items()}

    diffs = {}
    for i, base in sorted(terms.items()):
        tgt_base = terms.get(i + 1)
        if not tgt_base:
            continue
        mat = IntMatrix.zero(len(tgt_base), len(base))
        for col, (p, q, s2_idx, s1_idx, blk, deg, local) in enumerate(base):
            s2, s1 = c2.terms[p][s2_idx], c1.terms[q][s1_idx]
            _tens, coords, gi = tensor_data(s2, s1)
            cols, _pi, sigma = coords[(blk, deg)]
            gen_vec = {}
            for (gr, gc), val in sigma.entries.items():
                if gc == local:
                    gen_vec[cols[gr]] = val
            tens_obj = _tens
            gens = tens_obj.blocks[blk].generators
            ci, ai = blk
            out_gens = {}
            d2_entries = _block_entries_of_diff(c2, p)
            d1_entries = _block_entries_of_diff(c1, q)
            sign1 = (-1) ** p
            for gidx, coeff in gen_vec.items():
                bi, l2, l1, _graw = gens[gidx]
                for (t2_idx, lab2, v) in d2_entries.get((s2_idx, ci, bi, l2), ()):
                    pair_key = (p + 1, q, t2_idx, s1_idx)
                    out_gens.setdefault(pair_key, {})
                    out_gens[pair_key][(blk, bi, lab2, l1)] = (
                        out_gens[pair_key].get((blk, bi, lab2, l1), 0) + coeff * v
                    )
                for (t1_idx, lab1b, v) in d1_entries.get((s1_idx, bi, ai, l1), ()):
                    pair_key = (p, q + 1, s2_idx, t1_idx)
                    out_gens.setdefault(pair_key, {})
                    out_gens[pair_key][(blk, bi, l2, lab1b)] = (
                        out_gens[pair_key].get((blk, bi, l2, lab1b), 0) + coeff * v * sign1
                    )
            for (tp, tq, t2_idx, t1_idx), gvec in out_gens.items():
                t2, t1 = c2.terms[tp][t2_idx], c1.terms[tq][t1_idx]
                _ttens, tcoords, tgi = tensor_data(t2, t1)
                grouped = {}
                for (tblk, bi, l2, l1), val in gvec.items():
                    if not val:
                        continue
                    tgidx, tdeg = tgi[(tblk, bi, l2, l1)]
                    if tdeg != deg:
                        raise InternalInvariantError("tensor differential not of quantum degree 0")
                    grouped.setdefault((tblk, tdeg), {})[tgidx] = val
                for (tblk, tdeg), vec in grouped.items():
                    tcols, tpi, _tsigma = tcoords[(tblk, tdeg)]
                    pos_of = {g: idx for idx, g in enumerate(tcols)}
                    dense = {pos_of[g]: val for g, val in vec.items()}
                    for (pr, pc), pval in tpi.entries.items():
                        if pc in dense and dense[pc]:
                            row = index[(tp, tq, t2_idx, t1_idx, tblk, tdeg, pr)]
                            mat.set(row, col, mat.get(row, col) + pval * dense[pc])
        diffs[i] = mat
    raw = RawComplex(qdegs, diffs)
    for i in raw.degrees():
        if not (raw.diff(i + 1) @ raw.diff(i)).is_zero():
            raise NotAComplex("tensor complex differential does not square to zero")
    return raw


def _block_entries_of_diff(cx: BimoduleComplex, p):
    """Differential entries of cx at degree p in block coordinates.

    Returns {(s_idx, ci, bi, lab): [(t_idx, lab2, coeff), ...]}.
    """
    cache = cx.__dict__.setdefault("_blockdiff_cache", {})
    if p in cache:
        return cache[p]
    src = cx.basis(p)
    tgt = cx.basis(p + 1)
    d = cx.diff(p)
    out = {}
    for (r, c), v in d.entries.items():
        s_idx, ci, bi, lab, _q = src[c]
        t_idx, ci2, bi2, lab2, _q2 = tgt[r]
        if (ci, bi) != (ci2, bi2):
            raise InternalInvariantError("differential is not blockwise")
        out.setdefault((s_idx, ci, bi, lab), []).append((t_idx, lab2, v))
    cache[p] = out
    return out
