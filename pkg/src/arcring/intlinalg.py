"""Exact integer linear algebra: sparse matrices, Smith normal form, homology.

All arithmetic uses Python's arbitrary-precision integers.  Pivots are chosen
by minimal absolute value to limit entry growth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

from .errors import CompositionNotZero, DimensionMismatch


class IntMatrix:
    """Sparse integer matrix keyed by (row, col); zero entries are never stored."""

    __slots__ = ("rows", "cols", "entries")

    def __init__(self, rows: int, cols: int, entries=None):
        if rows < 0 or cols < 0:
            raise DimensionMismatch("negative matrix dimensions")
        self.rows = rows
        self.cols = cols
        self.entries = {}
        if entries:
            for (i, j), v in entries.items():
                if not (0 <= i < rows and 0 <= j < cols):
                    raise DimensionMismatch(f"entry ({i},{j}) out of bounds for {rows}x{cols}")
                if v:
                    self.entries[(i, j)] = int(v)

    @classmethod
    def from_rows(cls, data) -> "IntMatrix":
        rows = len(data)
        cols = len(data[0]) if rows else 0
        entries = {}
        for i, row in enumerate(data):
            if len(row) != cols:
                raise DimensionMismatch("ragged rows")
            for j, v in enumerate(row):
                if v:
                    entries[(i, j)] = v
        return cls(rows, cols, entries)

    @classmethod
    def identity(cls, n: int) -> "IntMatrix":
        return cls(n, n, {(i, i): 1 for i in range(n)})

    @classmethod
    def zero(cls, rows: int, cols: int) -> "IntMatrix":
        return cls(rows, cols)

    def copy(self) -> "IntMatrix":
        m = IntMatrix(self.rows, self.cols)
        m.entries = dict(self.entries)
        return m

    def get(self, i: int, j: int) -> int:
        return self.entries.get((i, j), 0)

    def set(self, i: int, j: int, v: int) -> None:
        if v:
            self.entries[(i, j)] = v
        else:
            self.entries.pop((i, j), None)

    def to_rows(self):
        data = [[0] * self.cols for _ in range(self.rows)]
        for (i, j), v in self.entries.items():
            data[i][j] = v
        return data

    def transpose(self) -> "IntMatrix":
        return IntMatrix(self.cols, self.rows, {(j, i): v for (i, j), v in self.entries.items()})

    def __eq__(self, other):
        return (
            isinstance(other, IntMatrix)
            and self.rows == other.rows
            and self.cols == other.cols
            and self.entries == other.entries
        )

    def __hash__(self):
        return hash((self.rows, self.cols, frozenset(self.entries.items())))

    def __add__(self, other: "IntMatrix") -> "IntMatrix":
        if self.rows != other.rows or self.cols != other.cols:
            raise DimensionMismatch("shape mismatch in addition")
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out.get(k, 0) + v
        return IntMatrix(self.rows, self.cols, out)

    def __neg__(self) -> "IntMatrix":
        return IntMatrix(self.rows, self.cols, {k: -v for k, v in self.entries.items()})

    def __sub__(self, other: "IntMatrix") -> "IntMatrix":
        return self + (-other)

    def scale(self, c: int) -> "IntMatrix":
        if c == 0:
            return IntMatrix(self.rows, self.cols)
        return IntMatrix(self.rows, self.cols, {k: c * v for k, v in self.entries.items()})

    def __matmul__(self, other: "IntMatrix") -> "IntMatrix":
        if self.cols != other.rows:
            raise DimensionMismatch(f"cannot multiply {self.rows}x{self.cols} by {other.rows}x{other.cols}")
        by_row = {}
        for (i, j), v in other.entries.items():
            by_row.setdefault(i, []).append((j, v))
        out = {}
        for (i, k), v in self.entries.items():
            for j, w in by_row.get(k, ()):
                key = (i, j)
                out[key] = out.get(key, 0) + v * w
        return IntMatrix(self.rows, other.cols, out)

    def is_zero(self) -> bool:
        return not self.entries

    def submatrix(self, row_idx, col_idx) -> "IntMatrix":
        rmap = {r: i for i, r in enumerate(row_idx)}
        cmap = {c: j for j, c in enumerate(col_idx)}
        out = {}
        for (i, j), v in self.entries.items():
            if i in rmap and j in cmap:
                out[(rmap[i], cmap[j])] = v
        return IntMatrix(len(row_idx), len(col_idx), out)

    def __repr__(self):
        return f"IntMatrix({self.rows}x{self.cols}, {len(self.entries)} entries)"


@dataclass(frozen=True)
class AbelianGroupSummary:
    """Finitely generated abelian group: free rank plus invariant factors (>= 2)."""

    free_rank: int = 0
    torsion: tuple = ()

    def __post_init__(self):
        for i, t in enumerate(self.torsion):
            if t < 2:
                raise ValueError("torsion coefficients must be >= 2")
            if i and self.torsion[i] % self.torsion[i - 1]:
                raise ValueError("invariant factors must form a divisibility chain")

    @property
    def is_trivial(self) -> bool:
        return self.free_rank == 0 and not self.torsion

    def __str__(self):
        parts = ["Z"] * self.free_rank + [f"Z/{t}" for t in self.torsion]
        return " + ".join(parts) if parts else "0"

    def to_json(self):
        return {"free_rank": self.free_rank, "torsion": list(self.torsion)}


class _Worksheet:
    """Dense mutable matrix with optional column-transform tracking."""

    def __init__(self, m: IntMatrix, track_cols: bool):
        self.a = m.to_rows()
        self.rows = m.rows
        self.cols = m.cols
        # v: product of column operations, v_inv its inverse (tracked directly).
        self.v = IntMatrix.identity(m.cols).to_rows() if track_cols else None
        self.v_inv = IntMatrix.identity(m.cols).to_rows() if track_cols else None

    def swap_rows(self, i, j):
        self.a[i], self.a[j] = self.a[j], self.a[i]

    def swap_cols(self, i, j):
        for row in self.a:
            row[i], row[j] = row[j], row[i]
        if self.v is not None:
            for row in self.v:
                row[i], row[j] = row[j], row[i]
            self.v_inv[i], self.v_inv[j] = self.v_inv[j], self.v_inv[i]

    def add_row(self, src, dst, c):
        arow_s, arow_d = self.a[src], self.a[dst]
        for k in range(self.cols):
            if arow_s[k]:
                arow_d[k] += c * arow_s[k]

    def add_col(self, src, dst, c):
        for row in self.a:
            if row[src]:
                row[dst] += c * row[src]
        if self.v is not None:
            for row in self.v:
                if row[src]:
                    row[dst] += c * row[src]
            # inverse operation on rows of v_inv: row_src -= c * row_dst
            vs, vd = self.v_inv[src], self.v_inv[dst]
            for k in range(self.cols):
                if vd[k]:
                    vs[k] -= c * vd[k]

    def negate_row(self, i):
        self.a[i] = [-x for x in self.a[i]]

    def negate_col(self, j):
        for row in self.a:
            row[j] = -row[j]
        if self.v is not None:
            for row in self.v:
                row[j] = -row[j]
            self.v_inv[j] = [-x for x in self.v_inv[j]]


def _smith(work: _Worksheet):
    """In-place Smith reduction; returns the list of diagonal invariant factors."""
    a = work.a
    rows, cols = work.rows, work.cols
    t = 0
    while True:
        pivot = None
        best = None
        for i in range(t, rows):
            row = a[i]
            for j in range(t, cols):
                v = row[j]
                if v:
                    av = abs(v)
                    if best is None or av < best:
                        best = av
                        pivot = (i, j)
                        if av == 1:
                            break
            if best == 1:
                break
        if pivot is None:
            break
        pi, pj = pivot
        work.swap_rows(t, pi)
        work.swap_cols(t, pj)
        # Clear row and column t; restart if a remainder shrinks the pivot.
        while True:
            p = a[t][t]
            dirty = False
            for i in range(t + 1, rows):
                if a[i][t]:
                    q = a[i][t] // p
                    if q:
                        work.add_row(t, i, -q)
                    if a[i][t]:
                        work.swap_rows(t, i)
                        dirty = True
                        break
            if dirty:
                continue
            for j in range(t + 1, cols):
                if a[t][j]:
                    q = a[t][j] // p
                    if q:
                        work.add_col(t, j, -q)
                    if a[t][j]:
                        work.swap_cols(t, j)
                        dirty = True
                        break
            if not dirty:
                break
        t += 1

    factors = [a[i][i] for i in range(min(rows, cols)) if a[i][i]]
    # Enforce the divisibility chain d1 | d2 | ... by gcd/lcm fix-ups.
    changed = True
    while changed:
        changed = False
        for i in range(len(factors) - 1):
            x, y = factors[i], factors[i + 1]
            if y % x:
                g = gcd(x, y)
                factors[i], factors[i + 1] = g, x * y // g
                changed = True
    return [abs(f) for f in factors]


def smith_normal_form(m: IntMatrix):
    """Return (invariant_factors, rank) of an integer matrix."""
    work = _Worksheet(m, track_cols=False)
    factors = _smith(work)
    return tuple(factors), len(factors)


def smith_normal_form_with_transforms(m: IntMatrix):
    """Smith form with column transforms.

    Returns (factors, rank, v, v_inv) where the column operations performed are
    collected in the unimodular matrix v (m @ v has its kernel spanned by the
    columns of v past the rank) and v_inv = v^-1.
    """
    work = _Worksheet(m, track_cols=True)
    factors = _smith(work)
    v = IntMatrix.from_rows(work.v)
    v_inv = IntMatrix.from_rows(work.v_inv)
    return tuple(factors), len(factors), v, v_inv


def rank(m: IntMatrix) -> int:
    return smith_normal_form(m)[1]


def kernel_basis(m: IntMatrix) -> IntMatrix:
    """Columns span ker(m) over Z (a direct summand of the column space)."""
    _, r, v, _ = smith_normal_form_with_transforms(m)
    return v.submatrix(range(v.rows), range(r, v.cols))


def homology_at(d_in: IntMatrix, d_out: IntMatrix) -> AbelianGroupSummary:
    """Homology ker(d_out)/im(d_in) of the two-step complex  . --d_in--> . --d_out--> .

    Raises CompositionNotZero unless d_out @ d_in == 0, and DimensionMismatch
    when the shapes are not composable.
    """
    if d_out.cols != d_in.rows:
        raise DimensionMismatch(
            f"d_out has {d_out.cols} columns but d_in has {d_in.rows} rows"
        )
    if not (d_out @ d_in).is_zero():
        raise CompositionNotZero("d_out . d_in != 0")
    _, r, _, v_inv = smith_normal_form_with_transforms(d_out)
    # Columns of v past r span ker(d_out); express im(d_in) in those coordinates.
    coords = v_inv @ d_in
    kdim = d_out.cols - r
    y = coords.submatrix(range(r, d_out.cols), range(d_in.cols))
    # Sanity: d_in must land inside the kernel.
    top = coords.submatrix(range(r), range(d_in.cols))
    if not top.is_zero():
        raise CompositionNotZero("image of d_in is not contained in ker(d_out)")
    factors, yrank = smith_normal_form(y)
    torsion = tuple(f for f in factors if f > 1)
    return AbelianGroupSummary(free_rank=kdim - yrank, torsion=torsion)


def determinantal_divisor_factors(m: IntMatrix):
    """Naive minor-based invariant factors, for cross-checking small matrices.

    d_k = gcd of all k x k minors; the k-th invariant factor is d_k / d_{k-1}.
    Exponential in the matrix size; intended for matrices up to ~4x4.
    """
    from itertools import combinations

    data = m.to_rows()
    n, c = m.rows, m.cols

    def minor(rs, cs):
        sub = [[data[i][j] for j in cs] for i in rs]
        return _det(sub)

    factors = []
    prev = 1
    for k in range(1, min(n, c) + 1):
        g = 0
        for rs in combinations(range(n), k):
            for cs in combinations(range(c), k):
                g = gcd(g, minor(rs, cs))
                if g == 1:
                    break
            if g == 1:
                break
        if g == 0:
            break
        factors.append(g // prev)
        prev = g
    return tuple(abs(f) for f in factors)


def _det(a):
    """Determinant by fraction-free Gaussian elimination (Bareiss)."""
    n = len(a)
    if n == 0:
        return 1
    a = [row[:] for row in a]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if not a[k][k]:
            for i in range(k + 1, n):
                if a[i][k]:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]
