"""Banded form of a general sparse matrix.

Pipeline: drop rows/columns coupled to nothing, scale the diagonal to unit
magnitude, then reduce the bandwidth with reverse Cuthill-McKee.  This stands
in for a matching-based scaling plus spectral ordering; the row/column
permutation and scale vectors it returns have the same shape so a
matching-based variant can be substituted later.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .sparse_core import BandInfo, CsrMatrix, DimensionError, band_metrics, from_coo


class SingularScalingError(ValueError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(
            f"zero diagonal entry in row {row}; symmetric scaling cannot repair "
            "structural zeros on the diagonal (a matching-based permutation would be needed)"
        )


@dataclass(frozen=True)
class Permutation:
    """``forward[new] = old``; ``inverse[old] = new``."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64)
        object.__setattr__(self, "forward", fwd)
        inv = np.empty_like(fwd)
        inv[fwd] = np.arange(fwd.size)
        if self.inverse is not None and not np.array_equal(np.asarray(self.inverse), inv):
            raise ValueError("inverse does not match forward")
        object.__setattr__(self, "inverse", inv)
        if not np.array_equal(np.sort(fwd), np.arange(fwd.size)):
            raise ValueError("forward is not a bijection")

    @property
    def size(self) -> int:
        return int(self.forward.size)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Reorder a vector/block into the new ordering."""
        return np.asarray(x)[self.forward]

    def unapply(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y)[self.inverse]


def strip_disconnected(A: CsrMatrix) -> tuple[CsrMatrix, np.ndarray, np.ndarray]:
    """Remove indices whose row and column hold nothing but the diagonal.

    Returns ``(B, kept, removed)`` where ``kept[i]`` is the original index of
    row/column ``i`` of ``B``.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError("strip_disconnected needs a square matrix")
    n = A.n_rows
    rows = A.row_indices()
    off = (rows != A.col_idx) & (A.values != 0)
    coupled = np.zeros(n, dtype=bool)
    coupled[rows[off]] = True
    coupled[A.col_idx[off]] = True
    kept = np.flatnonzero(coupled)
    removed = np.flatnonzero(~coupled)
    newidx = np.full(n, -1, dtype=np.int64)
    newidx[kept] = np.arange(kept.size)
    sel = coupled[rows] & coupled[A.col_idx]
    B = from_coo(kept.size, kept.size, newidx[rows[sel]], newidx[A.col_idx[sel]], A.values[sel])
    return B, kept, removed


def diagonal_scale(A: CsrMatrix) -> tuple[CsrMatrix, np.ndarray, np.ndarray]:
    """Symmetric scaling ``D A D`` with ``D = diag(|a_ii|^-1/2)``.

    Returns the scaled matrix and the row and column scale vectors (equal here).
    The solution of the scaled system maps back as ``x = col_scale * x_scaled``.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError("diagonal_scale needs a square matrix")
    d = np.abs(A.diagonal())
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise SingularScalingError(int(zero[0]))
    s = 1.0 / np.sqrt(d)
    rows = A.row_indices()
    vals = s[rows] * A.values * s[A.col_idx]
    # exact unit magnitude on the diagonal, independent of rounding in s*s
    on = rows == A.col_idx
    vals[on] = np.sign(A.values[on])
    return CsrMatrix(A.n_rows, A.n_cols, A.row_ptr, A.col_idx, vals), s, s.copy()


def _pattern_adjacency(A: CsrMatrix) -> list[np.ndarray]:
    """Sorted neighbour lists of the symmetrized pattern, self loops dropped."""
    n = A.n_rows
    rows = A.row_indices()
    r = np.concatenate((rows, A.col_idx))
    c = np.concatenate((A.col_idx, rows))
    keep = r != c
    S = from_coo(n, n, r[keep], c[keep], np.ones(int(keep.sum())))
    return [S.col_idx[S.row_ptr[i] : S.row_ptr[i + 1]] for i in range(n)]


def _bfs_levels(adj, degree, start, active):
    """Level structure rooted at ``start`` restricted to ``active`` vertices."""
    level = {start: 0}
    frontier = [start]
    last = [start]
    depth = 0
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj[v]:
                w = int(w)
                if active[w] and w not in level:
                    level[w] = depth + 1
                    nxt.append(w)
        if nxt:
            last = nxt
            depth += 1
        frontier = nxt
    return depth, last, level


def _pseudo_peripheral(adj, degree, start, active) -> int:
    """George-Liu pseudo-peripheral node search."""
    depth, last, _ = _bfs_levels(adj, degree, start, active)
    while True:
        cand = min(last, key=lambda v: (degree[v], v))
        d2, last2, _ = _bfs_levels(adj, degree, cand, active)
        if d2 <= depth:
            return start
        start, depth, last = cand, d2, last2


def rcm_ordering(A: CsrMatrix) -> Permutation:
    """Reverse Cuthill-McKee ordering of the pattern of ``A + A^T``.

    Each connected component is started from a pseudo-peripheral node
    (components are visited by lowest original index). Neighbours are queued by
    ascending degree, ties broken by ascending original index.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError("rcm_ordering needs a square matrix")
    n = A.n_rows
    adj = _pattern_adjacency(A)
    degree = np.array([a.size for a in adj], dtype=np.int64)
    unvisited = np.ones(n, dtype=bool)
    order: list[int] = []
    for seed in range(n):
        if not unvisited[seed]:
            continue
        root = _pseudo_peripheral(adj, degree, seed, unvisited)
        unvisited[root] = False
        queue = deque([root])
        while queue:
            v = queue.popleft()
            order.append(v)
            nb = [int(w) for w in adj[v] if unvisited[w]]
            nb.sort(key=lambda w: (degree[w], w))
            for w in nb:
                unvisited[w] = False
                queue.append(w)
    return Permutation(np.array(order[::-1], dtype=np.int64))


def apply_permutation(A: CsrMatrix, rowp: Permutation, colp: Permutation) -> CsrMatrix:
    """Return ``B`` with ``B[rowp.inverse[i], colp.inverse[j]] = A[i, j]``.

    That is, row ``rowp.forward[r]`` of ``A`` becomes row ``r`` of ``B``.
    """
    if rowp.size != A.n_rows or colp.size != A.n_cols:
        raise DimensionError("permutation size does not match matrix")
    rows = rowp.inverse[A.row_indices()]
    cols = colp.inverse[A.col_idx]
    return from_coo(A.n_rows, A.n_cols, rows, cols, A.values)


@dataclass
class ReorderResult:
    """Everything needed to map a system into banded form and back."""

    matrix: CsrMatrix
    n_original: int
    kept: np.ndarray
    removed: np.ndarray
    row_perm: Permutation
    col_perm: Permutation
    row_scale: np.ndarray
    col_scale: np.ndarray
    before: tuple[BandInfo, float, float]
    after: tuple[BandInfo, float, float]

    def map_rhs(self, f: np.ndarray) -> np.ndarray:
        """Original right-hand side -> banded-system right-hand side."""
        g = np.asarray(f, dtype=np.float64)[self.kept]
        g = (self.row_scale * g.T).T
        return self.row_perm.apply(g)

    def unmap_solution(self, y: np.ndarray, f: np.ndarray | None = None, A: CsrMatrix | None = None) -> np.ndarray:
        """Banded-system solution -> solution on the kept indices of the original.

        Removed indices carry a pure diagonal equation; when the original ``A``
        and ``f`` are supplied they are filled in as ``f_i / a_ii`` and a full
        length vector is returned.
        """
        z = self.col_perm.unapply(np.asarray(y))
        z = (self.col_scale * z.T).T
        if f is None or A is None:
            return z
        f = np.asarray(f, dtype=np.float64)
        x = np.zeros(f.shape)
        x[self.kept] = z
        if self.removed.size:
            d = A.diagonal()[self.removed]
            x[self.removed] = (f[self.removed].T / d).T
        return x


def reorder(A: CsrMatrix, scale: bool = True, rcm: bool = True) -> ReorderResult:
    """Strip, scale and RCM-reorder ``A`` (symmetric permutation)."""
    before = band_metrics(A)
    B, kept, removed = strip_disconnected(A)
    if scale:
        B, rs, cs = diagonal_scale(B)
    else:
        rs = cs = np.ones(B.n_rows)
    perm = rcm_ordering(B) if rcm else Permutation.identity(B.n_rows)
    B = apply_permutation(B, perm, perm)
    d = B.diagonal()
    if scale and np.any(d == 0):
        raise SingularScalingError(int(perm.forward[np.flatnonzero(d == 0)[0]]))
    return ReorderResult(B, A.n_rows, kept, removed, perm, perm, rs, cs, before, band_metrics(B))
