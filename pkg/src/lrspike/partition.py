"""Block-tridiagonal partitioning into diagonal blocks and k x k couplings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse_core import CsrMatrix, DimensionError, band_metrics


class LayoutInfeasibleError(ValueError):
    pass


class NotBlockTridiagonalError(ValueError):
    def __init__(self, row: int, col: int):
        self.row, self.col = row, col
        super().__init__(
            f"nonzero at ({row}, {col}) lies outside the block-tridiagonal pattern; "
            "increase k or decrease p"
        )


@dataclass(frozen=True)
class PartitionLayout:
    p: int
    sizes: tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.p < 1 or len(self.sizes) != self.p:
            raise LayoutInfeasibleError("need p >= 1 partition sizes")
        if self.k < 0:
            raise LayoutInfeasibleError("k must be non-negative")
        if self.p > 1 and min(self.sizes) <= self.k:
            raise LayoutInfeasibleError(f"every partition needs more than k={self.k} rows")

    @property
    def n(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate(([0], np.cumsum(self.sizes)[:-1])))

    def rows(self, i: int) -> slice:
        o = self.offsets[i]
        return slice(o, o + self.sizes[i])

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.rows(i)] for i in range(self.p)]


def make_layout(n: int, p: int, k: int) -> PartitionLayout:
    """Balanced layout: the first ``n mod p`` partitions get one extra row."""
    if p < 1:
        raise LayoutInfeasibleError("p must be at least 1")
    if k < 0:
        raise LayoutInfeasibleError("k must be non-negative")
    if p > 1 and n < p * (k + 1):
        raise LayoutInfeasibleError(
            f"n={n} too small for p={p}, k={k}: need n >= p*(k+1) = {p * (k + 1)}"
        )
    if n < p:
        raise LayoutInfeasibleError(f"n={n} smaller than p={p}")
    base, extra = divmod(n, p)
    sizes = tuple(base + 1 if i < extra else base for i in range(p))
    return PartitionLayout(p, sizes, k)


def suggest_k(A: CsrMatrix) -> int:
    return band_metrics(A)[0].k


@dataclass(frozen=True)
class PartitionBlocks:
    """Diagonal blocks plus dense couplings.

    ``B[i]`` (i = 0..p-2) is the k x k block in the last k rows of partition i
    and the first k columns of partition i+1. ``C[i]`` (i = 1..p-1) is the
    k x k block in the first k rows of partition i and the last k columns of
    partition i-1; ``C[0]`` is None, as is the unused ``B[p-1]``.
    """

    layout: PartitionLayout
    A: list
    B: list
    C: list

    def coupling(self, i: int, side: str) -> np.ndarray:
        return self.B[i] if side == "T" else self.C[i]

    def to_dense(self) -> np.ndarray:
        """Reassemble the full matrix from the blocks."""
        lay, k = self.layout, self.layout.k
        out = np.zeros((lay.n, lay.n))
        offs = lay.offsets
        for i in range(lay.p):
            r = lay.rows(i)
            out[r, r] = self.A[i].to_dense()
            if i < lay.p - 1 and k:
                e = offs[i] + lay.sizes[i]
                out[e - k : e, e : e + k] = self.B[i]
            if i > 0 and k:
                out[offs[i] : offs[i] + k, offs[i] - k : offs[i]] = self.C[i]
        return out


def extract_blocks(A: CsrMatrix, layout: PartitionLayout) -> PartitionBlocks:
    if A.n_rows != A.n_cols or A.n_rows != layout.n:
        raise DimensionError(f"matrix is {A.shape}, layout expects n={layout.n}")
    k, p = layout.k, layout.p
    offs = np.array(layout.offsets + (layout.n,))
    rows = A.row_indices()
    cols = A.col_idx
    part_r = np.searchsorted(offs, rows, side="right") - 1
    part_c = np.searchsorted(offs, cols, side="right") - 1
    same = part_r == part_c
    up = part_c == part_r + 1
    down = part_c == part_r - 1
    # coupling entries must fall in the k x k corner
    up_ok = up & (rows >= offs[part_r + 1] - k) & (cols < offs[np.minimum(part_c, p - 1)] + k)
    down_ok = down & (rows < offs[part_r] + k) & (cols >= offs[np.maximum(part_r, 1)] - k)
    valid = same | up_ok | down_ok
    bad = np.flatnonzero(~valid & (A.values != 0))
    if bad.size:
        j = bad[0]
        raise NotBlockTridiagonalError(int(rows[j]), int(cols[j]))

    Ablocks = [A.submatrix(layout.rows(i), layout.rows(i)) for i in range(p)]
    B = [None] * p
    C = [None] * p
    for i in range(p - 1):
        e = offs[i + 1]
        B[i] = np.zeros((k, k))
        C[i + 1] = np.zeros((k, k))
        m = up_ok & (part_r == i)
        B[i][rows[m] - (e - k), cols[m] - e] = A.values[m]
        m = down_ok & (part_r == i + 1)
        C[i + 1][rows[m] - e, cols[m] - (e - k)] = A.values[m]
    return PartitionBlocks(layout, Ablocks, B, C)
