"""Sparse LU of the diagonal blocks (left-looking, partial pivoting).

The factorization follows Gilbert and Peierls: column ``k`` of ``L`` and ``U``
comes from a sparse triangular solve with the already computed columns of
``L``, visiting only the pivot positions reachable from the pattern of
``A[:, k]``. Row pivoting picks the largest candidate, preferring the diagonal
on ties.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .sparse_core import CsrMatrix, DimensionError


class SingularBlockError(ArithmeticError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"exact zero pivot in column {column}")


@dataclass(frozen=True)
class BlockFactor:
    """``A[prow, :][:, q] = L U`` with unit lower ``L``.

    ``L`` and ``U`` are stored column-wise with row indices already expressed
    in pivot positions, so both are triangular in the usual sense.
    """

    n: int
    prow: np.ndarray  # prow[j] = original row pivoted at position j
    q: np.ndarray  # column pre-ordering
    L_rows: list
    L_vals: list
    U_rows: list
    U_vals: list
    U_diag: np.ndarray
    dtype: type = np.float64

    @property
    def nnz_lu(self) -> int:
        return int(self.n + sum(r.size for r in self.L_rows) + sum(r.size for r in self.U_rows))

    @property
    def fill(self) -> int:
        """Entries of ``L + U`` beyond the strictly structural minimum ``n``."""
        return self.nnz_lu - self.n


def factorize_block(A: CsrMatrix, preorder: bool = False, single_precision: bool = False) -> BlockFactor:
    """LU-factorize a square sparse block.

    ``preorder=True`` applies an RCM symmetric pre-ordering to limit fill.
    ``single_precision`` rounds the stored factors to float32; solves then run
    in single precision.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError("block must be square")
    n = A.n_rows
    if preorder and n > 1:
        from .reorder import rcm_ordering

        q = rcm_ordering(A).forward
    else:
        q = np.arange(n)
    csc = A.to_scipy().tocsc()
    csc.sort_indices()

    x = np.zeros(n)
    pinv = np.full(n, -1, dtype=np.int64)
    prow = np.empty(n, dtype=np.int64)
    stamp = np.full(n, -1, dtype=np.int64)
    queued = np.zeros(n, dtype=bool)
    L_rows: list = [None] * n  # original row indices until the end
    L_vals: list = [None] * n
    U_rows: list = [None] * n
    U_vals: list = [None] * n
    U_diag = np.empty(n)

    for k in range(n):
        c = q[k]
        lo, hi = csc.indptr[c], csc.indptr[c + 1]
        rows0 = csc.indices[lo:hi]
        x[rows0] = csc.data[lo:hi]
        stamp[rows0] = k
        touched = [rows0]
        heap: list[int] = []
        pos = pinv[rows0]
        pos = pos[pos >= 0]
        queued[pos] = True
        for j in pos.tolist():
            heapq.heappush(heap, j)
        visited: list[int] = []
        while heap:
            j = heapq.heappop(heap)
            queued[j] = False
            visited.append(j)
            xj = x[prow[j]]
            if xj == 0.0:
                continue
            lr = L_rows[j]
            if lr.size == 0:
                continue
            x[lr] -= L_vals[j] * xj
            fresh = lr[stamp[lr] != k]
            if fresh.size:
                stamp[fresh] = k
                touched.append(fresh)
            pj = pinv[lr]
            pj = pj[pj >= 0]
            pj = pj[~queued[pj]]
            if pj.size:
                queued[pj] = True
                for jj in pj.tolist():
                    heapq.heappush(heap, jj)

        pattern = np.concatenate(touched)
        piv_pos = pinv[pattern]
        upper = pattern[piv_pos >= 0]
        cand = pattern[piv_pos < 0]
        if cand.size == 0:
            x[pattern] = 0.0
            raise SingularBlockError(k)
        mags = np.abs(x[cand])
        best = mags.max()
        if best == 0.0:
            x[pattern] = 0.0
            raise SingularBlockError(k)
        diag_row = c
        if pinv[diag_row] < 0 and stamp[diag_row] == k and abs(x[diag_row]) >= best:
            piv = diag_row
        else:
            piv = int(cand[np.argmax(mags)])
        pivot = x[piv]
        pinv[piv] = k
        prow[k] = piv

        up_pos = pinv[upper]
        order = np.argsort(up_pos)
        up_vals = x[upper][order]
        keep = up_vals != 0.0
        U_rows[k] = up_pos[order][keep]
        U_vals[k] = up_vals[keep]
        U_diag[k] = pivot

        lrows = cand[cand != piv]
        lvals = x[lrows] / pivot
        keep = lvals != 0.0
        L_rows[k] = lrows[keep]
        L_vals[k] = lvals[keep]
        x[pattern] = 0.0

    L_pos = [pinv[r] for r in L_rows]
    dtype = np.float32 if single_precision else np.float64
    if single_precision:
        L_vals = [v.astype(dtype) for v in L_vals]
        U_vals = [v.astype(dtype) for v in U_vals]
        U_diag = U_diag.astype(dtype)
    return BlockFactor(n, prow, q, L_pos, L_vals, U_rows, U_vals, U_diag, dtype)


def _as_block(F: BlockFactor, rhs) -> tuple[np.ndarray, bool]:
    rhs = np.asarray(rhs)
    if rhs.shape[0] != F.n:
        raise DimensionError(f"factor has n={F.n}, right-hand side has {rhs.shape[0]} rows")
    vec = rhs.ndim == 1
    return (rhs[:, None] if vec else rhs), vec


def solve_block(F: BlockFactor, rhs) -> np.ndarray:
    """Return ``A^{-1} rhs`` for a vector or a block of columns."""
    R, vec = _as_block(F, rhs)
    y = R[F.prow].astype(F.dtype, copy=True)
    for j in range(F.n):
        r = F.L_rows[j]
        if r.size:
            y[r] -= F.L_vals[j][:, None] * y[j]
    for j in range(F.n - 1, -1, -1):
        y[j] /= F.U_diag[j]
        r = F.U_rows[j]
        if r.size:
            y[r] -= F.U_vals[j][:, None] * y[j]
    x = np.empty(y.shape)
    x[F.q] = y
    return x[:, 0] if vec else x


def solve_block_adjoint(F: BlockFactor, rhs) -> np.ndarray:
    """Return ``A^{-T} rhs``."""
    R, vec = _as_block(F, rhs)
    w = R[F.q].astype(F.dtype, copy=True)
    for j in range(F.n):
        r = F.U_rows[j]
        if r.size:
            w[j] -= (F.U_vals[j][:, None] * w[r]).sum(axis=0)
        w[j] /= F.U_diag[j]
    for j in range(F.n - 1, -1, -1):
        r = F.L_rows[j]
        if r.size:
            w[j] -= (F.L_vals[j][:, None] * w[r]).sum(axis=0)
    x = np.empty(w.shape)
    x[F.prow] = w
    return x[:, 0] if vec else x
