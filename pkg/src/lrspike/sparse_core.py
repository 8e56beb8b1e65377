"""Compressed-row matrix container, Matrix Market I/O and band metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sps

PathLike = Union[str, Path]


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFieldError(MatrixMarketError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class CsrMatrix:
    """Real sparse matrix in compressed-row storage.

    Column indices are strictly increasing within each row and no duplicates
    are stored. Instances are treated as immutable.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rp = np.asarray(self.row_ptr, dtype=np.int64)
        ci = np.asarray(self.col_idx, dtype=np.int64)
        va = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", rp)
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", va)
        if rp.shape != (self.n_rows + 1,) or rp[0] != 0 or rp[-1] != ci.size:
            raise ValueError("row_ptr inconsistent with n_rows / nnz")
        if ci.size != va.size:
            raise ValueError("col_idx and values differ in length")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing within each row
            inc = np.diff(ci) > 0
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[rp[1:-1][rp[1:-1] < ci.size]] = True
            if not np.all(inc | row_start[1:]):
                raise ValueError("column indices must be strictly increasing within rows")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        rows = self.row_indices()
        on = rows == self.col_idx
        d[rows[on]] = self.values[on]
        return d

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def to_scipy(self) -> sps.csr_matrix:
        return sps.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape
        )

    def transpose(self) -> "CsrMatrix":
        return from_coo(self.n_cols, self.n_rows, self.col_idx, self.row_indices(), self.values)

    def submatrix(self, rows: slice, cols: slice) -> "CsrMatrix":
        """Contiguous block ``A[rows, cols]`` as a new CSR matrix."""
        r0, r1, _ = rows.indices(self.n_rows)
        c0, c1, _ = cols.indices(self.n_cols)
        lo, hi = self.row_ptr[r0], self.row_ptr[r1]
        ci = self.col_idx[lo:hi]
        keep = (ci >= c0) & (ci < c1)
        local_rows = np.repeat(np.arange(r1 - r0), np.diff(self.row_ptr[r0 : r1 + 1]))
        counts = np.bincount(local_rows[keep], minlength=r1 - r0)
        row_ptr = np.concatenate(([0], np.cumsum(counts)))
        return CsrMatrix(r1 - r0, c1 - c0, row_ptr, ci[keep] - c0, self.values[lo:hi][keep])

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class BandInfo:
    upper_half_bw: int
    lower_half_bw: int

    @property
    def k(self) -> int:
        return max(self.upper_half_bw, self.lower_half_bw)


def from_coo(n_rows, n_cols, rows, cols, values, drop_zeros=False) -> CsrMatrix:
    """Build a CSR matrix from coordinate triplets, summing duplicates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise DimensionError("coordinate index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    if rows.size:
        new = np.ones(rows.size, dtype=bool)
        new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(new)
        values = np.add.reduceat(values, starts)
        rows, cols = rows[starts], cols[starts]
    if drop_zeros:
        nz = values != 0
        rows, cols, values = rows[nz], cols[nz], values[nz]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
    return CsrMatrix(n_rows, n_cols, row_ptr, cols, values)


def from_dense(a, tol: float = 0.0) -> CsrMatrix:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    r, c = np.nonzero(np.abs(a) > tol)
    return from_coo(a.shape[0], a.shape[1], r, c, a[r, c])


def from_scipy(m) -> CsrMatrix:
    m = sps.coo_matrix(m)
    return from_coo(m.shape[0], m.shape[1], m.row, m.col, m.data)


def identity(n: int) -> CsrMatrix:
    return CsrMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))


# ---------------------------------------------------------------------------
# Matrix Market
# ---------------------------------------------------------------------------

_SYMMETRIES = ("general", "symmetric", "skew-symmetric")


def read_matrix_market(path: PathLike) -> CsrMatrix:
    """Read a coordinate-format Matrix Market file.

    Symmetric and skew-symmetric storage is expanded, duplicate entries are
    summed and indices are converted to 0-based. ``.gz`` files are accepted.
    """
    path = Path(path)
    if path.suffix == ".gz":
        import gzip

        with gzip.open(path, "rt") as fh:
            text = fh.read()
    else:
        text = path.read_text()
    return parse_matrix_market(text)


def parse_matrix_market(text: str) -> CsrMatrix:
    lines = text.splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing %%MatrixMarket banner", 1)
    obj, fmt, field, symm = (h.lower() for h in header[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1)
    if fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format {fmt!r}; only coordinate is read", 1)
    if field == "complex":
        raise UnsupportedFieldError("complex field is not supported", 1)
    if field not in ("real", "integer", "double", "pattern"):
        raise MatrixMarketError(f"unknown field {field!r}", 1)
    if symm not in _SYMMETRIES:
        raise MatrixMarketError(f"unsupported symmetry {symm!r}", 1)

    i = 1
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("%")):
        i += 1
    if i == len(lines):
        raise MatrixMarketError("missing size line", i)
    try:
        n_rows, n_cols, nnz = (int(t) for t in lines[i].split())
    except ValueError:
        raise MatrixMarketError("size line must hold three integers", i + 1) from None

    ncol_expected = 2 if field == "pattern" else 3
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.ones(nnz)
    count = 0
    for lineno in range(i + 2, len(lines) + 1):
        raw = lines[lineno - 1]
        s = raw.strip()
        if not s or s.startswith("%"):
            continue
        tok = s.split()
        if len(tok) != ncol_expected:
            raise MatrixMarketError(f"expected {ncol_expected} fields, got {len(tok)}", lineno)
        if count >= nnz:
            raise MatrixMarketError(f"more than {nnz} entries", lineno)
        try:
            r, c = int(tok[0]), int(tok[1])
            if ncol_expected == 3:
                vals[count] = float(tok[2])
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry {s!r}", lineno) from None
        if not (1 <= r <= n_rows and 1 <= c <= n_cols):
            raise MatrixMarketError(f"index ({r}, {c}) out of range", lineno)
        rows[count], cols[count] = r - 1, c - 1
        count += 1
    if count != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {count}", len(lines))

    if symm != "general":
        off = rows != cols
        sign = -1.0 if symm == "skew-symmetric" else 1.0
        rows, cols, vals = (
            np.concatenate((rows, cols[off])),
            np.concatenate((cols, rows[off])),
            np.concatenate((vals, sign * vals[off])),
        )
    return from_coo(n_rows, n_cols, rows, cols, vals)


def write_matrix_market(A: CsrMatrix, path: PathLike, comment: str | None = None) -> None:
    """Write ``A`` as a general real coordinate file.

    Values use ``repr`` formatting so a read-back is bit-exact.
    """
    out = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        out.extend("%" + ln for ln in comment.splitlines())
    out.append(f"{A.n_rows} {A.n_cols} {A.nnz}")
    rows = A.row_indices() + 1
    cols = A.col_idx + 1
    out.extend(f"{r} {c} {v!r}" for r, c, v in zip(rows.tolist(), cols.tolist(), A.values.tolist()))
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Products and metrics
# ---------------------------------------------------------------------------

def spmv(A: CsrMatrix, X: np.ndarray, accumulate_into: np.ndarray | None = None) -> np.ndarray:
    """Return ``A @ X`` (plus ``accumulate_into`` when given).

    Each row is summed in ascending column order, so results are deterministic.
    ``X`` may be a vector or a 2-D block of columns.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != A.n_cols:
        raise DimensionError(f"A has {A.n_cols} columns but X has {X.shape[0]} rows")
    Y = A.to_scipy() @ X
    if accumulate_into is not None:
        if accumulate_into.shape != Y.shape:
            raise DimensionError("accumulator shape mismatch")
        accumulate_into += Y
        return accumulate_into
    return Y


def band_metrics(A: CsrMatrix) -> tuple[BandInfo, float, float]:
    """Half bandwidths, diagonal weight and band density of a square matrix.

    ``diag_weight`` is sum(|a_ii|) / sum(|a_ij|); ``band_density`` is
    nnz / ((ku + kl + 1) * n).
    """
    if A.n_rows != A.n_cols:
        raise DimensionError("band_metrics needs a square matrix")
    n = A.n_rows
    if n == 0:
        return BandInfo(0, 0), 0.0, 0.0
    off = A.col_idx - A.row_indices()
    ku = int(max(off.max(initial=0), 0))
    kl = int(max(-off.min(initial=0), 0))
    absval = np.abs(A.values)
    total = absval.sum()
    diag_weight = float(absval[off == 0].sum() / total) if total > 0 else 0.0
    band_density = A.nnz / ((ku + kl + 1) * n)
    return BandInfo(ku, kl), diag_weight, float(band_density)
