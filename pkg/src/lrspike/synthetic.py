"""Seeded test matrices."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .sparse_core import CsrMatrix, from_scipy


def random_banded(
    n: int,
    k: int,
    seed: int = 0,
    dominance: float | None = 2.0,
    density: float = 1.0,
    symmetric: bool = False,
) -> CsrMatrix:
    """Random banded matrix with half bandwidth ``k``.

    Off-diagonal entries are uniform on [-1, 1] (kept with probability
    ``density``). With ``dominance = d`` the diagonal is ``d`` times the
    off-diagonal absolute row sum, with a random sign; ``None`` leaves a
    random diagonal entry.
    """
    rng = np.random.default_rng(seed)
    rows, cols = [], []
    for off in range(-k, k + 1):
        if off == 0:
            continue
        i = np.arange(max(0, -off), min(n, n - off))
        keep = rng.random(i.size) < density
        rows.append(i[keep])
        cols.append(i[keep] + off)
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    v = rng.uniform(-1.0, 1.0, r.size)
    M = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    if symmetric:
        M = (M + M.T) * 0.5
    rowsum = np.asarray(abs(M).sum(axis=1)).ravel()
    if dominance is None:
        diag = rng.uniform(-1.0, 1.0, n)
    else:
        sign = 1.0 if symmetric else rng.choice([-1.0, 1.0], n)
        diag = sign * dominance * np.maximum(rowsum, 1.0)
    M = M + sp.diags(diag)
    return from_scipy(M)


def spd_banded(n: int, k: int, seed: int = 0, dominance: float = 1.5) -> CsrMatrix:
    """Symmetric positive definite banded matrix (strict diagonal dominance)."""
    return random_banded(n, k, seed, dominance, symmetric=True)


def block_diagonal(sizes, seed: int = 0) -> CsrMatrix:
    rng = np.random.default_rng(seed)
    blocks = []
    for s in sizes:
        B = rng.uniform(-1, 1, (s, s))
        B += np.diag(np.abs(B).sum(axis=1) + 1.0)
        blocks.append(B)
    return from_scipy(sp.block_diag(blocks, format="csr"))


def convection_diffusion_2d(nx: int, ny: int, wind=(0.0, 0.0), shift: float = 0.0) -> CsrMatrix:
    """Five-point upwind convection-diffusion on an ``nx`` by ``ny`` grid.

    Natural ordering, so the half bandwidth is ``nx``. ``wind`` is the cell
    Peclet number per direction; ``shift`` is subtracted from the diagonal
    (a positive shift makes the operator indefinite).
    """
    def one_d(m, w):
        main = np.full(m, 2.0 + abs(w))
        lo = np.full(m - 1, -1.0 - max(w, 0.0))
        up = np.full(m - 1, -1.0 - max(-w, 0.0))
        return sp.diags([lo, main, up], [-1, 0, 1])

    Ax = one_d(nx, wind[0])
    Ay = one_d(ny, wind[1])
    M = sp.kron(sp.identity(ny), Ax) + sp.kron(Ay, sp.identity(nx))
    if shift:
        M = M - shift * sp.identity(nx * ny)
    return from_scipy(M.tocsr())


def laplacian_2d(nx: int, ny: int) -> CsrMatrix:
    return convection_diffusion_2d(nx, ny)


def random_convection_diffusion_2d(nx: int, ny: int, seed: int = 0, wind_scale: float = 1.0) -> CsrMatrix:
    """Upwind convection-diffusion with random coefficients on an ``nx`` by
    ``ny`` grid (Dirichlet boundary, natural ordering).

    Edge conductances are uniform on [0.5, 1.5] and the cell wind components
    are normal with standard deviation ``wind_scale``, so the matrix is
    nonsymmetric and weakly diagonally dominant.
    """
    rng = np.random.default_rng(seed)
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    wind = rng.normal(0.0, wind_scale, (2, ny, nx))
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for axis in (0, 1):  # 0: x direction, 1: y direction
        if axis == 0:
            a, b = idx[:, :-1].ravel(), idx[:, 1:].ravel()
            w = wind[0][:, :-1].ravel()
        else:
            a, b = idx[:-1, :].ravel(), idx[1:, :].ravel()
            w = wind[1][:-1, :].ravel()
        cond = rng.uniform(0.5, 1.5, a.size)
        ab = -(cond + np.maximum(-w, 0.0))  # row a, column b
        ba = -(cond + np.maximum(w, 0.0))
        rows += [a, b]
        cols += [b, a]
        vals += [ab, ba]
        np.add.at(diag, a, -ab)
        np.add.at(diag, b, -ba)
    # Dirichlet boundary: one unit conductance per missing neighbour
    missing = 4 - (np.bincount(np.concatenate(rows), minlength=n))
    diag += missing
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return from_scipy(M.tocsr())
