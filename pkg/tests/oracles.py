"""Dense reference constructions shared by the tests."""

import numpy as np


def dense_banded(n, k, rng, dominance=2.0):
    A = rng.uniform(-1, 1, (n, n))
    i, j = np.indices((n, n))
    A[np.abs(i - j) > k] = 0.0
    np.fill_diagonal(A, 0.0)
    A[np.arange(n), np.arange(n)] = dominance * np.maximum(np.abs(A).sum(axis=1), 1.0) * rng.choice([-1, 1], n)
    return A


def block_diag_inverse_times(Ad, layout):
    """``D^{-1} Ad`` with ``D`` the dense diagonal blocks of ``Ad``."""
    out = np.empty_like(Ad)
    for i in range(layout.p):
        r = layout.rows(i)
        out[r] = np.linalg.solve(Ad[r, r], Ad[r])
    return out


def tip_indices(layout):
    k = layout.k
    idx = []
    for i in range(layout.p):
        r = layout.rows(i)
        idx += list(range(r.start, r.start + k)) + list(range(r.stop - k, r.stop))
    return np.array(idx)


def dense_reduced(Ad, layout):
    """``S_r`` as the restriction of ``S = D^{-1} A`` to the tip rows and columns."""
    S = block_diag_inverse_times(Ad, layout)
    t = tip_indices(layout)
    return S[np.ix_(t, t)]


def dense_truncated(T_lr, W_lr, p, k):
    """Assemble the truncated reduced matrix from low-rank spikes."""
    n = 2 * k * p
    M = np.eye(n)
    for i in range(p - 1):
        Tb = T_lr[i].u_bottom @ (T_lr[i].sigma[:, None] * T_lr[i].v)
        Wt = W_lr[i + 1].u_top @ (W_lr[i + 1].sigma[:, None] * W_lr[i + 1].v)
        rb = slice((2 * i + 1) * k, (2 * i + 2) * k)  # x_{i,b}
        rt = slice((2 * i + 2) * k, (2 * i + 3) * k)  # x_{i+1,t}
        M[rb, rt] = Tb
        M[rt, rb] = Wt
    return M


def dense_lowrank_reduced(T_lr, W_lr, p, k):
    """Assemble the low-rank reduced matrix (all four tip blocks)."""
    n = 2 * k * p
    M = np.eye(n)
    for i in range(p):
        top = slice(2 * i * k, (2 * i + 1) * k)
        bot = slice((2 * i + 1) * k, (2 * i + 2) * k)
        if i < p - 1:
            s = T_lr[i]
            c = slice((2 * i + 2) * k, (2 * i + 3) * k)
            M[top, c] = s.u_top @ (s.sigma[:, None] * s.v)
            M[bot, c] = s.u_bottom @ (s.sigma[:, None] * s.v)
        if i > 0:
            s = W_lr[i]
            c = slice((2 * i - 1) * k, 2 * i * k)
            M[top, c] = s.u_top @ (s.sigma[:, None] * s.v)
            M[bot, c] = s.u_bottom @ (s.sigma[:, None] * s.v)
    return M
