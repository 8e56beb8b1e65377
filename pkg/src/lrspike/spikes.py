"""Spike matrices: exact (padded block solves) and randomized low-rank SVD.

For partition ``i`` with factor ``F`` of its diagonal block,

* the right spike ``T = A_i^{-1} [0; B_i]`` couples to partition ``i+1``,
* the left spike ``W = A_i^{-1} [C_i; 0]`` couples to partition ``i-1``.

Only the top and bottom ``k`` rows ("tips") enter the reduced system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .block_solver import BlockFactor, solve_block, solve_block_adjoint

SIDES = ("T", "W")
RANK_COLLAPSE_RTOL = 1e-14


class SpikeParameterError(ValueError):
    pass


class RankCollapseWarning(RuntimeWarning):
    pass


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise SpikeParameterError(f"side must be 'T' or 'W', got {side!r}")


def pad_coupling(n: int, coupling: np.ndarray, side: str) -> np.ndarray:
    """Embed a k-row block in an n-row zero block: bottom rows for T, top for W."""
    k = coupling.shape[0]
    out = np.zeros((n,) + coupling.shape[1:])
    if k:
        if side == "T":
            out[n - k :] = coupling
        else:
            out[:k] = coupling
    return out


@dataclass(frozen=True)
class FullSpike:
    values: np.ndarray  # n_i x k
    side: str

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def tips(self):
        return spike_tips(self, self.k)


@dataclass(frozen=True)
class LowRankSpike:
    """``u @ diag(sigma) @ v`` approximating a spike; ``u`` has orthonormal
    columns and ``v`` orthonormal rows."""

    u: np.ndarray  # n_i x r
    sigma: np.ndarray  # r
    v: np.ndarray  # r x k
    side: str
    rank_collapsed: bool = False
    requested_rank: int = field(default=-1)

    @property
    def rank(self) -> int:
        return int(self.sigma.size)

    @property
    def k(self) -> int:
        return self.v.shape[1]

    @property
    def u_top(self) -> np.ndarray:
        return self.u[: self.k]

    @property
    def u_bottom(self) -> np.ndarray:
        return self.u[self.u.shape[0] - self.k :]

    def dense(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v

    @classmethod
    def zero(cls, n: int, k: int, side: str) -> "LowRankSpike":
        return cls(np.zeros((n, 0)), np.zeros(0), np.zeros((0, k)), side, False, 0)


def compute_full_spike(F: BlockFactor, coupling: np.ndarray, side: str) -> FullSpike:
    _check_side(side)
    k = coupling.shape[0]
    if F.n < k:
        raise SpikeParameterError(f"block of size {F.n} smaller than k={k}")
    return FullSpike(solve_block(F, pad_coupling(F.n, coupling, side)), side)


def spike_tips(s, k: int):
    """Top and bottom ``k`` rows of a spike.

    For a :class:`FullSpike` the tips are dense blocks; for a
    :class:`LowRankSpike` they are the corresponding rows of ``u`` (the
    factors ``sigma`` and ``v`` are shared).
    """
    mat = s.values if isinstance(s, FullSpike) else s.u
    n = mat.shape[0]
    if k > n:
        raise SpikeParameterError(f"k={k} exceeds spike height {n}")
    return mat[:k], mat[n - k :]


def _orth(Y: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(Y)
    return Q


def spike_rng(seed: int, partition: int, side: str) -> np.random.Generator:
    """Independent counter-based stream for one spike."""
    ss = np.random.SeedSequence(seed, spawn_key=(partition, SIDES.index(side)))
    return np.random.Generator(np.random.Philox(ss))


def randomized_spike_svd(
    F: BlockFactor,
    coupling: np.ndarray,
    side: str,
    n_svd: int,
    oversample: int | None = None,
    passes: int = 2,
    seed: int = 0,
    partition: int = 0,
    rng: np.random.Generator | None = None,
) -> LowRankSpike:
    """Rank-``n_svd`` SVD of a spike without forming it.

    Randomized range finder with a Gaussian test block of ``n_svd +
    oversample`` columns. The spike is applied by padded block solves and its
    transpose by adjoint solves, alternating for ``passes`` applications in
    total; the final application projects onto the last basis and a small
    dense SVD finishes the job. Singular values below ``1e-14 * sigma_1`` are
    dropped (with a :class:`RankCollapseWarning`).
    """
    _check_side(side)
    k = coupling.shape[0]
    n = F.n
    if oversample is None:
        oversample = -(-n_svd // 2)
    if not 0 <= n_svd <= k:
        raise SpikeParameterError(f"n_svd={n_svd} must lie in [0, k={k}]")
    if oversample < 0:
        raise SpikeParameterError("oversample must be non-negative")
    if passes < 2:
        raise SpikeParameterError("at least two passes are needed")
    if n_svd == 0:
        return LowRankSpike.zero(n, k, side)
    oversample = min(oversample, k - n_svd)
    l = n_svd + oversample
    if rng is None:
        rng = spike_rng(seed, partition, side)

    def apply(X):  # spike @ X, X is k x m
        return solve_block(F, pad_coupling(n, coupling @ X, side))

    def apply_t(Y):  # spike^T @ Y, Y is n x m
        Z = solve_block_adjoint(F, Y)
        tip = Z[n - k :] if side == "T" else Z[:k]
        return coupling.T @ tip

    omega = rng.standard_normal((k, l))
    Q = _orth(apply(omega))
    on_range = True  # Q spans (an approximation of) the column space
    for _ in range(passes - 2):
        if on_range:
            Q = _orth(apply_t(Q))
        else:
            Q = _orth(apply(Q))
        on_range = not on_range
    if on_range:
        small = apply_t(Q).T  # l x k, equals Q^T spike
        Uh, s, Vt = np.linalg.svd(small, full_matrices=False)
        u, v = Q @ Uh, Vt
    else:
        small = apply(Q)  # n x l, equals spike Q
        Uh, s, Vt = np.linalg.svd(small, full_matrices=False)
        u, v = Uh, Vt @ Q.T
    u, s, v = u[:, :n_svd], s[:n_svd], v[:n_svd]
    collapsed = False
    if s.size == 0 or s[0] == 0.0:
        keep = 0
    else:
        keep = int(np.count_nonzero(s >= RANK_COLLAPSE_RTOL * s[0]))
    if keep < n_svd:
        collapsed = True
        warnings.warn(
            f"spike {side} of partition {partition}: numerical rank {keep} < n_svd={n_svd}",
            RankCollapseWarning,
            stacklevel=2,
        )
    return LowRankSpike(
        np.ascontiguousarray(u[:, :keep]), s[:keep].copy(), np.ascontiguousarray(v[:keep]), side, collapsed, n_svd
    )


def exact_spike_svd(spike: FullSpike, n_svd: int) -> LowRankSpike:
    """Truncated SVD of an explicitly formed spike (dense oracle path)."""
    U, s, Vt = sla.svd(spike.values, full_matrices=False)
    r = min(n_svd, s.size)
    if s.size and s[0] > 0:
        r = min(r, int(np.count_nonzero(s >= RANK_COLLAPSE_RTOL * s[0])))
    else:
        r = 0
    return LowRankSpike(U[:, :r].copy(), s[:r].copy(), Vt[:r].copy(), spike.side, r < n_svd, n_svd)


def coupling_svd_spike(F: BlockFactor, coupling: np.ndarray, side: str, rank: int) -> np.ndarray:
    """Spike approximation built from the truncated SVD of the coupling itself.

    Returns the dense ``A_i^{-1} pad(svd_r(coupling))``; used to compare
    against the truncated SVD of the spike.
    """
    U, s, Vt = np.linalg.svd(coupling)
    approx = (U[:, :rank] * s[:rank]) @ Vt[:rank]
    return solve_block(F, pad_coupling(F.n, approx, side))
