"""The (2kp) x (2kp) reduced system and its truncated preconditioner.

Reduced vectors are arrays of shape ``(p, 2, k, m)``: entry ``[i, 0]`` is the
top tip of partition ``i`` and ``[i, 1]`` its bottom tip, for ``m``
right-hand sides. ``reshape(2*k*p, m)`` gives the stacked ordering
``x_{1,t}, x_{1,b}, x_{2,t}, ...``.

Interface ``i`` joins partitions ``i`` and ``i+1``. Cross-partition data only
moves through messages recorded in a :class:`~lrspike.ledger.CommLedger`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dgecon

from .block_solver import solve_block
from .ledger import CommLedger, _maybe_send
from .spikes import LowRankSpike

TOP, BOTTOM = 0, 1
# below this reciprocal condition the coupling product is not inverted explicitly
G_RCOND_MIN = 1e-10
# below this the interface block is treated as singular
H_RCOND_MIN = 1e-15


class IllConditionedInterfaceError(ArithmeticError):
    def __init__(self, interface: int, cond: float):
        self.interface = interface
        self.cond = cond
        super().__init__(
            f"interface {interface}: truncated 2x2 block is numerically singular "
            f"(1-norm condition ~ {cond:.3e}); retry with a smaller n_svd"
        )


def to_reduced(flat: np.ndarray, p: int, k: int) -> np.ndarray:
    flat = np.asarray(flat)
    m = 1 if flat.ndim == 1 else flat.shape[1]
    return flat.reshape(p, 2, k, m)


def to_flat(xr: np.ndarray) -> np.ndarray:
    p, _, k, m = xr.shape
    return xr.reshape(2 * k * p, m)


def gather_tips(parts: list, k: int) -> np.ndarray:
    """Stack the top/bottom ``k`` rows of per-partition blocks into a reduced vector."""
    p = len(parts)
    m = 1 if parts[0].ndim == 1 else parts[0].shape[1]
    out = np.empty((p, 2, k, m))
    for i, y in enumerate(parts):
        y2 = y.reshape(y.shape[0], m)
        out[i, TOP] = y2[:k]
        out[i, BOTTOM] = y2[y2.shape[0] - k :]
    return out


# ---------------------------------------------------------------------------
# products with S_r
# ---------------------------------------------------------------------------

def matvec_exact(T_tips: list, W_tips: list, xr: np.ndarray) -> np.ndarray:
    """``S_r x_r`` from explicit tips.

    ``T_tips[i] = (T_top, T_bottom)`` for i < p-1 and ``W_tips[i]`` likewise
    for i > 0; other entries are ignored.
    """
    p, _, k, m = xr.shape
    y = xr.copy()
    for i in range(p):
        if i > 0:
            wt, wb = W_tips[i]
            xb = xr[i - 1, BOTTOM]
            y[i, TOP] += wt @ xb
            y[i, BOTTOM] += wb @ xb
        if i < p - 1:
            tt, tb = T_tips[i]
            xt = xr[i + 1, TOP]
            y[i, TOP] += tt @ xt
            y[i, BOTTOM] += tb @ xt
    return y


def matvec_lowrank(
    T_lr: list, W_lr: list, xr: np.ndarray, ledger: CommLedger | None = None, stage: str = "reduced-matvec"
) -> np.ndarray:
    """``S~_r x_r`` with low-rank spikes and compressed neighbour messages.

    The owner of ``x_{i,b}`` sends ``v_W(i+1) x_{i,b}`` to partition ``i+1``;
    the owner of ``x_{i+1,t}`` sends ``v_T(i) x_{i+1,t}`` to partition ``i``.
    """
    p, _, k, m = xr.shape
    y = xr.copy()
    for i in range(p - 1):
        sT, sW = T_lr[i], W_lr[i + 1]
        # messages (computed by the sender, consumed by the receiver)
        to_right = sW.v @ xr[i, BOTTOM]
        to_left = sT.v @ xr[i + 1, TOP]
        _maybe_send(ledger, stage, to_right.size)
        _maybe_send(ledger, stage, to_left.size)
        if sT.rank:
            c = sT.sigma[:, None] * to_left
            y[i, TOP] += sT.u_top @ c
            y[i, BOTTOM] += sT.u_bottom @ c
        if sW.rank:
            c = sW.sigma[:, None] * to_right
            y[i + 1, TOP] += sW.u_top @ c
            y[i + 1, BOTTOM] += sW.u_bottom @ c
    return y


def matvec_otf(factors: list, blocks, xr: np.ndarray, ledger: CommLedger | None = None) -> np.ndarray:
    """``S_r x_r`` without forming spikes: one padded block solve per partition.

    Partition ``i`` receives the uncompressed tips ``x_{i-1,b}`` and
    ``x_{i+1,t}``, forms ``[C_i x_{i-1,b}; 0; B_i x_{i+1,t}]``, solves with its
    block and reads off the first and last ``k`` rows.
    """
    p, _, k, m = xr.shape
    y = xr.copy()
    for i in range(p - 1):
        _maybe_send(ledger, "reduced-matvec", xr[i, BOTTOM].size)
        _maybe_send(ledger, "reduced-matvec", xr[i + 1, TOP].size)
    for i in range(p):
        n_i = factors[i].n
        rhs = np.zeros((n_i, m))
        if i > 0:
            rhs[:k] += blocks.C[i] @ xr[i - 1, BOTTOM]
        if i < p - 1:
            rhs[n_i - k :] += blocks.B[i] @ xr[i + 1, TOP]
        if not rhs.any():
            continue
        z = solve_block(factors[i], rhs)
        y[i, TOP] += z[:k]
        y[i, BOTTOM] += z[n_i - k :]
    return y


# ---------------------------------------------------------------------------
# truncated preconditioner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterfaceFactor:
    """Factored inverse of ``[[I, T~_{i,b}], [W~_{i+1,t}, I]]``.

    With ``K = v_W u_Tb`` and ``K_TW = v_T u_Wt diag(sigma_W)``, the Schur
    complement ``M = I - W~_t T~_b`` has
    ``M^{-1} = I + u_Wt S_W core(S_T v_T .)``. When ``K`` is square and well
    conditioned, ``core`` is ``H^{-1}`` with ``G = K^{-1}`` formed explicitly
    and ``H = G - S_T K_TW`` LU-factored. Otherwise the algebraically equal
    ``core = K (I - S_T K_TW K)^{-1}`` is used, which needs no inverse of ``K``.
    """

    u_Tb: np.ndarray
    sT: np.ndarray
    vT: np.ndarray
    u_Wt: np.ndarray
    sW: np.ndarray
    vW: np.ndarray
    K_TW: np.ndarray
    mode: str  # "woodbury", "general" or "trivial"
    G: np.ndarray | None
    K: np.ndarray | None
    lu: tuple | None
    cond: float

    def core(self, z: np.ndarray) -> np.ndarray:
        """Map ``r_T x m`` -> ``r_W x m``."""
        if self.mode == "trivial":
            return np.zeros((self.sW.size, z.shape[1]))
        w = sla.lu_solve(self.lu, z)
        return w if self.mode == "woodbury" else self.K @ w

    def apply(self, g_b: np.ndarray, g_t: np.ndarray, ledger: CommLedger | None = None):
        """Return ``(y_{i,b}, y_{i+1,t})``."""
        a = self.vW @ g_b  # sent left -> right
        b = self.vT @ g_t  # sent right -> left
        _maybe_send(ledger, "precond-apply", a.size)
        _maybe_send(ledger, "precond-apply", b.size)
        d = b - self.K_TW @ a
        e = self.core(self.sT[:, None] * d)
        y_b = g_b - self.u_Tb @ (self.sT[:, None] * (d + self.K_TW @ e))
        y_t = g_t + self.u_Wt @ (self.sW[:, None] * (e - a))
        return y_b, y_t


def _lu(a: np.ndarray):
    # singularity is judged by the rcond estimate, not by LAPACK's warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        return sla.lu_factor(a, check_finite=False)


def _rcond_from_lu(lu, a: np.ndarray) -> float:
    if a.size == 0:
        return 1.0
    anorm = np.abs(a).sum(axis=0).max()
    if anorm == 0:
        return 0.0
    rcond, info = dgecon(lu[0], anorm, norm="1")
    return float(rcond)


def build_interface(sT: LowRankSpike, sW: LowRankSpike, index: int = 0) -> InterfaceFactor:
    u_Tb, u_Wt = sT.u_bottom, sW.u_top
    K_TW = (sT.v @ u_Wt) * sW.sigma[None, :]
    rT, rW = sT.rank, sW.rank
    if rT == 0 or rW == 0:
        return InterfaceFactor(u_Tb, sT.sigma, sT.v, u_Wt, sW.sigma, sW.v, K_TW, "trivial", None, None, None, 1.0)
    K = sW.v @ u_Tb  # r_W x r_T
    ST_KTW = sT.sigma[:, None] * K_TW  # r_T x r_W
    if rT == rW:
        K_lu = _lu(K)
        if _rcond_from_lu(K_lu, K) > G_RCOND_MIN:
            G = np.linalg.inv(K)
            H = G - ST_KTW
            lu = _lu(H)
            rc = _rcond_from_lu(lu, H)
            if rc <= H_RCOND_MIN or not np.isfinite(rc):
                raise IllConditionedInterfaceError(index, np.inf if rc == 0 else 1.0 / rc)
            return InterfaceFactor(u_Tb, sT.sigma, sT.v, u_Wt, sW.sigma, sW.v, K_TW, "woodbury", G, K, lu, 1.0 / rc)
    N = np.eye(rT) - ST_KTW @ K
    lu = _lu(N)
    rc = _rcond_from_lu(lu, N)
    if rc <= H_RCOND_MIN or not np.isfinite(rc):
        raise IllConditionedInterfaceError(index, np.inf if rc == 0 else 1.0 / rc)
    return InterfaceFactor(u_Tb, sT.sigma, sT.v, u_Wt, sW.sigma, sW.v, K_TW, "general", None, K, lu, 1.0 / rc)


@dataclass(frozen=True)
class TruncatedPrecond:
    """Block-diagonal inverse of the truncated reduced system, one 2x2 block
    per interface."""

    p: int
    k: int
    interfaces: list

    @property
    def max_cond(self) -> float:
        return max((f.cond for f in self.interfaces), default=1.0)


def build_truncated_precond(T_lr: list, W_lr: list, k: int) -> TruncatedPrecond:
    """``T_lr[i]`` (i < p-1) and ``W_lr[i]`` (i > 0) are the low-rank spikes."""
    p = len(T_lr)
    faces = [build_interface(T_lr[i], W_lr[i + 1], i) for i in range(p - 1)]
    return TruncatedPrecond(p, k, faces)


def apply_truncated_precond(P: TruncatedPrecond, g: np.ndarray, ledger: CommLedger | None = None) -> np.ndarray:
    """Apply the inverse of the truncated reduced system to ``g`` (p, 2, k, m)."""
    if g.shape[0] != P.p or g.shape[2] != P.k:
        raise ValueError(f"reduced vector shape {g.shape} does not match p={P.p}, k={P.k}")
    y = g.copy()
    for i, face in enumerate(P.interfaces):
        y[i, BOTTOM], y[i + 1, TOP] = face.apply(g[i, BOTTOM], g[i + 1, TOP], ledger)
    return y
