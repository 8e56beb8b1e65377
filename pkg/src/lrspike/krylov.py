"""Preconditioned BiCGStab and CG on block right-hand sides.

Operators are callables mapping an ``(n, m)`` array to an ``(n, m)`` array.
Columns carry independent Krylov recurrences but share operator calls, so a
block of right-hand sides costs one (batched) operator application per step.
Only still-active columns are passed to the operator.

Iterations are counted in half steps: a BiCGStab iteration has two
preconditioner applications and two convergence checks, and convergence after
the first is reported as ``j - 0.5``. A CG step, which uses one
preconditioner application, counts as half an iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Operator = Callable[[np.ndarray], np.ndarray]
_SQRT_EPS = float(np.sqrt(np.finfo(np.float64).eps))


class BreakdownError(ArithmeticError):
    """Krylov recurrence broke down; carries the partial result."""

    def __init__(self, message: str, x: np.ndarray, report: "SolveReport"):
        super().__init__(message)
        self.x = x
        self.report = report


@dataclass
class IterConfig:
    tol: float = 1e-7
    max_iters: int = 1000
    breakdown_eps: float = 1e-30
    initial_guess: Optional[np.ndarray] = None
    # stop early once the residual has not improved for this many iterations
    stall_iters: Optional[int] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveReport:
    converged: bool = False
    iterations: float = 0.0
    residual_history: list = field(default_factory=list)
    precond_applications: int = 0
    matvecs: int = 0
    comm_scalars: int = 0
    seed: Optional[int] = None
    wall_time: float = 0.0
    stalled: bool = False
    column_iterations: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")


def _as_block(b):
    b = np.asarray(b, dtype=np.float64)
    return (b[:, None], True) if b.ndim == 1 else (b, False)


def _colnorm(v):
    return np.sqrt(np.einsum("ij,ij->j", v, v))


def _coldot(u, v):
    return np.einsum("ij,ij->j", u, v)


def _apply(op, v, cols, n_total):
    """Apply ``op`` to the active columns only."""
    if cols.size == n_total:
        return np.asarray(op(v))
    out = np.zeros_like(v)
    out[:, cols] = op(np.ascontiguousarray(v[:, cols]))
    return out


class _Tracker:
    def __init__(self, bnorm, cfg, report):
        self.bnorm = bnorm
        self.cfg = cfg
        self.report = report
        self.best = np.full(bnorm.size, np.inf)
        self.since_best = np.zeros(bnorm.size, dtype=int)

    def true_rel(self, apply_A, B, X, active, rel):
        """Below ``sqrt(eps)`` the recursive residual drifts away from the
        true one, so stall tracking switches to the true residual there."""
        if self.cfg.stall_iters is None:
            return rel
        low = rel < _SQRT_EPS
        if not np.any(low):
            return rel
        cols = active[low]
        Rt = B[:, cols] - np.asarray(apply_A(np.ascontiguousarray(X[:, cols])))
        self.report.matvecs += 1
        rel = rel.copy()
        rel[low] = np.maximum(rel[low], _colnorm(Rt) / self.bnorm[cols])
        return rel

    def stalled(self, rel, active):
        """Update stall counters after a full iteration; return columns to stop."""
        if self.cfg.stall_iters is None:
            return np.zeros(active.size, dtype=bool)
        improved = rel < 0.5 * self.best[active]
        self.best[active] = np.where(improved, rel, self.best[active])
        self.since_best[active] = np.where(improved, 0, self.since_best[active] + 1)
        return self.since_best[active] >= self.cfg.stall_iters


def bicgstab(apply_A: Operator, apply_M: Optional[Operator], b, cfg: IterConfig | None = None):
    """Right-preconditioned BiCGStab.

    Convergence is declared on the true residual ``||b - A x|| / ||b|| <= tol``
    per column; the recursive residual only triggers the check. Returns
    ``(x, report)``; raises :class:`BreakdownError` if ``rho`` or ``omega``
    falls below ``cfg.breakdown_eps`` in magnitude.
    """
    cfg = cfg or IterConfig()
    t0 = time.perf_counter()
    B, vec = _as_block(b)
    n, m = B.shape
    M = apply_M if apply_M is not None else (lambda v: v.copy())
    rep = SolveReport()
    X = np.zeros_like(B) if cfg.initial_guess is None else np.array(cfg.initial_guess, dtype=np.float64).reshape(n, m)
    bnorm = _colnorm(B)
    zero_b = bnorm == 0
    bnorm = np.where(zero_b, 1.0, bnorm)
    X[:, zero_b] = 0.0
    tr = _Tracker(bnorm, cfg, rep)

    all_cols = np.arange(m)
    R = B - _apply(apply_A, X, all_cols, m) if cfg.initial_guess is not None else B.copy()
    if cfg.initial_guess is not None:
        rep.matvecs += 1
    rel = _colnorm(R) / bnorm
    rep.residual_history.append(float(rel.max()))
    done_at = np.full(m, np.nan)
    done_at[rel <= cfg.tol] = 0.0
    active = np.flatnonzero(np.isnan(done_at))

    R_hat = R.copy()
    rho_old = np.ones(m)
    alpha = np.ones(m)
    omega = np.ones(m)
    V = np.zeros_like(B)
    P = np.zeros_like(B)

    def finish(converged):
        Rt = B - _apply(apply_A, X, all_cols, m)
        rep.matvecs += 1
        rel_true = _colnorm(Rt) / bnorm
        rep.residual_history.append(float(rel_true.max()))
        rep.converged = converged
        its = np.where(np.isnan(done_at), rep.iterations, done_at)
        rep.column_iterations = its.tolist()
        rep.iterations = float(its.max()) if m else 0.0
        rep.wall_time = time.perf_counter() - t0
        return (X[:, 0] if vec else X), rep

    def breakdown(what, cols):
        rep.iterations = float(it)
        x, r = finish(False)
        raise BreakdownError(f"BiCGStab breakdown: |{what}| < {cfg.breakdown_eps} in column(s) {cols.tolist()}", x, r)

    it = 0
    while active.size and it < cfg.max_iters:
        it += 1
        a = active
        rho = _coldot(R_hat[:, a], R[:, a])
        if np.any(np.abs(rho) < cfg.breakdown_eps):
            breakdown("rho", a[np.abs(rho) < cfg.breakdown_eps])
        beta = (rho / rho_old[a]) * (alpha[a] / omega[a])
        P[:, a] = R[:, a] + beta * (P[:, a] - omega[a] * V[:, a])
        P_hat = _apply(M, P, a, m)
        rep.precond_applications += 1
        V[:, a] = _apply(apply_A, P_hat, a, m)[:, a]
        rep.matvecs += 1
        rv = _coldot(R_hat[:, a], V[:, a])
        if np.any(np.abs(rv) < cfg.breakdown_eps):
            breakdown("r_hat.v", a[np.abs(rv) < cfg.breakdown_eps])
        alpha[a] = rho / rv
        rho_old[a] = rho
        H = X[:, a] + alpha[a] * P_hat[:, a]
        S = R[:, a] - alpha[a] * V[:, a]
        srel = _colnorm(S) / bnorm[a]

        # half-step convergence check on the true residual
        cand = srel <= cfg.tol
        if np.any(cand):
            cols = a[cand]
            Rt = B[:, cols] - np.asarray(apply_A(np.ascontiguousarray(H[:, cand])))
            rep.matvecs += 1
            ok = _colnorm(Rt) / bnorm[cols] <= cfg.tol
            X[:, cols[ok]] = H[:, cand][:, ok]
            R[:, cols[ok]] = Rt[:, ok]
            done_at[cols[ok]] = it - 0.5
            keep = ~np.isin(a, cols[ok])
            a, H, S = a[keep], H[:, keep], S[:, keep]
        rep.residual_history.append(float(max(srel.max(), 0.0)))
        if a.size == 0:
            active = a
            break

        S_full = np.zeros_like(B)
        S_full[:, a] = S
        S_hat = _apply(M, S_full, a, m)
        rep.precond_applications += 1
        T = _apply(apply_A, S_hat, a, m)[:, a]
        rep.matvecs += 1
        tt = _coldot(T, T)
        om = np.where(tt > 0, _coldot(T, S) / np.where(tt > 0, tt, 1.0), 0.0)
        if np.any(np.abs(om) < cfg.breakdown_eps):
            # a zero omega with a zero residual is convergence, not breakdown
            zero_s = _colnorm(S) == 0
            if np.any((np.abs(om) < cfg.breakdown_eps) & ~zero_s):
                X[:, a] = H
                breakdown("omega", a[(np.abs(om) < cfg.breakdown_eps) & ~zero_s])
        omega[a] = om
        X[:, a] = H + om * S_hat[:, a]
        R[:, a] = S - om * T
        rel = _colnorm(R[:, a]) / bnorm[a]
        rep.residual_history.append(float(rel.max()))

        cand = rel <= cfg.tol
        if np.any(cand):
            cols = a[cand]
            Rt = B[:, cols] - np.asarray(apply_A(np.ascontiguousarray(X[:, cols])))
            rep.matvecs += 1
            ok = _colnorm(Rt) / bnorm[cols] <= cfg.tol
            R[:, cols] = Rt
            done_at[cols[ok]] = it
            rel[cand] = _colnorm(Rt) / bnorm[cols]
        rel = tr.true_rel(apply_A, B, X, a, rel)
        stop = tr.stalled(rel, a) & np.isnan(done_at[a])
        if np.any(stop):
            rep.stalled = True
        active = a[np.isnan(done_at[a]) & ~stop]
        if stop.any() and active.size == 0:
            break

    rep.iterations = float(it)
    return finish(bool(np.all(~np.isnan(done_at))))


def cg(apply_A: Operator, apply_M: Optional[Operator], b, cfg: IterConfig | None = None):
    """Preconditioned conjugate gradients for symmetric positive definite ``A``.

    Reporting follows :func:`bicgstab`; each CG step counts as half an
    iteration. Non-positive curvature ``p^T A p <= 0`` raises
    :class:`BreakdownError`.
    """
    cfg = cfg or IterConfig()
    t0 = time.perf_counter()
    B, vec = _as_block(b)
    n, m = B.shape
    M = apply_M if apply_M is not None else (lambda v: v.copy())
    rep = SolveReport()
    X = np.zeros_like(B) if cfg.initial_guess is None else np.array(cfg.initial_guess, dtype=np.float64).reshape(n, m)
    bnorm = _colnorm(B)
    bnorm = np.where(bnorm == 0, 1.0, bnorm)
    tr = _Tracker(bnorm, cfg, rep)
    all_cols = np.arange(m)
    if cfg.initial_guess is not None:
        R = B - _apply(apply_A, X, all_cols, m)
        rep.matvecs += 1
    else:
        R = B.copy()
    rel = _colnorm(R) / bnorm
    rep.residual_history.append(float(rel.max()))
    done_at = np.full(m, np.nan)
    done_at[rel <= cfg.tol] = 0.0
    active = np.flatnonzero(np.isnan(done_at))
    Z = np.zeros_like(B)
    P = np.zeros_like(B)
    rz_old = np.ones(m)

    def finish(converged, steps):
        Rt = B - _apply(apply_A, X, all_cols, m)
        rep.matvecs += 1
        rep.residual_history.append(float((_colnorm(Rt) / bnorm).max()))
        rep.converged = converged
        its = np.where(np.isnan(done_at), 0.5 * steps, done_at)
        rep.column_iterations = its.tolist()
        rep.iterations = float(its.max()) if m else 0.0
        rep.wall_time = time.perf_counter() - t0
        return (X[:, 0] if vec else X), rep

    step = 0
    while active.size and step < 2 * cfg.max_iters:
        step += 1
        a = active
        Z = _apply(M, R, a, m)
        rep.precond_applications += 1
        rz = _coldot(R[:, a], Z[:, a])
        beta = np.where(step > 1, rz / rz_old[a], 0.0)
        P[:, a] = Z[:, a] + beta * P[:, a]
        AP = _apply(apply_A, P, a, m)[:, a]
        rep.matvecs += 1
        pap = _coldot(P[:, a], AP)
        bad = pap <= 0
        if np.any(bad):
            x, r = finish(False, step)
            raise BreakdownError(f"CG breakdown: non-positive curvature in column(s) {a[bad].tolist()}", x, r)
        alpha = rz / pap
        rz_old[a] = rz
        X[:, a] += alpha * P[:, a]
        R[:, a] -= alpha * AP
        rel = _colnorm(R[:, a]) / bnorm[a]
        rep.residual_history.append(float(rel.max()))
        cand = rel <= cfg.tol
        if np.any(cand):
            cols = a[cand]
            Rt = B[:, cols] - np.asarray(apply_A(np.ascontiguousarray(X[:, cols])))
            rep.matvecs += 1
            ok = _colnorm(Rt) / bnorm[cols] <= cfg.tol
            R[:, cols] = Rt
            done_at[cols[ok]] = 0.5 * step
            rel[cand] = _colnorm(Rt) / bnorm[cols]
        rel = tr.true_rel(apply_A, B, X, a, rel)
        stop = tr.stalled(rel, a) & np.isnan(done_at[a])
        if np.any(stop):
            rep.stalled = True
        active = a[np.isnan(done_at[a]) & ~stop]
    return finish(bool(np.all(~np.isnan(done_at))), step)


def residual_history_csv(report: SolveReport) -> str:
    """CSV of the residual history: one row per half iteration, then the
    recomputed true residual as ``final``."""
    lines = ["iteration,relative_residual"]
    hist = report.residual_history
    lines += [f"{0.5 * j:g},{r!r}" for j, r in enumerate(hist[:-1])]
    if hist:
        lines.append(f"final,{hist[-1]!r}")
    return "\n".join(lines) + "\n"
