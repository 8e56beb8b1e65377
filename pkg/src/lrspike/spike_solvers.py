"""LR-SPIKE preconditioners and solvers.

Variants:

``LR-SPIKE-T``
    D-stage, direct solve of the truncated reduced system, recovery with the
    low-rank spikes. Used as a preconditioner for an outer Krylov solver.
``LR-SPIKE-I``
    As T, but the low-rank reduced system is solved by an inner BiCGStab
    preconditioned with the truncated system.
``LR-SPIKE-OTF``
    Solves the true reduced system iteratively (matrix-free, by padded block
    solves), preconditioned with the truncated system; exact recovery.
``BLOCK-JACOBI``
    D-stage only; the ``n_svd = 0`` limit of all of the above.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .block_solver import BlockFactor, factorize_block, solve_block
from .krylov import BreakdownError, IterConfig, SolveReport, bicgstab, cg
from .ledger import CommLedger
from .partition import PartitionBlocks, extract_blocks, make_layout, suggest_k
from .reduced_system import (
    BOTTOM,
    TOP,
    IllConditionedInterfaceError,
    TruncatedPrecond,
    apply_truncated_precond,
    build_truncated_precond,
    gather_tips,
    matvec_lowrank,
    matvec_otf,
    to_flat,
    to_reduced,
)
from .sparse_core import CsrMatrix, spmv
from .spikes import LowRankSpike, compute_full_spike, exact_spike_svd, randomized_spike_svd

log = logging.getLogger(__name__)

LR_T, LR_I, LR_OTF, BJ = "LR-SPIKE-T", "LR-SPIKE-I", "LR-SPIKE-OTF", "BLOCK-JACOBI"
VARIANTS = (LR_T, LR_I, LR_OTF, BJ)
VARIANT_ALIASES = {"t": LR_T, "i": LR_I, "otf": LR_OTF, "bj": BJ}


class PreconditionerFailure(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def _inner_default():
    return IterConfig(tol=1e-16, max_iters=200, stall_iters=3)


def _otf_default():
    return IterConfig(tol=1e-8, max_iters=1000, stall_iters=5)


@dataclass
class SolverConfig:
    variant: str = LR_T
    p: int = 2
    k: Optional[int] = None  # None: use the half bandwidth of A
    n_svd: int = 0
    outer: IterConfig = field(default_factory=lambda: IterConfig(tol=1e-7, max_iters=100_000))
    inner: IterConfig = field(default_factory=_inner_default)
    otf_redsys: IterConfig = field(default_factory=_otf_default)
    otf_escalations: int = 4
    otf_tol_factor: float = 1e-2
    # inner solves that stall at round-off are accepted below this residual
    inner_accept_tol: float = 1e-10
    passes: int = 2
    oversample: Optional[int] = None  # None: ceil(n_svd / 2)
    seed: int = 0
    spike_method: str = "randomized"  # or "exact" (dense SVD of formed spikes)
    krylov: str = "bicgstab"
    preorder_blocks: bool = False
    single_precision: bool = False
    workers: int = 1

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(str(self.variant).lower(), self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if self.n_svd < 0:
            raise ValueError("n_svd must be non-negative")
        if self.k is not None and self.n_svd > self.k:
            raise ValueError(f"n_svd={self.n_svd} exceeds k={self.k}")
        if self.spike_method not in ("randomized", "exact"):
            raise ValueError("spike_method must be 'randomized' or 'exact'")
        if self.krylov not in ("bicgstab", "cg"):
            raise ValueError("krylov must be 'bicgstab' or 'cg'")
        if self.variant == BJ:
            self.n_svd = 0


@dataclass
class InnerStats:
    applications: int = 0
    inner_iterations: float = 0.0
    max_inner_iterations: float = 0.0
    accepted_unconverged: int = 0

    def add(self, rep: SolveReport) -> None:
        self.applications += 1
        self.inner_iterations += rep.iterations
        self.max_inner_iterations = max(self.max_inner_iterations, rep.iterations)


@dataclass
class SpikeFactorization:
    blocks: PartitionBlocks
    factors: list
    T_lr: list  # T_lr[i] for i < p-1, None for the last partition
    W_lr: list  # W_lr[i] for i > 0, None for the first
    trunc: TruncatedPrecond
    config: SolverConfig
    n_svd: int
    ledger: CommLedger = field(default_factory=CommLedger)
    inner: InnerStats = field(default_factory=InnerStats)
    timings: dict = field(default_factory=dict)

    @property
    def layout(self):
        return self.blocks.layout

    @property
    def p(self) -> int:
        return self.blocks.layout.p

    @property
    def k(self) -> int:
        return self.blocks.layout.k


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _truncate(s: LowRankSpike, r: int) -> LowRankSpike:
    r = min(r, s.rank)
    return LowRankSpike(s.u[:, :r], s.sigma[:r], s.v[:r], s.side, s.rank_collapsed, r)


def compute_lowrank_spikes(blocks: PartitionBlocks, factors: list, n_svd: int, cfg: SolverConfig):
    """Low-rank T (partitions 0..p-2) and W (partitions 1..p-1) spikes."""
    lay = blocks.layout
    p, k = lay.p, lay.k
    jobs = [(i, "T") for i in range(p - 1)] + [(i, "W") for i in range(1, p)]

    def one(job):
        i, side = job
        coupling = blocks.coupling(i, side)
        if n_svd == 0 or k == 0:
            return LowRankSpike.zero(factors[i].n, k, side)
        if cfg.spike_method == "exact":
            return exact_spike_svd(compute_full_spike(factors[i], coupling, side), n_svd)
        return randomized_spike_svd(
            factors[i], coupling, side, n_svd, cfg.oversample, cfg.passes, seed=cfg.seed, partition=i
        )

    out = _map(one, jobs, cfg.workers)
    T_lr, W_lr = [None] * p, [None] * p
    for (i, side), s in zip(jobs, out):
        (T_lr if side == "T" else W_lr)[i] = s
    return T_lr, W_lr


def factorize(A: CsrMatrix, cfg: SolverConfig) -> SpikeFactorization:
    """Partition, factor the diagonal blocks, build spikes and the truncated
    preconditioner.

    If an interface of the truncated system is numerically singular, ``n_svd``
    is halved once (by truncating the spikes) before giving up.
    """
    t0 = time.perf_counter()
    k = cfg.k if cfg.k is not None else suggest_k(A)
    n_svd = min(cfg.n_svd, k)
    layout = make_layout(A.n_rows, cfg.p, k)
    blocks = extract_blocks(A, layout)
    factors = _map(
        lambda Ai: factorize_block(Ai, preorder=cfg.preorder_blocks, single_precision=cfg.single_precision),
        blocks.A,
        cfg.workers,
    )
    t1 = time.perf_counter()
    T_lr, W_lr = compute_lowrank_spikes(blocks, factors, n_svd, cfg)
    t2 = time.perf_counter()
    try:
        trunc = build_truncated_precond(T_lr, W_lr, k)
    except IllConditionedInterfaceError as err:
        reduced = n_svd // 2
        log.warning("%s; retrying with n_svd=%d", err, reduced)
        T_lr = [None if s is None else _truncate(s, reduced) for s in T_lr]
        W_lr = [None if s is None else _truncate(s, reduced) for s in W_lr]
        trunc = build_truncated_precond(T_lr, W_lr, k)
        n_svd = reduced
    t3 = time.perf_counter()
    timings = {"blocks": t1 - t0, "spikes": t2 - t1, "precond": t3 - t2, "factorize": t3 - t0}
    return SpikeFactorization(blocks, factors, T_lr, W_lr, trunc, cfg, n_svd, timings=timings)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def d_stage(F: SpikeFactorization, f: np.ndarray) -> list:
    return [solve_block(F.factors[i], f[F.layout.rows(i)]) for i in range(F.p)]


def recover_lowrank(F: SpikeFactorization, y: list, xr: np.ndarray, ledger: CommLedger | None) -> np.ndarray:
    """``x_i = y_i - W~_i x_{i-1,b} - T~_i x_{i+1,t}`` with compressed messages."""
    p = F.p
    x = [yi.copy() for yi in y]
    for i in range(p - 1):
        sT, sW = F.T_lr[i], F.W_lr[i + 1]
        if sW.rank:
            msg = sW.v @ xr[i, BOTTOM]  # partition i -> i+1
            if ledger is not None:
                ledger.send("recovery", msg.size)
            x[i + 1] -= sW.u @ (sW.sigma[:, None] * msg)
        if sT.rank:
            msg = sT.v @ xr[i + 1, TOP]  # partition i+1 -> i
            if ledger is not None:
                ledger.send("recovery", msg.size)
            x[i] -= sT.u @ (sT.sigma[:, None] * msg)
    return np.concatenate(x)


def recover_exact(F: SpikeFactorization, y: list, xr: np.ndarray, ledger: CommLedger | None) -> np.ndarray:
    """Recovery through one padded block solve per partition."""
    p, k = F.p, F.k
    m = xr.shape[3]
    x = []
    for i in range(p - 1):
        if ledger is not None:
            ledger.send("recovery", xr[i, BOTTOM].size)
            ledger.send("recovery", xr[i + 1, TOP].size)
    for i in range(p):
        yi = y[i].reshape(y[i].shape[0], m)
        n_i = yi.shape[0]
        rhs = np.zeros((n_i, m))
        if i > 0:
            rhs[:k] += F.blocks.C[i] @ xr[i - 1, BOTTOM]
        if i < p - 1:
            rhs[n_i - k :] += F.blocks.B[i] @ xr[i + 1, TOP]
        x.append(yi - solve_block(F.factors[i], rhs) if rhs.any() else yi.copy())
    return np.concatenate(x)


def _as_block(f):
    f = np.asarray(f, dtype=np.float64)
    return (f[:, None], True) if f.ndim == 1 else (f, False)


def apply_block_jacobi(F: SpikeFactorization, f: np.ndarray) -> np.ndarray:
    f2, vec = _as_block(f)
    x = np.concatenate(d_stage(F, f2))
    return x[:, 0] if vec else x


def apply_precond_T(F: SpikeFactorization, f: np.ndarray, ledger: CommLedger | None = None) -> np.ndarray:
    ledger = F.ledger if ledger is None else ledger
    f2, vec = _as_block(f)
    y = d_stage(F, f2)
    if F.p == 1 or F.n_svd == 0:
        x = np.concatenate(y)
    else:
        yr = gather_tips(y, F.k)
        xr = apply_truncated_precond(F.trunc, yr, ledger)
        x = recover_lowrank(F, y, xr, ledger)
    return x[:, 0] if vec else x


def solve_reduced_lowrank(F: SpikeFactorization, yr: np.ndarray, ledger: CommLedger | None = None):
    """Inner BiCGStab on ``S~_r`` preconditioned by the truncated system."""
    p, k = F.p, F.k
    cfg = F.config

    def A_r(v):
        return to_flat(matvec_lowrank(F.T_lr, F.W_lr, to_reduced(v, p, k), ledger))

    def M_r(v):
        return to_flat(apply_truncated_precond(F.trunc, to_reduced(v, p, k), ledger))

    b = to_flat(yr)
    try:
        xr, rep = bicgstab(A_r, M_r, b, cfg.inner)
    except BreakdownError as err:
        xr, rep = err.x, err.report
    if not rep.converged:
        if rep.final_residual <= cfg.inner_accept_tol:
            F.inner.accepted_unconverged += 1
        else:
            raise PreconditionerFailure(
                f"inner reduced solve stopped at relative residual {rep.final_residual:.3e}", rep
            )
    F.inner.add(rep)
    return to_reduced(xr, p, k), rep


def apply_precond_I(F: SpikeFactorization, f: np.ndarray, ledger: CommLedger | None = None) -> np.ndarray:
    ledger = F.ledger if ledger is None else ledger
    f2, vec = _as_block(f)
    y = d_stage(F, f2)
    if F.p == 1:
        x = np.concatenate(y)
    else:
        yr = gather_tips(y, F.k)
        xr, _ = solve_reduced_lowrank(F, yr, ledger)
        x = recover_lowrank(F, y, xr, ledger)
    return x[:, 0] if vec else x


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

@dataclass
class SpikeSolveReport:
    variant: str
    p: int
    k: int
    n_svd: int
    converged: bool
    iterations: float
    inner_iterations: float
    residual_final: float
    comm: dict
    timings: dict
    seed: int
    residual_history: list = field(default_factory=list)
    failure: Optional[str] = None  # SF, FF or NC
    escalations: int = 0
    precond_applications: int = 0

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "p": self.p,
            "k": self.k,
            "n_svd": self.n_svd,
            "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "residual_final": self.residual_final,
            "comm": self.comm,
            "timings": self.timings,
            "seed": self.seed,
            "converged": self.converged,
            "failure": self.failure,
            "escalations": self.escalations,
        }


def _relres(A: CsrMatrix, x: np.ndarray, f: np.ndarray) -> float:
    r = f - spmv(A, x)
    fn = np.linalg.norm(f, axis=0)
    fn = np.where(fn == 0, 1.0, fn)
    return float(np.max(np.linalg.norm(r, axis=0) / fn))


def solve_otf(F: SpikeFactorization, A: CsrMatrix, f: np.ndarray, cfg: SolverConfig | None = None):
    """LR-SPIKE-OTF: iterate on the true reduced system, recover exactly.

    The reduced tolerance starts at ``cfg.otf_redsys.tol`` and is multiplied
    by ``cfg.otf_tol_factor`` (warm restart) until the full residual meets
    ``cfg.outer.tol`` or ``cfg.otf_escalations`` is exhausted.
    """
    cfg = cfg or F.config
    t0 = time.perf_counter()
    f2, vec = _as_block(f)
    p, k = F.p, F.k
    ledger = F.ledger
    y = d_stage(F, f2)
    if p == 1:
        x = np.concatenate(y)
        res = _relres(A, x, f2)
        rep = SolveReport(converged=res <= cfg.outer.tol, iterations=0.0, residual_history=[res])
        return (x[:, 0] if vec else x), rep, 0

    yr = gather_tips(y, k)
    b = to_flat(yr)

    def A_r(v):
        return to_flat(matvec_otf(F.factors, F.blocks, to_reduced(v, p, k), ledger))

    def M_r(v):
        return to_flat(apply_truncated_precond(F.trunc, to_reduced(v, p, k), ledger))

    xr = M_r(b)
    total = 0.0
    history: list = []
    tol = cfg.otf_redsys.tol
    escalations = 0
    x = None
    res = np.inf
    for attempt in range(cfg.otf_escalations + 1):
        icfg = replace(cfg.otf_redsys, tol=tol, initial_guess=xr)
        try:
            xr, rrep = bicgstab(A_r, M_r, b, icfg)
        except BreakdownError as err:
            xr, rrep = err.x, err.report
        total += rrep.iterations
        history.extend(rrep.residual_history)
        x = recover_exact(F, y, to_reduced(xr, p, k), ledger)
        res = _relres(A, x, f2)
        if res <= cfg.outer.tol:
            break
        if attempt == cfg.otf_escalations:
            break
        escalations += 1
        tol *= cfg.otf_tol_factor
    rep = SolveReport(
        converged=res <= cfg.outer.tol,
        iterations=total,
        residual_history=history + [res],
        wall_time=time.perf_counter() - t0,
    )
    return (x[:, 0] if vec else x), rep, escalations


def make_preconditioner(F: SpikeFactorization):
    v = F.config.variant
    if v == BJ:
        return lambda r: apply_block_jacobi(F, r)
    if v == LR_T or v == LR_OTF:
        return lambda r: apply_precond_T(F, r)
    return lambda r: apply_precond_I(F, r)


def solve(A: CsrMatrix, f, cfg: SolverConfig, factorization: SpikeFactorization | None = None):
    """Factorize (unless given) and solve ``A x = f``.

    T, I and Block Jacobi run the outer Krylov method on ``A`` with the
    variant as right preconditioner; OTF solves through the reduced system.
    Non-convergence is reported (``failure`` = ``"SF"`` for breakdown,
    ``"NC"`` for the iteration limit), not raised.
    """
    f = np.asarray(f, dtype=np.float64)
    t0 = time.perf_counter()
    F = factorization if factorization is not None else factorize(A, cfg)
    t_fact = time.perf_counter() - t0 if factorization is None else F.timings.get("factorize", 0.0)
    t1 = time.perf_counter()
    escalations = 0
    failure = None
    if cfg.variant == LR_OTF:
        x, rep, escalations = solve_otf(F, A, f, cfg)
        if not rep.converged:
            failure = "NC"
    else:
        M = make_preconditioner(F)
        driver = cg if cfg.krylov == "cg" else bicgstab
        try:
            x, rep = driver(lambda v: spmv(A, v), M, f, cfg.outer)
            if not rep.converged:
                failure = "NC"
        except BreakdownError as err:
            x, rep = err.x, err.report
            failure = "SF"
        except PreconditionerFailure as err:
            x, rep = np.zeros_like(f), err.report
            failure = "SF"
    t_solve = time.perf_counter() - t1
    out = SpikeSolveReport(
        variant=cfg.variant,
        p=F.p,
        k=F.k,
        n_svd=F.n_svd,
        converged=failure is None and rep.converged,
        iterations=rep.iterations,
        inner_iterations=F.inner.inner_iterations,
        residual_final=_relres(A, x.reshape(f.shape[0], -1), f.reshape(f.shape[0], -1)),
        comm=F.ledger.snapshot(),
        timings={"factorize": t_fact, "solve": t_solve},
        seed=cfg.seed,
        residual_history=list(rep.residual_history),
        failure=failure,
        escalations=escalations,
        precond_applications=rep.precond_applications,
    )
    return x, out


# ---------------------------------------------------------------------------
# exact (oracle) objects
# ---------------------------------------------------------------------------

def full_spikes(F: SpikeFactorization):
    """Explicit T and W spikes for every partition (None where absent)."""
    p = F.p
    T = [compute_full_spike(F.factors[i], F.blocks.B[i], "T") if i < p - 1 else None for i in range(p)]
    W = [compute_full_spike(F.factors[i], F.blocks.C[i], "W") if i > 0 else None for i in range(p)]
    return T, W
