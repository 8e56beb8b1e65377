"""Desk-scale studies: preconditioned condition numbers, spike singular value
decay, and an iteration-count benchmark runner.

All studies return a :class:`StudyReport` whose cells carry the exact
configuration that produced them, and which serialises to JSON and CSV.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .block_solver import SingularBlockError, factorize_block
from .partition import LayoutInfeasibleError, NotBlockTridiagonalError, extract_blocks, make_layout, suggest_k
from .reduced_system import (
    IllConditionedInterfaceError,
    apply_truncated_precond,
    matvec_lowrank,
    matvec_otf,
    to_flat,
    to_reduced,
)
from .reorder import reorder
from .sparse_core import CsrMatrix, identity, read_matrix_market
from .spike_solvers import (
    BJ,
    SolverConfig,
    apply_block_jacobi,
    apply_precond_T,
    factorize,
    full_spikes,
    solve,
)
from .spikes import compute_full_spike

log = logging.getLogger(__name__)

MAX_DENSE_N = 4000

FAILURE_CODES = {
    "FF": "factorization failure",
    "SF": "failure in the solve stage (breakdown or stagnation)",
    "NC": "iteration limit reached without convergence",
}


class StudyTooLargeError(MemoryError):
    pass


@dataclass
class StudyReport:
    kind: str
    cells: list
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "provenance": self.provenance, "cells": self.cells}

    def to_csv(self, columns: list | None = None) -> str:
        if columns is None:
            columns = []
            for c in self.cells:
                for key in c:
                    if key not in columns:
                        columns.append(key)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            w.writerow({key: _fmt(c.get(key)) for key in columns})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _cond(M: np.ndarray) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    return float(np.inf if s[-1] == 0 else s[0] / s[-1])


def _materialize(apply, n: int) -> np.ndarray:
    return apply(np.eye(n))


# ---------------------------------------------------------------------------
# condition numbers
# ---------------------------------------------------------------------------

def condition_study(
    A: CsrMatrix,
    ps=(3,),
    n_svds=(0, 4, 8, 16),
    k: int | None = None,
    seed: int = 0,
    spike_method: str = "randomized",
    name: str = "A",
    max_n: int = MAX_DENSE_N,
) -> StudyReport:
    """Exact 2-norm condition numbers of the preconditioned operators.

    Per ``(p, n_svd)`` cell:

    ``cond_bj``
        ``M_BJ A`` (Block Jacobi).
    ``cond_t``
        ``M_T A`` with ``M_T`` the LR-SPIKE-T preconditioner.
    ``cond_i``
        ``(D S~)^{-1} A``, the operator of LR-SPIKE-I with an exact inner solve.
    ``cond_red_i``
        truncated-system-preconditioned low-rank reduced system.
    ``cond_red_otf``
        truncated-system-preconditioned true reduced system.

    Operators are formed by applying them to the identity.
    """
    n = A.n_rows
    if n > max_n:
        raise StudyTooLargeError(f"n={n} exceeds the dense limit {max_n}")
    k = suggest_k(A) if k is None else k
    Ad = A.to_dense()
    cond_A = _cond(Ad)
    cells = []
    for p in ps:
        bj = None
        for n_svd in n_svds:
            cfg = SolverConfig(variant="t", p=p, k=k, n_svd=n_svd, seed=seed, spike_method=spike_method)
            cell = {"p": p, "n_svd": n_svd, "k": k, "seed": seed, "spike_method": spike_method, "cond_A": cond_A}
            try:
                F = factorize(A, cfg)
            except (IllConditionedInterfaceError, SingularBlockError, NotBlockTridiagonalError, LayoutInfeasibleError) as err:
                cell["error"] = str(err)
                cells.append(cell)
                continue
            cell["n_svd_used"] = F.n_svd
            if bj is None:
                bj = _cond(apply_block_jacobi(F, Ad))
            cell["cond_bj"] = bj
            cell["cond_t"] = _cond(apply_precond_T(F, Ad, ledger=_NullLedger()))
            D_inv_A = apply_block_jacobi(F, Ad)  # S = D^{-1} A
            S_tilde = _assemble_s_lowrank(F)
            cell["cond_i"] = _cond(np.linalg.solve(S_tilde, D_inv_A))
            cell.update(_reduced_conds(F))
            cells.append(cell)
    prov = {"matrix": name, "n": n, "k": k, "seed": seed, "ps": list(ps), "n_svds": list(n_svds), "spike_method": spike_method}
    return StudyReport("precond-study", cells, prov)


class _NullLedger:
    def send(self, stage, scalars):
        pass


def _assemble_s_lowrank(F) -> np.ndarray:
    """Dense ``S~ = I + spikes`` using the low-rank spikes."""
    lay = F.layout
    S = np.eye(lay.n)
    off = lay.offsets
    k = lay.k
    for i in range(lay.p):
        r = lay.rows(i)
        if i < lay.p - 1 and F.T_lr[i].rank:
            c0 = off[i + 1]
            S[r, c0 : c0 + k] = F.T_lr[i].dense()
        if i > 0 and F.W_lr[i].rank:
            c1 = off[i]
            S[r, c1 - k : c1] = F.W_lr[i].dense()
    return S


def assemble_s_full(F) -> np.ndarray:
    """Dense ``S`` from explicit spikes (``D^{-1} A``)."""
    T, W = full_spikes(F)
    lay = F.layout
    S = np.eye(lay.n)
    off = lay.offsets
    k = lay.k
    for i in range(lay.p):
        r = lay.rows(i)
        if T[i] is not None:
            S[r, off[i + 1] : off[i + 1] + k] = T[i].values
        if W[i] is not None:
            S[r, off[i] - k : off[i]] = W[i].values
    return S


def _reduced_conds(F) -> dict:
    p, k = F.p, F.k
    if p == 1:
        return {"cond_red_i": 1.0, "cond_red_otf": 1.0}
    m = 2 * k * p
    E = to_reduced(np.eye(m), p, k)
    Sr_lr = to_flat(matvec_lowrank(F.T_lr, F.W_lr, E))
    Sr = to_flat(matvec_otf(F.factors, F.blocks, E))
    P = lambda X: to_flat(apply_truncated_precond(F.trunc, to_reduced(X, p, k)))
    return {"cond_red_i": _cond(P(Sr_lr)), "cond_red_otf": _cond(P(Sr))}


# ---------------------------------------------------------------------------
# singular value decay
# ---------------------------------------------------------------------------

def svd_decay_study(A: CsrMatrix, p: int, k: int | None = None, name: str = "A") -> StudyReport:
    """Full singular spectra of the spikes and the coupling blocks.

    One row per singular value of each ``T_i``, ``W_i``, ``B_i``, ``C_i``,
    normalised by that matrix's largest singular value.
    """
    k = suggest_k(A) if k is None else k
    lay = make_layout(A.n_rows, p, k)
    blocks = extract_blocks(A, lay)
    factors = [factorize_block(Ai) for Ai in blocks.A]
    cells = []

    def add(i, kind, M):
        s = np.linalg.svd(M, compute_uv=False)
        top = s[0] if s.size and s[0] > 0 else 1.0
        for j, v in enumerate(s):
            cells.append({"partition": i, "matrix": kind, "index": j, "sigma": float(v), "normalized": float(v / top)})

    for i in range(p):
        if i < p - 1:
            add(i, "T", compute_full_spike(factors[i], blocks.B[i], "T").values)
            add(i, "B", blocks.B[i])
        if i > 0:
            add(i, "W", compute_full_spike(factors[i], blocks.C[i], "W").values)
            add(i, "C", blocks.C[i])
    return StudyReport("svd-study", cells, {"matrix": name, "n": A.n_rows, "p": p, "k": k})


# ---------------------------------------------------------------------------
# benchmark runner
# ---------------------------------------------------------------------------

def load_manifest(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def load_matrix(entry: dict, base: Path | None = None) -> CsrMatrix:
    """Matrix from a manifest entry: ``path``, ``generator`` or ``identity``."""
    if "identity" in entry:
        return identity(int(entry["identity"]))
    if "generator" in entry:
        from . import synthetic

        g = dict(entry["generator"])
        fn = getattr(synthetic, g.pop("kind"))
        return fn(**g)
    if "path" in entry:
        path = Path(entry["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        return read_matrix_market(path)
    raise ValueError(f"matrix entry {entry.get('name')!r} has no path, generator or identity")


def _cell_text(variant: str, iterations, inner, failure) -> str:
    if failure:
        return failure
    if variant == "LR-SPIKE-OTF":
        return f"N/A ({iterations:g})"
    if variant == "LR-SPIKE-I":
        return f"{iterations:g} ({inner:g})"
    return f"{iterations:g}"


CSV_COLUMNS = ["matrix", "variant", "p", "n_svd", "n_svd_used", "cell", "iterations", "inner_iterations", "failure", "residual_final", "reference"]


def bench_run(manifest: dict, base: Path | None = None) -> StudyReport:
    """Run every (matrix, variant, p, n_svd) cell listed in ``manifest``.

    Manifest keys: ``matrices`` (entries with ``name`` plus ``path``,
    ``generator`` or ``identity``; optional ``reorder`` flag, ``k`` and a
    ``reference`` mapping of variant -> published count), ``variants``,
    ``p`` (list), ``n_svd`` (list), ``tol``, ``max_iters``, ``seed``.
    Cell errors become failure codes and the run continues.
    """
    variants = manifest.get("variants", ["bj", "t"])
    ps = manifest.get("p", [3])
    n_svds = manifest.get("n_svd", [0])
    tol = float(manifest.get("tol", 1e-7))
    max_iters = int(manifest.get("max_iters", 100_000))
    seed = int(manifest.get("seed", 0))
    cells = []
    timings = []
    for entry in manifest["matrices"]:
        name = entry.get("name", "A")
        A = load_matrix(entry, base)
        f = np.ones(A.n_rows)
        if entry.get("reorder", False):
            R = reorder(A)
            A, f = R.matrix, R.map_rhs(f)
        k = entry.get("k")
        refs = entry.get("reference", {})
        for v in variants:
            cfg0 = SolverConfig(variant=v)
            grid = [0] if cfg0.variant == BJ else n_svds
            for p in ps:
                for n_svd in grid:
                    cell = {"matrix": name, "variant": cfg0.variant, "p": p, "n_svd": n_svd}
                    t0 = time.perf_counter()
                    try:
                        cfg = SolverConfig(variant=v, p=p, k=k, n_svd=n_svd, seed=seed)
                        cfg.outer = type(cfg.outer)(tol=tol, max_iters=max_iters)
                        _, rep = solve(A, f, cfg)
                        cell.update(
                            iterations=rep.iterations,
                            inner_iterations=rep.inner_iterations,
                            failure=rep.failure,
                            residual_final=rep.residual_final,
                            n_svd_used=rep.n_svd,
                        )
                    except (SingularBlockError, NotBlockTridiagonalError, LayoutInfeasibleError,
                            IllConditionedInterfaceError, ValueError) as err:
                        cell.update(iterations=None, inner_iterations=None, failure="FF", residual_final=None, error=str(err))
                    except (ArithmeticError, RuntimeError) as err:
                        cell.update(iterations=None, inner_iterations=None, failure="SF", residual_final=None, error=str(err))
                    cell["cell"] = _cell_text(cfg0.variant, cell["iterations"], cell["inner_iterations"], cell["failure"])
                    ref = refs.get(cfg0.variant, refs.get(v))
                    cell["reference"] = None if ref is None else str(ref)
                    timings.append(time.perf_counter() - t0)
                    cells.append(cell)
    prov = {"seed": seed, "tol": tol, "max_iters": max_iters, "variants": variants, "p": ps, "n_svd": n_svds,
            "matrices": [m.get("name") for m in manifest["matrices"]], "failure_codes": FAILURE_CODES}
    rep = StudyReport("bench", cells, prov)
    rep.timings = timings
    return rep


def write_report(rep: StudyReport, out_dir, stem: str, columns: list | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / f"{stem}.json", out / f"{stem}.csv"
    jpath.write_text(json.dumps(rep.to_json(), indent=2, default=_json_default) + "\n")
    cpath.write_text(rep.to_csv(columns))
    return jpath, cpath


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
