"""Command line entry point: ``lrspike {reorder,solve,precond-study,svd-study,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.io

from .diagnostics import (
    bench_run,
    condition_study,
    load_manifest,
    svd_decay_study,
    write_report,
    CSV_COLUMNS,
    _json_default,
)
from .krylov import IterConfig, residual_history_csv
from .reorder import reorder
from .sparse_core import read_matrix_market, write_matrix_market
from .spike_solvers import SolverConfig, solve

log = logging.getLogger("lrspike")


def _int_list(text: str) -> list:
    return [int(t) for t in text.split(",") if t.strip()]


def _load_rhs(source: str, n: int) -> np.ndarray:
    if source == "ones":
        return np.ones(n)
    m = scipy.io.mmread(source)
    f = m.toarray() if hasattr(m, "toarray") else np.asarray(m)
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != n:
        raise SystemExit(f"right-hand side has {f.shape[0]} rows, matrix has {n}")
    return f[:, 0] if f.shape[1] == 1 else f


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_reorder(args) -> int:
    A = read_matrix_market(args.input)
    R = reorder(A, scale=not args.no_scale, rcm=not args.no_rcm)
    if args.out:
        write_matrix_market(R.matrix, args.out, comment="reordered")
    (b0, w0, d0), (b1, w1, d1) = R.before, R.after
    _dump(
        {
            "n_original": R.n_original,
            "n": R.matrix.n_rows,
            "removed": R.removed.tolist(),
            "before": {"upper_half_bw": b0.upper_half_bw, "lower_half_bw": b0.lower_half_bw, "diag_weight": w0, "band_density": d0},
            "after": {"upper_half_bw": b1.upper_half_bw, "lower_half_bw": b1.lower_half_bw, "diag_weight": w1, "band_density": d1},
            "seed": args.seed,
        },
        args.report,
    )
    return 0


def cmd_solve(args) -> int:
    A = read_matrix_market(args.input)
    f = _load_rhs(args.rhs, A.n_rows)
    R = None
    if args.reorder:
        R = reorder(A)
        A_s, f_s = R.matrix, R.map_rhs(f)
    else:
        A_s, f_s = A, f
    cfg = SolverConfig(
        variant=args.variant,
        p=args.p,
        k=args.k,
        n_svd=args.nsvd,
        outer=IterConfig(tol=args.tol, max_iters=args.max_iters),
        seed=args.seed,
        krylov=args.krylov,
        workers=args.workers,
    )
    x, rep = solve(A_s, f_s, cfg)
    if R is not None:
        x = R.unmap_solution(x, f, A)
    if args.x_out:
        np.savetxt(args.x_out, np.atleast_2d(x.T).T)
    if args.history:
        Path(args.history).write_text(residual_history_csv(rep))
    _dump(rep.to_json(), args.report)
    return 0


def cmd_precond_study(args) -> int:
    A = read_matrix_market(args.input)
    if args.reorder:
        A = reorder(A).matrix
    rep = condition_study(A, ps=_int_list(args.p), n_svds=_int_list(args.nsvd), k=args.k, seed=args.seed,
                          name=Path(args.input).name)
    write_report(rep, args.out_dir, "precond_study")
    return 0


def cmd_svd_study(args) -> int:
    A = read_matrix_market(args.input)
    if args.reorder:
        A = reorder(A).matrix
    rep = svd_decay_study(A, args.p, k=args.k, name=Path(args.input).name)
    rep.provenance["seed"] = args.seed
    write_report(rep, args.out_dir, "svd_study")
    return 0


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest["seed"] = args.seed
    rep = bench_run(manifest, base=Path(args.manifest).parent)
    write_report(rep, args.out_dir, "bench", CSV_COLUMNS)
    n_fail = sum(1 for c in rep.cells if c.get("failure"))
    log.info("%d cells, %d failed", len(rep.cells), n_fail)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrspike", description="Low-rank SPIKE preconditioners for banded systems.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reorder", help="strip, scale and RCM-reorder a matrix")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out")
    r.add_argument("--report")
    r.add_argument("--no-scale", action="store_true")
    r.add_argument("--no-rcm", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_reorder)

    s = sub.add_parser("solve", help="solve A x = f with one variant")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--rhs", default="ones")
    s.add_argument("--variant", choices=["t", "i", "otf", "bj"], default="t")
    s.add_argument("-p", type=int, default=2)
    s.add_argument("-k", type=int, default=None)
    s.add_argument("--nsvd", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.add_argument("--krylov", choices=["bicgstab", "cg"], default="bicgstab")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--reorder", action="store_true", help="run the reorder pipeline first")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.add_argument("--x-out")
    s.add_argument("--history", help="write the outer residual history as CSV")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("precond-study", help="condition numbers of preconditioned operators")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("-p", default="3", help="comma-separated partition counts")
    c.add_argument("--nsvd", default="0,4,8,16", help="comma-separated ranks")
    c.add_argument("-k", type=int, default=None)
    c.add_argument("--reorder", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir", default=".")
    c.set_defaults(func=cmd_precond_study)

    d = sub.add_parser("svd-study", help="singular values of spikes and coupling blocks")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("-p", type=int, default=3)
    d.add_argument("-k", type=int, default=None)
    d.add_argument("--reorder", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out-dir", default=".")
    d.set_defaults(func=cmd_svd_study)

    b = sub.add_parser("bench", help="run a benchmark manifest (YAML or JSON)")
    b.add_argument("--manifest", required=True)
    b.add_argument("--out-dir", default=".")
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
