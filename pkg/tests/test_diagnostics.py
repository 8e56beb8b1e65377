import json

import numpy as np
import pytest

from lrspike.diagnostics import (
    StudyTooLargeError,
    bench_run,
    condition_study,
    load_manifest,
    svd_decay_study,
    write_report,
)
from lrspike.sparse_core import from_dense, write_matrix_market
from lrspike.synthetic import block_diagonal, random_banded


@pytest.mark.filterwarnings("ignore::lrspike.spikes.RankCollapseWarning")
def test_condition_block_diagonal_all_one():
    rep = condition_study(block_diagonal([12, 12, 12], seed=2), ps=(3,), n_svds=(0, 2), k=2)
    for c in rep.cells:
        for key in ("cond_bj", "cond_t", "cond_i", "cond_red_i", "cond_red_otf"):
            assert c[key] == pytest.approx(1.0, abs=1e-12)


def test_condition_nsvd_zero_is_block_jacobi():
    A = random_banded(150, 5, seed=1, dominance=0.6)
    rep = condition_study(A, ps=(2, 3), n_svds=(0, 3), k=5)
    for c in rep.cells:
        if c["n_svd"] == 0:
            assert c["cond_t"] == c["cond_bj"]
            assert c["cond_i"] == pytest.approx(c["cond_bj"], rel=1e-10)
            assert c["cond_red_i"] == pytest.approx(1.0)
    assert rep.provenance["ps"] == [2, 3] and rep.kind == "precond-study"


def test_condition_full_rank_limit():
    A = random_banded(180, 6, seed=3, dominance=0.6)
    rep = condition_study(A, ps=(3,), n_svds=(6,), k=6, spike_method="exact")
    assert rep.cells[0]["cond_i"] <= 1 + 1e-6


def test_condition_guard():
    with pytest.raises(StudyTooLargeError):
        condition_study(random_banded(50, 2, seed=0), max_n=40)


def test_svd_rank_one_couplings(rng):
    n, k = 60, 4
    D = np.diag(np.full(n, 5.0))
    for start in (20, 40):  # rank-1 blocks across both cuts
        u, v = rng.standard_normal(k), rng.standard_normal(k)
        D[start - k : start, start : start + k] = np.outer(u, v)
        D[start : start + k, start - k : start] = np.outer(v, u)
    rep = svd_decay_study(from_dense(D), 3, k=k)
    for i in range(3):
        for kind in "TWBC":
            vals = [c["normalized"] for c in rep.cells if c["partition"] == i and c["matrix"] == kind]
            if vals:
                assert vals[0] == 1.0 and max(vals[1:]) <= 1e-12


def test_svd_row_count_and_normalization():
    A = random_banded(240, 6, seed=4, dominance=0.7)
    rep = svd_decay_study(A, 3, k=6)
    # four matrices per interior cut: T and B on the left, W and C on the right
    assert len(rep.cells) == 2 * 2 * 6 * 2
    for i in range(3):
        for kind in "TWBC":
            vals = [c["normalized"] for c in rep.cells if c["partition"] == i and c["matrix"] == kind]
            if vals:
                assert vals[0] == 1.0
                assert all(a >= b for a, b in zip(vals, vals[1:]))


def _identity_manifest(tmp_path):
    return {
        "matrices": [{"name": "eye", "identity": 30}],
        "variants": ["bj", "t", "i"],
        "p": [3],
        "n_svd": [0, 2],
        "seed": 3,
    }


def test_bench_identity_half_iteration(tmp_path):
    rep = bench_run(_identity_manifest(tmp_path))
    assert rep.cells and all(c["iterations"] == 0.5 for c in rep.cells)


def test_bench_deterministic_csv(tmp_path):
    A = random_banded(150, 4, seed=9, dominance=0.6)
    write_matrix_market(A, tmp_path / "a.mtx")
    manifest = {
        "matrices": [{"name": "rb", "path": "a.mtx", "reference": {"BLOCK-JACOBI": 21.5}}],
        "variants": ["bj", "t", "i", "otf"],
        "p": [3],
        "n_svd": [0, 2],
        "seed": 1,
    }
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    m = load_manifest(tmp_path / "m.json")
    r1 = bench_run(m, base=tmp_path)
    r2 = bench_run(m, base=tmp_path)
    from lrspike.diagnostics import CSV_COLUMNS

    assert r1.to_csv(CSV_COLUMNS) == r2.to_csv(CSV_COLUMNS)
    bj = [c for c in r1.cells if c["variant"] == "BLOCK-JACOBI"][0]
    assert bj["reference"] == "21.5"
    i_cell = [c for c in r1.cells if c["variant"] == "LR-SPIKE-I" and c["n_svd"] == 2][0]
    assert i_cell["cell"].endswith(")") and "(" in i_cell["cell"]
    otf = [c for c in r1.cells if c["variant"] == "LR-SPIKE-OTF"][0]
    assert otf["cell"].startswith("N/A (")
    jp, cp = write_report(r1, tmp_path / "out", "bench", CSV_COLUMNS)
    assert json.loads(jp.read_text())["kind"] == "bench"
    assert cp.read_text().splitlines()[0].startswith("matrix,variant,p,n_svd")


def test_bench_failure_codes_do_not_stop_run(tmp_path):
    manifest = {
        "matrices": [
            {"name": "too-narrow", "generator": {"kind": "random_banded", "n": 90, "k": 6, "seed": 0}, "k": 2},
            {"name": "hard", "generator": {"kind": "random_banded", "n": 120, "k": 4, "seed": 1, "dominance": 0.3}},
        ],
        "variants": ["bj"],
        "p": [3],
        "max_iters": 1,
        "tol": 1e-14,
    }
    rep = bench_run(manifest)
    codes = [c["failure"] for c in rep.cells]
    assert codes == ["FF", "NC"]
    assert rep.cells[0]["cell"] == "FF"


def test_bench_yaml_manifest(tmp_path):
    (tmp_path / "m.yaml").write_text("matrices:\n  - name: eye\n    identity: 12\nvariants: [bj]\np: [2]\n")
    rep = bench_run(load_manifest(tmp_path / "m.yaml"))
    assert rep.cells[0]["iterations"] == 0.5
