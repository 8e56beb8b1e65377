"""Low-rank SPIKE preconditioners for banded linear systems."""

from .block_solver import BlockFactor, SingularBlockError, factorize_block, solve_block, solve_block_adjoint
from .krylov import BreakdownError, IterConfig, SolveReport, bicgstab, cg
from .ledger import STAGES, CommLedger
from .partition import (
    LayoutInfeasibleError,
    NotBlockTridiagonalError,
    PartitionBlocks,
    PartitionLayout,
    extract_blocks,
    make_layout,
)
from .reduced_system import (
    IllConditionedInterfaceError,
    TruncatedPrecond,
    apply_truncated_precond,
    build_truncated_precond,
    matvec_exact,
    matvec_lowrank,
    matvec_otf,
)
from .reorder import Permutation, ReorderResult, rcm_ordering, reorder
from .sparse_core import (
    BandInfo,
    CsrMatrix,
    MatrixMarketError,
    band_metrics,
    from_coo,
    from_dense,
    from_scipy,
    read_matrix_market,
    spmv,
    write_matrix_market,
)
from .spike_solvers import (
    SolverConfig,
    SpikeFactorization,
    SpikeSolveReport,
    apply_block_jacobi,
    apply_precond_I,
    apply_precond_T,
    factorize,
    solve,
    solve_otf,
)
from .spikes import LowRankSpike, compute_full_spike, exact_spike_svd, randomized_spike_svd

__version__ = "0.1.0"
