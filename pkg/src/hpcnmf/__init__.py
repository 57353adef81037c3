"""Distributed NMF by alternating nonnegative least squares, executed on an
in-process virtual cluster that books every collective against an
alpha-beta-gamma cost model."""

from .algorithms import (
    FactorPair,
    IterationStats,
    NmfConfig,
    NmfResult,
    hpc_nmf,
    naive_parallel_nmf,
    select_grid,
    sequential_nmf,
    stopping_check,
)
from .cluster import CommGroup, RankContext, run_virtual
from .costmodel import CostEstimate, LowerBound, bandwidth_lower_bound, predict_hpc, predict_naive
from .dataio import (
    MatrixSource,
    distribute,
    gather_blocks,
    gen_dense_synthetic,
    gen_sparse_er,
    init_H,
    read_matrix_market,
    write_matrix_market,
)
from .errors import (
    BppConvergenceError,
    ClusterAborted,
    CollectiveMismatch,
    ConfigError,
    ContractViolation,
    DeadlockError,
    MatrixMarketError,
    SingularSubsystemError,
)
from .grid import GridShape, RankId
from .ledger import CATEGORIES, CostLedger, ModelParams, RankLedger, Tally, ledger_modeled_time
from .matrix import BlockMap, gram, matmul_cross_left, matmul_cross_right, partition
from .nls import NormalEquations, SolverChoice, bpp_solve, brute_force_nls, hals_update, mu_update
from .report import BenchReport, compare_runs, emit_report

__version__ = "0.1.0"
