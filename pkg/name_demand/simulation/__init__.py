# Monte Carlo designs and the replication harness

from .benchmark import (
    BenchmarkResult,
    alpha_histogram,
    recovery_table,
    run_benchmark,
    summarize,
    timing_summary,
)
from .dgp import (
    MisspecTruth,
    SparseTruth,
    exact_share_source,
    gen_misspec,
    gen_sparse,
    iter_sparse_markets,
    true_shares_at,
)

__all__ = [
    'BenchmarkResult',
    'alpha_histogram',
    'recovery_table',
    'run_benchmark',
    'summarize',
    'timing_summary',
    'MisspecTruth',
    'SparseTruth',
    'exact_share_source',
    'gen_misspec',
    'gen_sparse',
    'iter_sparse_markets',
    'true_shares_at',
]
