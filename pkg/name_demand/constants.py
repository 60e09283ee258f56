"""
Constants and defaults for the NAME demand estimation package
"""

# Output files
DATASET_FILE = "dataset.json"
RUN_CONFIG_FILE = "run_config.json"
RESULT_FILE = "estimates.csv"
PREDICTOR_FILE = "predictor.json"
BETA_CURVE_FILE = "beta_curve.csv"
REPLICATIONS_FILE = "replications.csv"
SUMMARY_FILE = "summary.csv"
TIMING_FILE = "timing.csv"
TIMING_SUMMARY_FILE = "timing_summary.csv"
ALPHA_HIST_FILE = "alpha_hist.csv"
SUPPORT_DIAGNOSTICS_FILE = "support_diagnostics.csv"
SUPPORT_FILE = "support.json"
TRUTH_FILE = "truth.json"

# Float format used by every CSV writer
CSV_FLOAT_FORMAT = "%.10g"

# Simplex invariants
SIMPLEX_TOL = 1e-12

# Share inversion
CONTRACTION_TOL = 1e-12
CONTRACTION_MAX_ITER = 5000

# Quadrature
QUADRATURE_DRAWS = 200
QUADRATURE_DISTRIBUTIONS = ("normal", "halton")

# First stage
DEFAULT_RIDGE = 1.0
CV_FOLDS = 5

# Optimizer
OPTIMIZER_FTOL = 1e-10
OPTIMIZER_XTOL = 1e-8
OPTIMIZER_MAX_ITER = 10_000
NELDER_MEAD_MAX_PARAMS = 6
RMSPROP_LEARNING_RATE = 1e-2
RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8
FINITE_DIFF_STEP = 1e-6
# Objective value reported when an inner share inversion fails
FAILED_INVERSION_PENALTY = 1e10

# Predicted shares are floored before inversion
SHARE_FLOOR = 1e-8

# Benchmarks
HISTOGRAM_BINS = 30

# Moment identifiers, in canonical order
MOMENT_IDS = ("x_xi", "p_xi", "w_xi", "z_xd", "z2_xd")
