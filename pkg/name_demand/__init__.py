# NAME demand estimation package
# Two-step discrete-choice demand estimation with kernel first stage

from .core.config_manager import ConfigManager, RunConfig
from .core.dataset import Dataset, IndividualSample, load_dataset, validate_dataset
from .core.errors import NameDemandError
from .core.types import EstimationResult, MarketData, MomentSpec, SimplexVector, ThetaPoint, XiMatrix

from .first_stage import KernelDescriptor, SharePredictor, fit, predict
from .estimators import (
    BunchingSpec,
    ParametricSpec,
    estimate_bunching,
    estimate_homogeneous,
    estimate_name,
    estimate_parametric,
)
from .aggregate import AggregateMomentProblem, block_gradient, estimate_aggregate
from .extension import beta_curve, interpolate_theta, recover_beta, recover_E, solve_weights_logit
from .sparse_recovery import fit_on_support, name_on_support, recover_support, recover_support_stream

# Pipeline entry points
from .engine import run_benchmark, run_estimate, run_recover_support, run_simulate

__version__ = "0.1.0"
__all__ = [
    # Data and configuration
    'ConfigManager',
    'RunConfig',
    'Dataset',
    'IndividualSample',
    'load_dataset',
    'validate_dataset',
    'NameDemandError',
    'EstimationResult',
    'MarketData',
    'MomentSpec',
    'SimplexVector',
    'ThetaPoint',
    'XiMatrix',

    # Estimation
    'KernelDescriptor',
    'SharePredictor',
    'fit',
    'predict',
    'BunchingSpec',
    'ParametricSpec',
    'estimate_bunching',
    'estimate_homogeneous',
    'estimate_name',
    'estimate_parametric',
    'AggregateMomentProblem',
    'block_gradient',
    'estimate_aggregate',
    'beta_curve',
    'interpolate_theta',
    'recover_beta',
    'recover_E',
    'solve_weights_logit',
    'recover_support',
    'recover_support_stream',
    'fit_on_support',
    'name_on_support',

    # Pipeline entry points
    'run_benchmark',
    'run_estimate',
    'run_recover_support',
    'run_simulate',
]
