# Core modules: domain types, datasets, errors, configuration and output

from .config_manager import ConfigManager, RunConfig
from .dataset import Dataset, IndividualSample, load_dataset, dump_dataset, validate_dataset
from .errors import NameDemandError
from .run_store import RunStore

__all__ = [
    'ConfigManager',
    'RunConfig',
    'Dataset',
    'IndividualSample',
    'load_dataset',
    'dump_dataset',
    'validate_dataset',
    'NameDemandError',
    'RunStore',
]
