"""
Config Manager - Run configuration models and JSON persistence
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator

from ..constants import (
    CONTRACTION_MAX_ITER,
    CONTRACTION_TOL,
    CV_FOLDS,
    DEFAULT_RIDGE,
    OPTIMIZER_FTOL,
    OPTIMIZER_MAX_ITER,
    OPTIMIZER_XTOL,
    QUADRATURE_DRAWS,
    RMSPROP_DECAY,
    RMSPROP_LEARNING_RATE,
    FINITE_DIFF_STEP,
    HISTOGRAM_BINS,
    RUN_CONFIG_FILE,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerConfig(_Section):
    """Nelder-Mead up to six parameters, RMSprop gradient descent above"""

    method: Literal["auto", "nelder-mead", "rmsprop"] = "auto"
    ftol: float = Field(OPTIMIZER_FTOL, gt=0)
    xtol: float = Field(OPTIMIZER_XTOL, gt=0)
    max_iter: PositiveInt = OPTIMIZER_MAX_ITER
    learning_rate: float = Field(RMSPROP_LEARNING_RATE, gt=0)
    decay: float = Field(RMSPROP_DECAY, gt=0, lt=1)
    fd_step: float = Field(FINITE_DIFF_STEP, gt=0)


class ContractionConfig(_Section):
    tol: float = Field(CONTRACTION_TOL, gt=0)
    max_iter: PositiveInt = CONTRACTION_MAX_ITER


class QuadratureConfig(_Section):
    """Random coefficients are estimated only when ``enabled``"""

    enabled: bool = False
    draws: PositiveInt = QUADRATURE_DRAWS
    distribution: Literal["normal", "halton"] = "normal"
    seed: int = Field(0, ge=0)


class FirstStageConfig(_Section):
    lam: float = Field(DEFAULT_RIDGE, gt=0)
    bandwidth: Optional[float] = Field(None, gt=0)
    lambda_grid: Optional[List[float]] = None
    cv_folds: PositiveInt = CV_FOLDS


class MisspecConfig(_Section):
    """Scalar-Z design with beta(Z) = g0 + g1 Z + g2 Z^2 and exogenous prices"""

    M: PositiveInt = 50
    N: PositiveInt = 1000
    J: PositiveInt = 2
    gamma: Tuple[float, float, float] = (1.0, 0.5, 0.5)
    alpha_true: float = 1.0
    xi_sd: float = Field(0.5, ge=0)
    price_shift: float = 0.5
    B: PositiveInt = 50
    seed: int = Field(0, ge=0)


class SparseConfig(_Section):
    """High-dimensional design where few covariates shift preferences"""

    M: PositiveInt = 50
    N: PositiveInt = 1000
    J: Literal[1] = 1
    p: PositiveInt = 1000
    p0: PositiveInt = 2
    active_per_market: PositiveInt = 1
    B: PositiveInt = 200
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_active(self) -> "SparseConfig":
        if self.p0 > self.p:
            raise ValueError("p0 must not exceed p")
        if self.active_per_market > self.p0:
            raise ValueError("active_per_market must not exceed p0")
        return self


class BunchingConfig(_Section):
    column: int = Field(0, ge=0)
    regions: PositiveInt = 2


class EstimationConfig(_Section):
    estimator: Literal["name", "parametric", "bunching", "sparse-name"] = "name"
    z0: Union[Literal["median"], List[float]] = "median"
    spec: str = "1+z+z^2"
    moments: Optional[List[str]] = None
    weight_matrix: Optional[List[List[float]]] = None
    scale_moments: bool = True
    z_grid: Optional[List[float]] = None
    bunching: BunchingConfig = Field(default_factory=BunchingConfig)


class BenchmarkConfig(_Section):
    estimators: List[Literal["name", "misspecified", "oracle"]] = ["name", "misspecified", "oracle"]
    histogram_bins: PositiveInt = HISTOGRAM_BINS


class RunConfig(_Section):
    """One run: experiment, seeds and every tunable of the pipeline.

    ``seed`` and ``replications`` override the experiment's own ``seed``
    and ``B`` when set.
    """

    experiment: Literal["misspec", "sparse"] = "misspec"
    seed: Optional[int] = Field(None, ge=0)
    replications: Optional[PositiveInt] = None
    jobs: Optional[int] = None
    misspec: MisspecConfig = Field(default_factory=MisspecConfig)
    sparse: SparseConfig = Field(default_factory=SparseConfig)
    first_stage: FirstStageConfig = Field(default_factory=FirstStageConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    contraction: ContractionConfig = Field(default_factory=ContractionConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    @model_validator(mode="after")
    def _apply_overrides(self) -> "RunConfig":
        if self.seed is not None:
            self.misspec.seed = self.seed
            self.sparse.seed = self.seed
        if self.replications is not None:
            self.misspec.B = self.replications
            self.sparse.B = self.replications
        return self

    @property
    def experiment_config(self) -> Union[MisspecConfig, SparseConfig]:
        return self.misspec if self.experiment == "misspec" else self.sparse


class ConfigManager:
    """Loads run configurations: defaults <- JSON file <- overrides"""

    def __init__(self):
        self.default_config = RunConfig().model_dump(mode="json")

    def load_config(self, path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
        """Read, merge and validate a run configuration.

        Args:
            path: JSON document; missing means defaults only.
            overrides: Dotted keys (``"misspec.M"``) applied last; ``None``
                values are ignored.

        Raises:
            ConfigError: unreadable file, malformed JSON, or a field that
                fails validation.
        """
        loaded: Dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    loaded = json.load(f)
            except FileNotFoundError as e:
                raise ConfigError(f"config file not found: {path}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"malformed JSON in {path}: {e.msg}", line=e.lineno) from e
            if not isinstance(loaded, dict):
                raise ConfigError(f"config root in {path} must be an object")

        merged = self._deep_merge(json.loads(json.dumps(self.default_config)), loaded)
        for dotted, value in (overrides or {}).items():
            if value is not None:
                self._set_dotted(merged, dotted, value)

        try:
            return RunConfig.model_validate(merged)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"])
            raise ConfigError(f"invalid config: {first['msg']}", field=field) from e

    def save_config(self, config: RunConfig, out_dir: Union[str, Path]) -> Path:
        """Write run_config.json atomically (temp file, then rename)"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / RUN_CONFIG_FILE
        temp_path = target.with_suffix(".json.tmp")
        with open(temp_path, "w", encoding="utf-8") as f:
            json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(temp_path, target)
        logger.debug("Saved run config to %s", target)
        return target

    def _deep_merge(self, base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
        """Merge ``update`` into ``base`` recursively, ``update`` taking precedence"""
        for key, value in update.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._deep_merge(base[key], value)
            else:
                base[key] = value
        return base

    @staticmethod
    def _set_dotted(document: Dict[str, Any], dotted: str, value: Any) -> None:
        parts = dotted.split(".")
        node = document
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
