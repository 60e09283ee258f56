"""
Settings - Process-level knobs read from the environment or a .env file
"""

from pydantic_settings import BaseSettings, SettingsConfigDict


class RuntimeSettings(BaseSettings):
    """``NAME_DEMAND_JOBS`` and ``NAME_DEMAND_LOG_LEVEL``.

    ``jobs`` follows joblib: -1 uses every core, 1 runs sequentially.
    """

    model_config = SettingsConfigDict(env_prefix="NAME_DEMAND_", env_file=".env", extra="ignore")

    jobs: int = -1
    log_level: str = "INFO"


def get_settings() -> RuntimeSettings:
    return RuntimeSettings()
