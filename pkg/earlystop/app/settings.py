# earlystop/app/settings.py
import math
from functools import lru_cache
from pathlib import Path
from typing import Literal, Tuple, Type

from dotenv import load_dotenv
from pydantic import BaseModel, Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

load_dotenv()

CONFIG_PATH = Path(__file__).resolve().parents[2] / "config.toml"


class Tolerances(BaseModel):
    psd: float = 1e-10
    rank: float = 1e-12
    recon: float = 1e-8
    ortho: float = 1e-10
    root: float = 1e-10
    solve: float = 1e-8
    shrink_slack: float = 1e-12


class Constants(BaseModel):
    # pre-factors of the two critical-radius equations and the ridge rule
    empirical_prefactor: float = 2.0 * math.e
    population_prefactor: float = 40.0
    ridge_prefactor: float = 4.0
    bound_constant: float = 12.0
    max_iter_factor: int = 10


class SolverSettings(BaseModel):
    eigensolver: Literal["jacobi", "lapack"] = "jacobi"
    jacobi_max_sweeps: int = 100
    jacobi_tol: float = 1e-12
    bisection_max_iter: int = 200
    population_truncation: int = 100_000


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="EARLYSTOP_",
        env_nested_delimiter="__",
        toml_file=CONFIG_PATH,
        extra="ignore",
    )

    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    quadrature_points: int = Field(default=10_001, ge=2)
    default_trials: int = Field(default=1000, ge=1)
    sigma_floor: float = 1e-12
    tolerances: Tolerances = Tolerances()
    constants: Constants = Constants()
    solver: SolverSettings = SolverSettings()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, env_settings, dotenv_settings, TomlConfigSettingsSource(settings_cls))


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
