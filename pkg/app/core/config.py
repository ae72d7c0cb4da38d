"""
Application configuration using Pydantic Settings
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import List, Literal
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix RLD_)"""

    model_config = SettingsConfigDict(
        env_prefix="RLD_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # App
    app_name: str = "RLD Dispatch API"
    app_env: str = "development"
    app_version: str = "1.0.0"
    debug: bool = True
    api_version: str = "v1"
    log_level: str = "INFO"

    # Server
    host: str = "0.0.0.0"
    port: int = 8000

    # Tolerance hierarchy shared by lp, dcopf and rld
    lp_pivot_tol: float = 1e-11
    feasibility_tol: float = 1e-8
    active_tol: float = 1e-6
    lp_max_iterations: int = 5000

    # Gaussian special functions and equilibrium solver
    delta_clamp: float = 8.0
    newton_max_iter: int = 100
    equilibrium_tol: float = 1e-7
    cholesky_max_jitter: float = 1e-10

    # Effective sink-side price of the two-generator reduction
    alpha2_form: Literal["dual", "theorem"] = "dual"

    # Monte Carlo evaluation
    default_seed: int = 20130601
    default_scenarios: int = 20000
    default_sigma_grid: List[float] = [1.0, 6.0, 11.0, 16.0, 21.0, 26.0, 31.0, 36.0]
    max_infeasible_fraction: float = 0.001
    eval_workers: int = 1
    eval_chunk_size: int = 2048

    # Brute-force certification grid
    brute_force_final_step: float = 0.01


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()


settings = get_settings()
