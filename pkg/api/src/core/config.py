from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Fluid integration
    step_fraction: float = 1.0 / 2000.0  # Default RK4 step as a fraction of the horizon
    negative_clamp: float = 1e-12  # Negative fluid values are floating-point noise

    # Multiplier search
    epsilon: float = 0.05  # Terminal tolerance on |X_d(T) - n|
    max_bisection_iterations: int = 200
    max_gamma_doublings: int = 60

    # Costate and switching epochs
    costate_method: Literal["ode", "closed_form"] = "ode"
    scan_points: int = 4000  # Sign-change scan resolution on [0, T]
    root_tolerance_fraction: float = 1e-9  # Switch epoch tolerance relative to T
    cancellation_digits: float = 6.0  # Digits the binomial sum may lose before quadrature

    # Critical failure rate search
    mu_bar_max_doublings: int = 60
    mu_bar_rtol: float = 1e-6

    # Stochastic simulation
    sim_seed: int = 20240601
    sim_runs: int = 1000
    sim_workers: int = 1

    # Output
    sweep_workers: int = 1
    csv_significant_digits: int = 6
    log_level: str = "INFO"
    show_progress: bool = False

    model_config = SettingsConfigDict(env_prefix="REGEN_", env_file=".env")


settings = Settings()
