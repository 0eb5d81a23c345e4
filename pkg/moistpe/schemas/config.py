"""Run configuration schemas, one model per config-file section."""

from typing import List, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, validate_default=True)


class ResolutionConfig(_Section):
    """Horizontal truncation, Gaussian grid size and vertical levels."""

    L: int = Field(default=15, ge=1, description="Maximum spherical-harmonic degree")
    n_lat: int = Field(default=24, ge=2, description="Gaussian latitude count")
    n_lon: int = Field(default=48, ge=3, description="Equispaced longitude count")
    K: int = Field(default=17, ge=2, description="Vertical levels")

    @model_validator(mode="after")
    def check_transform_bounds(self) -> "ResolutionConfig":
        if self.n_lat < self.L + 1:
            raise ValueError(f"n_lat must be at least L+1 = {self.L + 1}")
        if self.n_lon < 2 * self.L + 1:
            raise ValueError(f"n_lon must be at least 2L+1 = {2 * self.L + 1}")
        return self


class ModelParams(_Section):
    """Nondimensional constants of the moist primitive equations and term toggles."""

    R0: float = Field(default=1.0, gt=0, description="Rossby number")
    a: float = Field(default=0.618, description="Moisture constant in (1 + a q) T")
    b: float = Field(default=1.0, gt=0, description="Buoyancy constant")
    P: float = Field(default=1.0, gt=0, description="Surface pressure")
    p0: float = Field(default=0.1, gt=0, description="Top pressure")
    alpha_s: float = Field(default=1.0, ge=0, description="Robin coefficient for T at xi = 1")
    beta_s: float = Field(default=1.0, ge=0, description="Robin coefficient for q at xi = 1")
    nu1: float = Field(default=1.0, gt=0, description="Horizontal viscosity")
    nu2: float = Field(default=1.0, gt=0, description="Horizontal heat diffusivity")
    nu3: float = Field(default=1.0, gt=0, description="Horizontal moisture diffusivity")
    mu1: float = Field(default=1.0, gt=0, description="Vertical viscosity")
    mu2: float = Field(default=1.0, gt=0, description="Vertical heat diffusivity")
    mu3: float = Field(default=1.0, gt=0, description="Vertical moisture diffusivity")
    advection: bool = Field(default=True, description="Horizontal and vertical advection")
    coriolis: bool = Field(default=True, description="Coriolis force")
    buoyancy: bool = Field(default=True, description="Geopotential gradient and its heating pair")
    diffusion: bool = Field(default=True, description="Horizontal and vertical diffusion")
    forcing: bool = Field(default=True, description="Heat and moisture sources")

    @model_validator(mode="after")
    def check_pressure_range(self) -> "ModelParams":
        if self.p0 > self.P:
            raise ValueError("p0 must not exceed P (keys 'p0' and 'P')")
        return self

    def only(self, *terms: str) -> "ModelParams":
        """Copy with every term toggle off except ``terms``."""
        toggles = {t: t in terms for t in TERM_NAMES}
        return self.model_copy(update=toggles)


TERM_NAMES = ("advection", "coriolis", "buoyancy", "diffusion", "forcing")


class StepperConfig(_Section):
    """Time-stepping controls."""

    dt: float = Field(default=0.01, gt=0, description="Time step")
    scheme: Literal["imex-euler", "imex-bdf2"] = Field(
        default="imex-bdf2", description="IMEX scheme"
    )
    implicit_tol: float = Field(
        default=1e-12, gt=0, description="Relative residual of implicit solves"
    )
    max_implicit_iters: int = Field(
        default=3, ge=1, description="Refinement sweeps per implicit solve"
    )
    cfl_safety: float = Field(
        default=0.5, gt=0, le=1, description="Safety factor of the CFL estimate"
    )
    dt_max: float = Field(
        default=0.05, gt=0, description="Step returned by the CFL estimate at rest"
    )


class ForcingConfig(_Section):
    preset: Literal["none", "zonal", "wave"] = Field(default="wave", description="Forcing preset")
    amplitude: float = Field(default=1.0, ge=0, description="Preset amplitude")


class RunConfig(_Section):
    spinup: float = Field(default=20.0, ge=0, description="Spin-up duration")
    duration: float = Field(default=100.0, ge=0, description="Measured duration after spin-up")
    initial_amplitude: float = Field(
        default=0.1, ge=0, description="Amplitude of the random initial state"
    )
    initial_degree: int = Field(
        default=5, ge=1, description="Highest degree of the random initial state"
    )
    monitor_taus: List[float] = Field(
        default=[1.0, 2.0, 4.0, 8.0], description="Growth-monitor windows"
    )
    seed: int = Field(default=20240917, ge=0, description="Root RNG seed")

    @field_validator("monitor_taus")
    @classmethod
    def validate_taus(cls, v: List[float]) -> List[float]:
        if any(t <= 0 for t in v):
            raise ValueError("monitor_taus must be positive")
        return v


class EnsembleConfig(_Section):
    size: int = Field(default=8, ge=1, description="Number of perturbed pairs")
    scale: float = Field(
        default=1e-5, gt=0, description="Perturbation size relative to the base state norm"
    )
    degrees: int = Field(default=5, ge=1, description="Highest harmonic degree of perturbations")
    horizon: float = Field(default=2.0, gt=0, description="Squeezing horizon T")
    modes: List[int] = Field(default=[], description="Mode counts to report (empty: all)")
    gamma_scales: List[float] = Field(
        default=[1e-4, 1e-5, 1e-6], description="Scales for the Lipschitz sweep"
    )
    gamma_samples: int = Field(default=20, ge=1, description="Time samples of the Lipschitz table")

    @field_validator("modes")
    @classmethod
    def validate_modes(cls, v: List[int]) -> List[int]:
        if any(n < 0 for n in v):
            raise ValueError("mode counts must be non-negative")
        return sorted(set(v))


class OutputConfig(_Section):
    directory: str = Field(default="output", description="Artifact directory")
    cadence: int = Field(default=10, ge=1, description="Steps between time-series rows")
    snapshot_cadence: int = Field(
        default=0, ge=0, description="Steps between snapshots (0: final only)"
    )


class DimboundConfig(_Section):
    N: int = Field(default=1, ge=1, description="Squeezing mode count")
    c: float = Field(default=1.0, gt=0, description="Lipschitz constant")
    delta: float = Field(default=1e-6, gt=0, lt=1, description="Squeezing factor")


class Config(_Section):
    """Complete run configuration."""

    resolution: ResolutionConfig = Field(default_factory=ResolutionConfig)
    model: ModelParams = Field(default_factory=ModelParams)
    stepper: StepperConfig = Field(default_factory=StepperConfig)
    forcing: ForcingConfig = Field(default_factory=ForcingConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    dimbound: DimboundConfig = Field(default_factory=DimboundConfig)


SECTIONS: dict[str, type[BaseModel]] = {
    "resolution": ResolutionConfig,
    "model": ModelParams,
    "stepper": StepperConfig,
    "forcing": ForcingConfig,
    "run": RunConfig,
    "ensemble": EnsembleConfig,
    "output": OutputConfig,
    "dimbound": DimboundConfig,
}
