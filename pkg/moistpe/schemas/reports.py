"""Report and record schemas emitted by diagnostics and the CLI."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class NormReport(BaseModel):
    """L2 and H1-type norms of a state plus the tendency norm."""

    time: float = Field(..., description="Model time")
    l2_v: float = Field(..., ge=0)
    l2_T: float = Field(..., ge=0)
    l2_q: float = Field(..., ge=0)
    v1_v: float = Field(..., ge=0, description="Covariant gradients, xi-derivative and L2 term")
    v2_T: float = Field(..., ge=0, description="Gradients, xi-derivative and alpha_s surface term")
    v3_q: float = Field(..., ge=0, description="Gradients, xi-derivative and beta_s surface term")
    dtU_l2: float = Field(default=0.0, ge=0, description="L2 norm of the assembled tendency")
    barotropic_ke: float = Field(default=0.0, ge=0, description="1/2 |mean v|^2")
    baroclinic_ke: float = Field(default=0.0, ge=0, description="1/2 |v - mean v|^2")


class IdentityResidual(BaseModel):
    name: str
    absolute: float
    relative: float
    tolerance: float
    precondition_ok: bool = True
    passed: bool


class IdentityReport(BaseModel):
    """Residuals of the discrete operator identities, one entry per identity."""

    residuals: List[IdentityResidual]
    horizontal_tolerance: float
    vertical_tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.residuals)

    def by_name(self) -> Dict[str, IdentityResidual]:
        return {r.name: r for r in self.residuals}


class BudgetRecord(BaseModel):
    """Discrete energy budget ``dE/dt + dissipation - work = residual``."""

    time: float
    energy: float
    dEdt: float
    dissipation: float
    work: float
    residual: float


class PairRecord(BaseModel):
    index: int
    psi0: float
    phi_T: Optional[float] = None
    excluded: bool = False


class SqueezeReport(BaseModel):
    """Squeezing ratio for one mode count on an evolved ensemble."""

    n: int
    T_horizon: float
    lambda_n: Optional[float] = Field(None, description="Shared threshold min_i lambda_{i,n}")
    delta_hat: Optional[float] = Field(None, description="max over pairs of phi(T)/psi(0)")
    envelope: Optional[float] = Field(None, description="exp(-lambda_n T) + gamma(T)/lambda_n")
    pairs: List[PairRecord]
    excluded: List[int] = Field(default_factory=list)
    ensemble: Dict[str, Any] = Field(default_factory=dict)


class GammaTable(BaseModel):
    """Empirical Lipschitz envelope gamma(t), non-decreasing."""

    scale: float
    times: List[float]
    gamma_hat: List[float]
    excluded: List[int] = Field(default_factory=list)

    @property
    def lipschitz_surrogate(self) -> float:
        """sqrt(gamma(T)); an empirical stand-in for the Lipschitz constant."""
        return self.gamma_hat[-1] ** 0.5 if self.gamma_hat else float("nan")


class GrowthFit(BaseModel):
    """Fit of the accumulated H2 integral against c (sqrt(tau) + tau)."""

    times: List[float]
    integral: List[float]
    c_min: float
    taus: List[float]
    c_by_tau: List[float]

    @property
    def spread(self) -> float:
        if not self.c_by_tau or min(self.c_by_tau) <= 0:
            return float("inf")
        return max(self.c_by_tau) / min(self.c_by_tau)


class TrendFit(BaseModel):
    slope: float
    stderr: float
    max_value: float
    reference: float


class FailureSummary(BaseModel):
    """Machine-readable CLI failure summary."""

    status: str = "fail"
    command: str
    failures: List[Dict[str, Any]]


TIMESERIES_COLUMNS = (
    "t",
    "l2_v",
    "l2_T",
    "l2_q",
    "v1_v",
    "v2_T",
    "v3_q",
    "dtU_l2",
    "budget_residual",
    "constraint_residual",
)


class TimeseriesRow(BaseModel):
    """One row of ``timeseries.csv``; field order is the column order."""

    t: float
    l2_v: float
    l2_T: float
    l2_q: float
    v1_v: float
    v2_T: float
    v3_q: float
    dtU_l2: float
    budget_residual: float
    constraint_residual: float
