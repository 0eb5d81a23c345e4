"""Right-hand sides of the moist primitive equations and the barotropic projection.

Prognostic fields live in spectral space per level: velocity potential and
streamfunction for ``v``, plain harmonic coefficients for ``T`` and ``q``.
Products are formed on the Gaussian grid and truncated back to degree L.

Sign conventions (time derivative on the left)::

    dv/dt = -nabla_v v - w d_xi v - (f/R0) v_perp - grad Phi_s
            - int_xi^1 grad[(bP/p)(1+aq)T] + nu1 Lap v + mu1 d_xi^2 v
    dT/dt = -nabla_v T - w d_xi T + (bP/p)(1+aq) w + nu2 Lap T + mu2 d_xi^2 T + Q1
    dq/dt = -nabla_v q - w d_xi q + nu3 Lap q + mu3 d_xi^2 q + Q2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moistpe.core.errors import NumericalBlowupError
from moistpe.core.observability import get_logger, solver_metrics
from moistpe.models.fields import Forcing, Grids, State, Tendency
from moistpe.numerics import column_ops, sphere_ops
from moistpe.numerics.sphere_ops import SphereTransform, VectorField
from moistpe.schemas.config import ModelParams

logger = get_logger("dynamics")

EXPLICIT_TERMS = ("advection", "coriolis", "buoyancy", "forcing")


@dataclass(frozen=True, eq=False)
class SpectralFields:
    """Per-level spectral coefficients ``[l, m, k]`` of (chi, psi, T, q)."""

    chi: np.ndarray
    psi: np.ndarray
    T: np.ndarray
    q: np.ndarray

    @classmethod
    def zeros_like(cls, other: "SpectralFields") -> "SpectralFields":
        z = np.zeros_like(other.T)
        return cls(z, z.copy(), z.copy(), z.copy())

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.chi, self.psi, self.T, self.q)

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for a in self.arrays())

    def __add__(self, other: "SpectralFields") -> "SpectralFields":
        return SpectralFields(*(a + b for a, b in zip(self.arrays(), other.arrays())))

    def __sub__(self, other: "SpectralFields") -> "SpectralFields":
        return SpectralFields(*(a - b for a, b in zip(self.arrays(), other.arrays())))

    def __mul__(self, factor: float) -> "SpectralFields":
        return SpectralFields(*(a * factor for a in self.arrays()))

    __rmul__ = __mul__


def to_spectral(state: State, grids: Grids) -> SpectralFields:
    tr = sphere_ops.get_transform(grids.sphere)
    chi, psi = tr.analyze_vector(state.v)
    return SpectralFields(chi, psi, tr.analyze(state.T), tr.analyze(state.q))


def to_state(fields: SpectralFields, grids: Grids, time: float) -> State:
    tr = sphere_ops.get_transform(grids.sphere)
    return State(
        v=tr.synthesize_vector(fields.chi, fields.psi),
        T=tr.synthesize(fields.T),
        q=tr.synthesize(fields.q),
        time=time,
    )


def _check(term: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            solver_metrics.record_blowup(term)
            raise NumericalBlowupError(term)


class Dynamics:
    """Tendency assembly for fixed grids, parameters and forcing.

    Holds the transform tables, the closed second-difference matrices and the
    spectral forcing so repeated evaluations only do the field work.
    """

    def __init__(self, grids: Grids, params: ModelParams, forcing: Forcing | None = None):
        self.grids = grids
        self.params = params
        self.tr: SphereTransform = sphere_ops.get_transform(grids.sphere)
        vg = grids.vertical
        self.D2_velocity = column_ops.second_difference_matrix(vg, None)
        self.D2_temperature = column_ops.second_difference_matrix(vg, params.alpha_s)
        self.D2_moisture = column_ops.second_difference_matrix(vg, params.beta_s)
        self.bw = column_ops.buoyancy_weight(vg, params)
        f = 2.0 * grids.sphere.cos_theta / params.R0
        self.coriolis_f = f[:, None, None]
        forcing = forcing or Forcing.zeros(grids)
        self.Q1 = self.tr.analyze(forcing.Q1)
        self.Q2 = self.tr.analyze(forcing.Q2)

    # -- individual terms ------------------------------------------------

    def advection(self, x: SpectralFields) -> SpectralFields:
        tr, vg = self.tr, self.grids.vertical
        d = tr.vector_partials(x.chi, x.psi)
        v = VectorField(d["ut"], d["up"])
        divergence = tr.synthesize(tr.per_degree(-tr.ell, x.chi))
        w = column_ops.interface_integral(divergence, vg)

        adv_v = sphere_ops.covariant_partials(self.grids.sphere, v, d)
        adv_v = adv_v + VectorField(
            column_ops.vertical_advection(w, v.theta, vg),
            column_ops.vertical_advection(w, v.phi, vg),
        )
        adv_T = v.dot(tr.gradient(x.T)) + column_ops.vertical_advection(w, tr.synthesize(x.T), vg)
        adv_q = v.dot(tr.gradient(x.q)) + column_ops.vertical_advection(w, tr.synthesize(x.q), vg)
        _check("advection", adv_v.theta, adv_v.phi, adv_T, adv_q)

        chi, psi = tr.analyze_vector(adv_v)
        return SpectralFields(-chi, -psi, -tr.analyze(adv_T), -tr.analyze(adv_q))

    def coriolis(self, x: SpectralFields) -> SpectralFields:
        v = self.tr.synthesize_vector(x.chi, x.psi)
        term = VectorField(-v.phi, v.theta) * self.coriolis_f
        chi, psi = self.tr.analyze_vector(term)
        zero = np.zeros_like(x.T)
        return SpectralFields(-chi, -psi, zero, zero.copy())

    def moist_geopotential(self, T_grid: np.ndarray, q_grid: np.ndarray) -> np.ndarray:
        """``(bP/p)(1 + a q) T`` on the grid."""
        return self.bw * (1.0 + self.params.a * q_grid) * T_grid

    def buoyancy(self, x: SpectralFields) -> SpectralFields:
        tr, vg = self.tr, self.grids.vertical
        T = tr.synthesize(x.T)
        q = tr.synthesize(x.q)
        g = self.moist_geopotential(T, q)
        divergence = tr.synthesize(tr.per_degree(-tr.ell, x.chi))
        w = column_ops.partial_vertical_integral(divergence, vg)
        heating = self.bw * (1.0 + self.params.a * q) * w
        _check("buoyancy", g, heating)
        # -int grad g is the gradient of -int g, i.e. a pure velocity-potential tendency
        B = column_ops.partial_vertical_integral(tr.analyze(g), vg)
        zero = np.zeros_like(x.T)
        return SpectralFields(-B, zero, tr.analyze(heating), zero.copy())

    def forcing(self, x: SpectralFields) -> SpectralFields:
        zero = np.zeros_like(x.T)
        return SpectralFields(zero, zero.copy(), self.Q1.copy(), self.Q2.copy())

    def diffusion(self, x: SpectralFields) -> SpectralFields:
        p, tr = self.params, self.tr
        lap = -tr.ell

        def diffuse(c: np.ndarray, nu: float, mu: float, D2: np.ndarray) -> np.ndarray:
            return nu * tr.per_degree(lap, c) + mu * (c @ D2.T)

        return SpectralFields(
            diffuse(x.chi, p.nu1, p.mu1, self.D2_velocity),
            diffuse(x.psi, p.nu1, p.mu1, self.D2_velocity),
            diffuse(x.T, p.nu2, p.mu2, self.D2_temperature),
            diffuse(x.q, p.nu3, p.mu3, self.D2_moisture),
        )

    # -- assembly ----------------------------------------------------------

    def terms(self, x: SpectralFields, include_diffusion: bool = True) -> dict[str, SpectralFields]:
        """Contribution of every enabled term."""
        names = EXPLICIT_TERMS + (("diffusion",) if include_diffusion else ())
        out = {}
        for name in names:
            if getattr(self.params, name):
                contribution = getattr(self, name)(x)
                if not contribution.is_finite():
                    solver_metrics.record_blowup(name)
                    raise NumericalBlowupError(name)
                out[name] = contribution
        return out

    def explicit(self, x: SpectralFields) -> SpectralFields:
        total = SpectralFields.zeros_like(x)
        for contribution in self.terms(x, include_diffusion=False).values():
            total = total + contribution
        return total

    def implicit(self, x: SpectralFields) -> SpectralFields:
        if not self.params.diffusion:
            return SpectralFields.zeros_like(x)
        return self.diffusion(x)

    def project(self, raw: SpectralFields) -> tuple[np.ndarray, SpectralFields]:
        """Remove the vertically averaged potential part; returns ``(Phi_s coeffs, corrected)``."""
        phi_s, chi = project_potential(raw.chi, self.grids)
        return phi_s, SpectralFields(chi, raw.psi, raw.T, raw.q)

    def rhs(self, x: SpectralFields) -> tuple[SpectralFields, np.ndarray]:
        raw = self.explicit(x) + self.implicit(x)
        phi_s, corrected = self.project(raw)
        return corrected, phi_s


def project_potential(chi: np.ndarray, grids: Grids) -> tuple[np.ndarray, np.ndarray]:
    """Split off the vertical mean of a velocity-potential field.

    Returns ``(mean, chi - mean)``; the mean is the surface geopotential whose
    gradient carries the barotropic divergence.
    """
    mean = column_ops.vertical_mean(chi, grids.vertical)
    return mean, chi - mean[..., None]


# -- grid-level operations ------------------------------------------------


def coriolis(v: VectorField, grids: Grids, params: ModelParams) -> VectorField:
    """``(f/R0) v_perp`` with ``f = 2 cos theta`` and ``v_perp = (-v_phi, v_theta)``."""
    f = 2.0 * grids.sphere.column(grids.sphere.cos_theta, v.theta.ndim) / params.R0
    return VectorField(-v.phi, v.theta) * f


def buoyancy_grad(T: np.ndarray, q: np.ndarray, grids: Grids, params: ModelParams) -> VectorField:
    """``int_xi^1 (bP/p) grad[(1 + a q) T] dxi'`` at every level."""
    tr = sphere_ops.get_transform(grids.sphere)
    g = column_ops.buoyancy_weight(grids.vertical, params) * (1.0 + params.a * q) * T
    B = column_ops.partial_vertical_integral(tr.analyze(g), grids.vertical)
    return tr.gradient(B)


def tendency(
    state: State, grids: Grids, params: ModelParams, forcing: Forcing | None = None
) -> Tendency:
    """Full projected tendency of the state, with the diagnosed surface geopotential."""
    dyn = Dynamics(grids, params, forcing)
    x = to_spectral(state, grids)
    rhs, phi_s = dyn.rhs(x)
    out = to_state(rhs, grids, state.time)
    return Tendency(dv=out.v, dT=out.T, dq=out.q, phi_s=dyn.tr.synthesize(phi_s))


def project_surface_pressure(raw_dv: VectorField, grids: Grids) -> tuple[np.ndarray, VectorField]:
    """Solve ``lap Phi_s = div(mean raw_dv)`` and return ``(Phi_s, raw_dv - grad Phi_s)``."""
    sphere, vg = grids.sphere, grids.vertical
    mean, _ = column_ops.vertical_mean_and_fluct(raw_dv, vg)
    phi_s = sphere_ops.poisson_solve(sphere, sphere_ops.div(sphere, mean))
    correction = sphere_ops.grad(sphere, phi_s)
    corrected = VectorField(
        raw_dv.theta - correction.theta[..., None],
        raw_dv.phi - correction.phi[..., None],
    )
    solver_metrics.record_projection()
    return phi_s, corrected


def barotropic_tendency(tend: Tendency, grids: Grids) -> VectorField:
    """Vertical mean of ``dv``; divergence-free after projection."""
    mean, _ = column_ops.vertical_mean_and_fluct(tend.dv, grids.vertical)
    return mean
