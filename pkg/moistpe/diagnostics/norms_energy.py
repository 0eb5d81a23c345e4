"""Norms, energy budget, discrete identity checks and long-run monitors.

Volume integrals over S^2 x (0, 1) combine Gaussian quadrature with the
vertical level weights. Spectral evaluations use Parseval's relation for the
orthonormal harmonics: order ``m > 0`` coefficients count twice.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.stats

from moistpe.core.observability import diagnostics_metrics, get_logger, performance_monitor
from moistpe.models.fields import Forcing, Grids, State, Tendency, random_state
from moistpe.numerics import column_ops, sphere_ops
from moistpe.numerics.sphere_ops import VectorField
from moistpe.schemas.config import ModelParams
from moistpe.schemas.reports import (
    BudgetRecord,
    GrowthFit,
    IdentityReport,
    IdentityResidual,
    NormReport,
    TrendFit,
)
from moistpe.solver.dynamics import SpectralFields, tendency, to_spectral

logger = get_logger("norms_energy")

HORIZONTAL_TOLERANCE = 1e-10
# frozen constant C of the C h^2 tolerance for identities with vertical differences
VERTICAL_CONSTANT = 1.0
CONSTRAINT_TOLERANCE = 1e-10


# -- integrals --------------------------------------------------------------


def volume_integral(grids: Grids, f: np.ndarray) -> float:
    per_level = sphere_ops.sphere_integral(grids.sphere, f)
    if np.ndim(per_level) == 0:
        return float(per_level)
    return float(np.dot(per_level, grids.vertical.int_weights))


def volume_inner(grids: Grids, a: np.ndarray | VectorField, b: np.ndarray | VectorField) -> float:
    if isinstance(a, VectorField):
        return volume_integral(grids, a.dot(b))
    return volume_integral(grids, a * b)


def l2_norm(field: np.ndarray | VectorField, grids: Grids) -> float:
    """``sqrt(integral |f|^2)`` over the column domain (or over S^2 for 2-D fields)."""
    return float(np.sqrt(max(volume_inner(grids, field, field), 0.0)))


def _order_weights(tr: sphere_ops.SphereTransform, ndim: int) -> np.ndarray:
    w = np.where(tr.m == 0, 1.0, 2.0)
    return w.reshape((1, -1) + (1,) * (ndim - 2))


def spectral_norm_sq(c: np.ndarray, grids: Grids, velocity: bool = False) -> float:
    """Parseval evaluation of ``integral |f|^2`` from coefficients ``[l, m, k]``."""
    tr = sphere_ops.get_transform(grids.sphere)
    weights = _order_weights(tr, c.ndim)
    sq = np.abs(c) ** 2 * weights
    if velocity:
        sq = tr.per_degree(tr.ell, sq)
    per_level = sq.sum(axis=(0, 1))
    if c.ndim == 2:
        return float(per_level)
    return float(np.dot(per_level, grids.vertical.int_weights))


def _dirichlet_sq(c: np.ndarray, grids: Grids, alpha: float | None, velocity: bool) -> float:
    """``-<D2 c, c>`` with the level weights, summed over coefficients."""
    tr = sphere_ops.get_transform(grids.sphere)
    vg = grids.vertical
    h = vg.spacing
    per = np.sum(np.abs(np.diff(c, axis=-1)) ** 2, axis=-1) / h
    if alpha is not None:
        per = per + (1.0 - column_ops.robin_ratio(alpha, h)) / h * np.abs(c[..., -1]) ** 2
    per = per * _order_weights(tr, 2)
    if velocity:
        per = tr.per_degree(tr.ell, per)
    return float(per.sum())


def operator_parts(
    x: SpectralFields, grids: Grids, params: ModelParams
) -> dict[str, tuple[float, float]]:
    """Horizontal and vertical parts of ``<A_i x, x>`` per component.

    For the velocity the horizontal part is the Hodge pairing ``l(l+1)``,
    which already contains the ``|u|^2`` term of the first-order form.
    """
    tr = sphere_ops.get_transform(grids.sphere)

    def horizontal(c: np.ndarray, velocity: bool) -> float:
        return spectral_norm_sq(tr.per_degree(np.sqrt(tr.ell), c), grids, velocity)

    return {
        "v": (
            horizontal(x.chi, True) + horizontal(x.psi, True),
            _dirichlet_sq(x.chi, grids, None, True) + _dirichlet_sq(x.psi, grids, None, True),
        ),
        "T": (horizontal(x.T, False), _dirichlet_sq(x.T, grids, params.alpha_s, False)),
        "q": (horizontal(x.q, False), _dirichlet_sq(x.q, grids, params.beta_s, False)),
    }


def operator_norms_sq(
    state: State, grids: Grids, params: ModelParams
) -> tuple[float, float, float]:
    """Exact discrete ``<A_1 v, v>, <A_2 T, T>, <A_3 q, q>``."""
    parts = operator_parts(to_spectral(state, grids), grids, params)
    return tuple(sum(parts[k]) for k in ("v", "T", "q"))  # type: ignore[return-value]


# -- norms ----------------------------------------------------------------


def energy(state: State, grids: Grids) -> float:
    """``1/2 (|v|^2 + |T|^2 + |q|^2)``."""
    return 0.5 * (
        volume_inner(grids, state.v, state.v)
        + volume_inner(grids, state.T, state.T)
        + volume_inner(grids, state.q, state.q)
    )


def kinetic_energy_split(v: VectorField, grids: Grids) -> tuple[float, float]:
    """Barotropic ``1/2 |mean v|^2`` and baroclinic ``1/2 |v - mean v|^2``."""
    mean, fluct = column_ops.vertical_mean_and_fluct(v, grids.vertical)
    barotropic = 0.5 * sphere_ops.inner_vector(grids.sphere, mean, mean)
    baroclinic = 0.5 * volume_inner(grids, fluct, fluct)
    return barotropic, baroclinic


def _first_order_sq(state: State, grids: Grids, params: ModelParams) -> tuple[float, float, float]:
    sphere, vg = grids.sphere, grids.vertical
    along_theta, along_phi = sphere_ops.covariant_gradient(sphere, state.v)

    def vertical_sq(f: np.ndarray) -> float:
        integrand = column_ops.vertical_gradient_sq(f, vg)
        return float(np.sum(sphere_ops.sphere_integral(sphere, integrand)))

    v_sq = (
        volume_inner(grids, along_theta, along_theta)
        + volume_inner(grids, along_phi, along_phi)
        + vertical_sq(state.v.theta)
        + vertical_sq(state.v.phi)
        + volume_inner(grids, state.v, state.v)
    )

    def scalar_sq(f: np.ndarray, coefficient: float) -> float:
        g = sphere_ops.grad(sphere, f)
        trace = column_ops.surface_trace(f)
        return (
            volume_inner(grids, g, g)
            + float(sphere_ops.sphere_integral(sphere, column_ops.vertical_gradient_sq(f, vg)))
            + coefficient * float(sphere_ops.sphere_integral(sphere, trace**2))
        )

    return v_sq, scalar_sq(state.T, params.alpha_s), scalar_sq(state.q, params.beta_s)


def v_norms(
    state: State, grids: Grids, params: ModelParams, tend: Tendency | None = None
) -> NormReport:
    """L2 norms, first-order norms with boundary terms, and the tendency norm."""
    v_sq, T_sq, q_sq = _first_order_sq(state, grids, params)
    barotropic, baroclinic = kinetic_energy_split(state.v, grids)
    return NormReport(
        time=state.time,
        l2_v=l2_norm(state.v, grids),
        l2_T=l2_norm(state.T, grids),
        l2_q=l2_norm(state.q, grids),
        v1_v=float(np.sqrt(max(v_sq, 0.0))),
        v2_T=float(np.sqrt(max(T_sq, 0.0))),
        v3_q=float(np.sqrt(max(q_sq, 0.0))),
        dtU_l2=tendency_norm(tend, grids) if tend is not None else 0.0,
        barotropic_ke=barotropic,
        baroclinic_ke=baroclinic,
    )


def tendency_norm(tend: Tendency, grids: Grids) -> float:
    total = volume_inner(grids, tend.dv, tend.dv) + volume_inner(grids, tend.dT, tend.dT)
    total += volume_inner(grids, tend.dq, tend.dq)
    return float(np.sqrt(max(total, 0.0)))


def dt_monitor(
    state: State, grids: Grids, params: ModelParams, forcing: Forcing | None = None
) -> float:
    """``|d_t U|_2`` from the assembled tendency."""
    return tendency_norm(tendency(state, grids, params, forcing), grids)


def h2_norm_sq(state: State, grids: Grids, params: ModelParams) -> float:
    """``|A_1 v|^2 + |A_2 T|^2 + |A_3 q|^2`` evaluated on coefficients."""
    tr = sphere_ops.get_transform(grids.sphere)
    vg = grids.vertical
    x = to_spectral(state, grids)

    def apply(c: np.ndarray, alpha: float | None) -> np.ndarray:
        D2 = column_ops.second_difference_matrix(vg, alpha)
        return tr.per_degree(tr.ell, c) - c @ D2.T

    return (
        spectral_norm_sq(apply(x.chi, None), grids, True)
        + spectral_norm_sq(apply(x.psi, None), grids, True)
        + spectral_norm_sq(apply(x.T, params.alpha_s), grids)
        + spectral_norm_sq(apply(x.q, params.beta_s), grids)
    )


# -- energy budget ----------------------------------------------------------


def energy_budget(
    state: State,
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None = None,
    tend: Tendency | None = None,
) -> BudgetRecord:
    """``dE/dt + dissipation - work`` with each piece evaluated separately.

    Dissipation is the exact discrete pairing of the diffusion operator,
    boundary terms included; work is ``<Q1, T> + <Q2, q>``.
    """
    if tend is None:
        tend = tendency(state, grids, params, forcing)
    dEdt = (
        volume_inner(grids, state.v, tend.dv)
        + volume_inner(grids, state.T, tend.dT)
        + volume_inner(grids, state.q, tend.dq)
    )
    dissipation = 0.0
    if params.diffusion:
        parts = operator_parts(to_spectral(state, grids), grids, params)
        for name, nu, mu in (
            ("v", params.nu1, params.mu1),
            ("T", params.nu2, params.mu2),
            ("q", params.nu3, params.mu3),
        ):
            horizontal, vertical = parts[name]
            dissipation += nu * horizontal + mu * vertical
    work = 0.0
    if params.forcing and forcing is not None:
        work = volume_inner(grids, forcing.Q1, state.T) + volume_inner(grids, forcing.Q2, state.q)
    return BudgetRecord(
        time=state.time,
        energy=energy(state, grids),
        dEdt=dEdt,
        dissipation=dissipation,
        work=work,
        residual=dEdt + dissipation - work,
    )


# -- identities --------------------------------------------------------------


def _residual(
    name: str, lhs: float, scale: float, tolerance: float, precondition_ok: bool = True
) -> IdentityResidual:
    relative = abs(lhs) / scale if scale > 0.0 else 0.0
    passed = precondition_ok and relative <= tolerance
    diagnostics_metrics.record_identity(name, passed)
    logger.check_event(name, relative, tolerance, precondition_ok=precondition_ok)
    return IdentityResidual(
        name=name,
        absolute=abs(lhs),
        relative=relative,
        tolerance=tolerance,
        precondition_ok=precondition_ok,
        passed=passed,
    )


def vertical_tolerance(grids: Grids) -> float:
    return VERTICAL_CONSTANT * grids.vertical.spacing**2


def check_identities(
    v: VectorField,
    u: VectorField,
    T: np.ndarray,
    q: np.ndarray,
    h: np.ndarray,
    grids: Grids,
    params: ModelParams,
) -> IdentityReport:
    """Residuals of the integration-by-parts identities, evaluated discretely.

    ``u`` and ``v`` are level velocities, ``T``, ``q`` level scalars and ``h``
    a surface field. Identities that need the barotropic constraint flag a
    violating input instead of reporting its large residual as a failure of
    the discretization.
    """
    sphere, vg = grids.sphere, grids.vertical
    tr = sphere_ops.get_transform(sphere)
    h_tol = HORIZONTAL_TOLERANCE
    v_tol = vertical_tolerance(grids)

    def scale_of(*terms: float) -> float:
        return sum(abs(t) for t in terms)

    def satisfies_constraint(w: VectorField) -> bool:
        magnitude = max(1.0, l2_norm(w, grids))
        return column_ops.barotropic_residual(w, sphere, vg) <= CONSTRAINT_TOLERANCE * magnitude

    u_ok = satisfies_constraint(u)
    v_ok = satisfies_constraint(v)
    h3 = np.repeat(h[..., None], vg.n_levels, axis=-1)
    residuals = []

    # surface divergence theorem against a scalar
    a = volume_inner(grids, h3, sphere_ops.div(sphere, u))
    b = volume_inner(grids, sphere_ops.grad(sphere, h3), u)
    residuals.append(_residual("divergence_by_parts", a + b, scale_of(a, b), h_tol))

    # gradients are orthogonal to constrained velocities
    g = volume_inner(grids, sphere_ops.grad(sphere, h3), v)
    g_scale = l2_norm(sphere_ops.grad(sphere, h3), grids) * l2_norm(v, grids)
    residuals.append(_residual("gradient_orthogonality", g, g_scale, h_tol, v_ok))

    # vector Laplacian against the covariant gradient pairing
    lap = volume_inner(grids, sphere_ops.lap_vector(sphere, u), v)
    ut, up = sphere_ops.covariant_gradient(sphere, u)
    vt, vp = sphere_ops.covariant_gradient(sphere, v)
    pairing = volume_inner(grids, ut, vt) + volume_inner(grids, up, vp) + volume_inner(grids, u, v)
    residuals.append(_residual("laplacian_pairing", -lap - pairing, scale_of(lap, pairing), h_tol))

    # transport of a level-dependent scalar integrates to zero on every level
    transport = volume_inner(grids, u.dot(sphere_ops.grad(sphere, T)), np.ones_like(T))
    source = volume_inner(grids, T, sphere_ops.div(sphere, u))
    residuals.append(
        _residual("transport_divergence", transport + source, scale_of(transport, source), h_tol)
    )

    # skew-symmetry of full 3-D advection by a constrained velocity
    w = column_ops.interface_integral(sphere_ops.div(sphere, u), vg)
    d = tr.vector_partials(*tr.analyze_vector(v))
    horizontal = volume_inner(grids, sphere_ops.covariant_partials(sphere, u, d), v)
    vertical = volume_inner(
        grids,
        VectorField(
            column_ops.vertical_advection(w, v.theta, vg),
            column_ops.vertical_advection(w, v.phi, vg),
        ),
        v,
    )
    residuals.append(
        _residual(
            "vector_advection", horizontal + vertical, scale_of(horizontal, vertical), v_tol, u_ok
        )
    )
    for name, f in (("scalar_advection_T", T), ("scalar_advection_q", q)):
        horizontal = volume_inner(grids, u.dot(sphere_ops.grad(sphere, f)), f)
        vertical = volume_inner(grids, column_ops.vertical_advection(w, f, vg), f)
        residuals.append(
            _residual(name, horizontal + vertical, scale_of(horizontal, vertical), v_tol, u_ok)
        )

    # buoyancy work against heating by the diagnosed vertical velocity
    bw = column_ops.buoyancy_weight(vg, params)
    geo = bw * (1.0 + params.a * q) * T
    B = tr.gradient(column_ops.partial_vertical_integral(tr.analyze(geo), vg))
    work = volume_inner(grids, B, u)
    lifted = column_ops.partial_vertical_integral(sphere_ops.div(sphere, u), vg)
    heating = volume_inner(grids, geo, lifted)
    residuals.append(
        _residual("buoyancy_heating", work - heating, scale_of(work, heating), v_tol, u_ok)
    )

    return IdentityReport(residuals=residuals, horizontal_tolerance=h_tol, vertical_tolerance=v_tol)


@performance_monitor.time_function("identity_suite")
def identity_suite(
    grids: Grids, params: ModelParams, rng: np.random.Generator, n_sets: int = 20
) -> IdentityReport:
    """Worst residual per identity over ``n_sets`` random admissible input sets."""
    worst: dict[str, IdentityResidual] = {}
    report = None
    for _ in range(n_sets):
        a = random_state(grids, rng)
        b = random_state(grids, rng)
        h = b.T[..., 0]
        report = check_identities(a.v, b.v, a.T, a.q, h, grids, params)
        for r in report.residuals:
            kept = worst.get(r.name)
            if kept is None or (r.relative, not r.passed) > (kept.relative, not kept.passed):
                worst[r.name] = r
    if report is None:
        return IdentityReport(
            residuals=[],
            horizontal_tolerance=HORIZONTAL_TOLERANCE,
            vertical_tolerance=vertical_tolerance(grids),
        )
    summary = IdentityReport(
        residuals=list(worst.values()),
        horizontal_tolerance=report.horizontal_tolerance,
        vertical_tolerance=report.vertical_tolerance,
    )
    logger.info("Identity suite finished", sets=n_sets, passed=summary.passed)
    return summary


# -- long-run monitors ----------------------------------------------------------


def h2_integral_monitor(
    times: Sequence[float], values: Sequence[float], taus: Sequence[float] = (1.0, 2.0, 4.0, 8.0)
) -> GrowthFit:
    """Accumulate ``integral_0^tau |U|_2^2`` and fit ``c (sqrt(tau) + tau)``.

    Times are taken relative to the first sample. ``c_by_tau`` holds the
    smallest ``c`` for which the bound holds at every sample up to each
    ``tau``; ``c_min`` is the same over the whole record.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size == 0:
        return GrowthFit(
            times=[], integral=[], c_min=0.0, taus=list(taus), c_by_tau=[0.0] * len(taus)
        )
    tau = t - t[0]
    if t.size > 1:
        integral = scipy.integrate.cumulative_trapezoid(y, tau, initial=0.0)
    else:
        integral = np.zeros(1)
    shape = np.sqrt(tau) + tau
    ratio = np.divide(integral, shape, out=np.zeros_like(integral), where=shape > 0.0)
    c_by_tau = [float(np.max(ratio[tau <= s + 1e-12], initial=0.0)) for s in taus]
    return GrowthFit(
        times=tau.tolist(),
        integral=integral.tolist(),
        c_min=float(np.max(ratio, initial=0.0)),
        taus=list(taus),
        c_by_tau=c_by_tau,
    )


def growth_trend(times: Sequence[float], values: Sequence[float]) -> TrendFit:
    """Least-squares slope of a monitored quantity, with the first value as reference."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 3:
        return TrendFit(
            slope=0.0,
            stderr=float("inf"),
            max_value=float(np.max(y, initial=0.0)),
            reference=float(y[0]) if y.size else 0.0,
        )
    fit = scipy.stats.linregress(t, y)
    return TrendFit(
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        max_value=float(y.max()),
        reference=float(y[0]),
    )
