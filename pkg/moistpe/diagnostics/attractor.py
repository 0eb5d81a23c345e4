"""Eigenstructure of the dissipative operators and the squeezing diagnostics.

Each operator ``A_i`` is a tensor product of the horizontal Laplacian
(eigenvalue ``l(l+1)``) and the closed vertical second difference. Fields are
expanded in real modal amplitudes scaled so that ``<A_i x, x>`` equals
``sum lambda * amplitude^2``; the projectors ``P_n`` keep the ``n`` lowest
modes of each component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.special

from moistpe.core.errors import ModeRangeError
from moistpe.core.observability import (
    diagnostics_metrics,
    get_logger,
    get_tracer,
    performance_monitor,
)
from moistpe.diagnostics import norms_energy
from moistpe.models.fields import Forcing, Grids, State, random_state
from moistpe.numerics import column_ops, sphere_ops
from moistpe.schemas.config import ModelParams, StepperConfig
from moistpe.schemas.reports import GammaTable, IdentityResidual, PairRecord, SqueezeReport
from moistpe.solver.dynamics import SpectralFields, to_spectral
from moistpe.solver.integrator import IMEXStepper, check_admissible, uniform_steps

logger = get_logger("attractor")
tracer = get_tracer(__name__)

GAUSS_CONSTANT = 0.8346268
PSI_FLOOR = 1e-24
COMPONENTS = ("v", "T", "q")


@dataclass(frozen=True)
class ModeDescriptor:
    degree: int
    order: int
    part: str  # "re" or "im"
    vertical: int
    kind: str  # "poloidal", "toroidal" or "scalar"


@dataclass(frozen=True, eq=False)
class ComponentBasis:
    """Sorted eigenpairs of one operator and the layout of its modal amplitudes."""

    name: str
    eigenvalues: np.ndarray
    modes: list[ModeDescriptor] = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)  # flat amplitude index of each sorted mode

    @property
    def count(self) -> int:
        return int(self.eigenvalues.size)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    grids: Grids
    components: dict[str, ComponentBasis]

    @property
    def mode_count(self) -> int:
        return max(c.count for c in self.components.values())

    def threshold(self, n: int) -> float | None:
        """Smallest eigenvalue left in the range of ``Q_n`` over all components."""
        remaining = [c.eigenvalues[n] for c in self.components.values() if n < c.count]
        return float(min(remaining)) if remaining else None

    def check_range(self, n: int) -> None:
        if not 0 <= n <= self.mode_count:
            raise ModeRangeError(
                f"mode count {n} outside [0, {self.mode_count}]", n=n, mode_count=self.mode_count
            )


# -- modal amplitudes -------------------------------------------------------


def _layout(
    tr: sphere_ops.SphereTransform, K: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    l = np.arange(tr.L + 1)[:, None, None] * np.ones((1, tr.L + 1, K), dtype=int)
    m = np.arange(tr.L + 1)[None, :, None] * np.ones((tr.L + 1, 1, K), dtype=int)
    j = np.arange(K)[None, None, :] * np.ones((tr.L + 1, tr.L + 1, 1), dtype=int)
    order_weight = np.where(m == 0, 1.0, 2.0)
    return l, m, j, np.sqrt(order_weight)


def _scalar_amplitudes(
    c: np.ndarray, V: np.ndarray, w: np.ndarray, tr: sphere_ops.SphereTransform
) -> np.ndarray:
    a = np.einsum("lmk,k,kj->lmj", c, w, V)
    _, _, _, sw = _layout(tr, V.shape[1])
    return np.concatenate([(a.real * sw).ravel(), (a.imag * sw).ravel()])


def _scalar_field(amps: np.ndarray, V: np.ndarray, tr: sphere_ops.SphereTransform) -> np.ndarray:
    K = V.shape[1]
    _, _, _, sw = _layout(tr, K)
    half = amps.size // 2
    shape = (tr.L + 1, tr.L + 1, K)
    a = (amps[:half].reshape(shape) + 1j * amps[half:].reshape(shape)) / sw
    return np.einsum("lmj,kj->lmk", a, V)


def amplitudes(x: SpectralFields, basis: SpectralBasis) -> dict[str, np.ndarray]:
    """Flat real amplitude vectors per component (canonical, unsorted layout)."""
    tr = sphere_ops.get_transform(basis.grids.sphere)
    w = basis.grids.vertical.int_weights
    root_ell = np.sqrt(tr.ell)
    out = {}
    cv = basis.components["v"]
    out["v"] = np.concatenate(
        [
            _scalar_amplitudes(tr.per_degree(root_ell, x.chi), cv.V, w, tr),
            _scalar_amplitudes(tr.per_degree(root_ell, x.psi), cv.V, w, tr),
        ]
    )
    out["T"] = _scalar_amplitudes(x.T, basis.components["T"].V, w, tr)
    out["q"] = _scalar_amplitudes(x.q, basis.components["q"].V, w, tr)
    return out


def from_amplitudes(amps: dict[str, np.ndarray], basis: SpectralBasis) -> SpectralFields:
    tr = sphere_ops.get_transform(basis.grids.sphere)
    inv_root = np.zeros(tr.L + 1)
    inv_root[1:] = 1.0 / np.sqrt(tr.ell[1:])
    half = amps["v"].size // 2
    V1 = basis.components["v"].V
    return SpectralFields(
        chi=tr.per_degree(inv_root, _scalar_field(amps["v"][:half], V1, tr)),
        psi=tr.per_degree(inv_root, _scalar_field(amps["v"][half:], V1, tr)),
        T=_scalar_field(amps["T"], basis.components["T"].V, tr),
        q=_scalar_field(amps["q"], basis.components["q"].V, tr),
    )


# -- basis ----------------------------------------------------------------


def _component(
    name: str, tr: sphere_ops.SphereTransform, sigma: np.ndarray, V: np.ndarray, velocity: bool
) -> ComponentBasis:
    K = V.shape[1]
    l, m, j, _ = _layout(tr, K)
    lam = tr.ell[l] + sigma[j]
    valid_re = m <= l
    valid_im = (m >= 1) & (m <= l)
    entries: list[tuple[float, tuple, int, ModeDescriptor]] = []
    blocks = [("poloidal", 0), ("toroidal", 1)] if velocity else [("scalar", 0)]
    size = l.size
    for kind, block in blocks:
        base = block * 2 * size
        for part, valid, offset in (("re", valid_re, 0), ("im", valid_im, size)):
            mask = valid.copy()
            if velocity:
                mask &= l >= 1
                if kind == "poloidal":
                    # barotropic divergent modes violate the column constraint
                    mask &= j >= 1
            for flat in np.flatnonzero(mask.ravel()):
                ll, mm, jj = int(l.flat[flat]), int(m.flat[flat]), int(j.flat[flat])
                d = ModeDescriptor(ll, mm, part, jj, kind)
                key = (ll, mm, 0 if part == "re" else 1, jj, block)
                entries.append((float(lam.flat[flat]), key, base + offset + flat, d))
    entries.sort(key=lambda e: (e[0], e[1]))
    return ComponentBasis(
        name=name,
        eigenvalues=np.array([e[0] for e in entries]),
        modes=[e[3] for e in entries],
        sigma=sigma,
        V=V,
        order=np.array([e[2] for e in entries], dtype=int),
    )


def build_basis(grids: Grids, params: ModelParams) -> SpectralBasis:
    """Tensor-product eigenpairs of the three dissipative operators.

    ``A_1`` acts on the velocity, ``A_2`` and ``A_3`` on T and q with Robin
    coefficients alpha_s and beta_s.
    """
    tr = sphere_ops.get_transform(grids.sphere)
    vg = grids.vertical
    components = {
        "v": _component("v", tr, *column_ops.vertical_eigenpairs(vg, None), velocity=True),
        "T": _component(
            "T", tr, *column_ops.vertical_eigenpairs(vg, params.alpha_s), velocity=False
        ),
        "q": _component(
            "q", tr, *column_ops.vertical_eigenpairs(vg, params.beta_s), velocity=False
        ),
    }
    logger.debug("Spectral basis built", **{f"{k}_modes": c.count for k, c in components.items()})
    return SpectralBasis(grids=grids, components=components)


# -- projectors and functionals ---------------------------------------------------


def _capped(n: int, count: int) -> int:
    return min(n, count)


def project_high(x: SpectralFields, basis: SpectralBasis, n: int) -> SpectralFields:
    """``Q_n`` on each component: removes the ``n`` lowest modes (all of them if fewer)."""
    basis.check_range(n)
    amps = amplitudes(x, basis)
    for name, comp in basis.components.items():
        drop = comp.order[: _capped(n, comp.count)]
        amps[name] = amps[name].copy()
        amps[name][drop] = 0.0
    return from_amplitudes(amps, basis)


def project_low(x: SpectralFields, basis: SpectralBasis, n: int) -> SpectralFields:
    """``P_n = I - Q_n``."""
    return x - project_high(x, basis, n)


def tail_sums(x: SpectralFields, basis: SpectralBasis) -> np.ndarray:
    """``S[n] = |Q_n x|_1^2`` for every ``n = 0 .. mode_count``.

    Accumulated from the top mode down, so ``S`` is non-increasing bitwise.
    """
    amps = amplitudes(x, basis)
    total = np.zeros(basis.mode_count + 1)
    for name, comp in basis.components.items():
        contributions = comp.eigenvalues * amps[name][comp.order] ** 2
        tail = np.zeros(basis.mode_count + 1)
        tail[: comp.count] = np.cumsum(contributions[::-1])[::-1]
        total = total + tail
    return total


def high_norm_sq(x: SpectralFields, basis: SpectralBasis) -> float:
    """``|A x|^2`` from modal amplitudes, the integrand of the Lipschitz envelope."""
    amps = amplitudes(x, basis)
    total = 0.0
    for name, comp in basis.components.items():
        total += float(np.sum((comp.eigenvalues * amps[name][comp.order]) ** 2))
    return total


def phi_psi(diff: SpectralFields, basis: SpectralBasis, n: int) -> tuple[float, float]:
    """``(|Q_n diff|_1^2, |diff|_1^2)`` summed over the three components."""
    basis.check_range(n)
    tails = tail_sums(diff, basis)
    return float(tails[n]), float(tails[0])


# -- pair evolution ------------------------------------------------------------


@dataclass
class DiffTrajectory:
    """Sampled differences of two co-evolved solutions."""

    times: np.ndarray
    diffs: list[SpectralFields]
    psi: np.ndarray
    h2_integral: np.ndarray
    step_times: np.ndarray = field(repr=False)
    step_psi: np.ndarray = field(repr=False)

    @property
    def psi0(self) -> float:
        return float(self.psi[0])


def evolve_pair(
    U1_0: State,
    U2_0: State,
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None,
    cfg: StepperConfig,
    T_horizon: float,
    basis: SpectralBasis,
    n_samples: int = 20,
) -> DiffTrajectory:
    """Co-evolve two solutions with identical steppers and record their difference."""
    check_admissible(U1_0, grids)
    check_admissible(U2_0, grids)
    n, dt = uniform_steps(0.0, T_horizon, cfg.dt)
    first = IMEXStepper(grids, params, forcing, cfg, dt=dt)
    second = IMEXStepper(grids, params, forcing, cfg, dt=dt)
    x1 = to_spectral(U1_0, grids)
    x2 = to_spectral(U2_0, grids)
    sample_at = set(np.unique(np.round(np.linspace(0, n, n_samples + 1)).astype(int)).tolist())

    step_psi = np.zeros(n + 1)
    step_h2 = np.zeros(n + 1)
    diffs: list[SpectralFields] = []
    sampled: list[int] = []
    t0 = U1_0.time
    for k in range(n + 1):
        if k > 0:
            x1 = first.advance(x1, t0 + (k - 1) * dt)
            x2 = second.advance(x2, t0 + (k - 1) * dt)
        d = x1 - x2
        step_psi[k] = tail_sums(d, basis)[0]
        step_h2[k] = high_norm_sq(d, basis)
        if k in sample_at:
            diffs.append(d)
            sampled.append(k)

    step_times = np.arange(n + 1) * dt
    if n:
        integral = scipy.integrate.cumulative_trapezoid(step_h2, step_times, initial=0.0)
    else:
        integral = np.zeros(1)
    idx = np.array(sampled, dtype=int)
    return DiffTrajectory(
        times=step_times[idx],
        diffs=diffs,
        psi=step_psi[idx],
        h2_integral=integral[idx],
        step_times=step_times,
        step_psi=step_psi,
    )


def make_ensemble(
    base: State,
    size: int,
    scale: float,
    seed: int | np.random.SeedSequence,
    grids: Grids,
    degrees: int = 5,
) -> list[tuple[State, State]]:
    """Pairs ``(base, base + perturbation)`` with one RNG stream per member.

    Perturbations are admissible random fields on degrees ``<= degrees`` whose
    L2 norm is ``scale`` times that of ``base`` (absolute when ``base`` is zero).
    """
    reference = math.sqrt(2.0 * norms_energy.energy(base, grids))
    target = scale * (reference if reference > 0.0 else 1.0)
    pairs = []
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for child in root.spawn(size):
        rng = np.random.default_rng(child)
        pert = random_state(grids, rng, amplitude=1.0, max_degree=degrees)
        norm = math.sqrt(2.0 * norms_energy.energy(pert, grids))
        pert = pert.scaled(target / norm if norm > 0.0 else 0.0)
        pairs.append((base, base + pert))
    return pairs


@performance_monitor.time_function("evolve_ensemble")
def evolve_ensemble(
    pairs: Sequence[tuple[State, State]],
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None,
    cfg: StepperConfig,
    T_horizon: float,
    basis: SpectralBasis,
    n_samples: int = 20,
) -> list[DiffTrajectory]:
    with tracer.start_as_current_span("attractor.evolve_ensemble") as span:
        span.set_attribute("pairs", len(pairs))
        return [
            evolve_pair(a, b, grids, params, forcing, cfg, T_horizon, basis, n_samples)
            for a, b in pairs
        ]


# -- squeezing ------------------------------------------------------------------


def squeeze_envelope(lambda_n: float, T: float, gamma_T: float) -> float:
    """``exp(-lambda_n T) + gamma(T) / lambda_n``."""
    return math.exp(-lambda_n * T) + gamma_T / lambda_n


def squeeze_curve(
    trajectories: Sequence[DiffTrajectory],
    basis: SpectralBasis,
    modes: Iterable[int] | None = None,
    gamma: GammaTable | None = None,
) -> list[SqueezeReport]:
    """``delta(n) = max_pairs phi(T) / psi(0)`` for many ``n`` on one evolved ensemble."""
    modes = list(range(basis.mode_count + 1)) if not modes else sorted(set(modes))
    for n in modes:
        basis.check_range(n)
    T_horizon = float(trajectories[0].times[-1]) if trajectories else 0.0
    kept = []
    excluded = []
    for i, traj in enumerate(trajectories):
        if traj.psi0 < PSI_FLOOR:
            excluded.append(i)
            diagnostics_metrics.record_pair(True)
            logger.warning("Pair excluded below psi floor", pair=i, psi0=traj.psi0)
        else:
            kept.append((i, traj.psi0, tail_sums(traj.diffs[-1], basis)))
            diagnostics_metrics.record_pair(False)
    gamma_T = gamma.gamma_hat[-1] if gamma and gamma.gamma_hat else None
    meta = {"size": len(trajectories), "evolved": len(kept)}

    reports = []
    for n in modes:
        pairs = [
            PairRecord(index=i, psi0=float(trajectories[i].psi0), excluded=True)
            for i in excluded
        ]
        delta = None
        for i, psi0, tails in kept:
            ratio = tails[n] / psi0
            delta = ratio if delta is None else max(delta, ratio)
            pairs.append(PairRecord(index=i, psi0=psi0, phi_T=float(tails[n])))
        pairs.sort(key=lambda p: p.index)
        lam = basis.threshold(n)
        envelope = None
        if lam and gamma_T is not None:
            envelope = squeeze_envelope(lam, T_horizon, gamma_T)
        reports.append(
            SqueezeReport(
                n=n,
                T_horizon=T_horizon,
                lambda_n=lam,
                delta_hat=None if delta is None else float(delta),
                envelope=envelope,
                pairs=pairs,
                excluded=excluded,
                ensemble=meta,
            )
        )
    if not kept:
        logger.warning("Squeezing ensemble has no admissible pairs", excluded=len(excluded))
    return reports


def squeeze_experiment(
    pairs: Sequence[tuple[State, State]],
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None,
    cfg: StepperConfig,
    T_horizon: float,
    n: int,
    basis: SpectralBasis | None = None,
) -> SqueezeReport:
    """Evolve every pair to ``T_horizon`` and report the squeezing ratio for ``n`` modes."""
    basis = basis or build_basis(grids, params)
    basis.check_range(n)
    trajectories = evolve_ensemble(
        pairs, grids, params, forcing, cfg, T_horizon, basis, n_samples=1
    )
    return squeeze_curve(trajectories, basis, [n])[0]


# -- Lipschitz envelope -------------------------------------------------------------


def estimate_gamma(trajectories: Sequence[DiffTrajectory], scale: float) -> GammaTable:
    """Running max over pairs of ``[psi(t) + integral_0^t |A diff|^2] / psi(0)``.

    The table is made non-decreasing in time.
    """
    excluded = [i for i, t in enumerate(trajectories) if t.psi0 < PSI_FLOOR]
    kept = [t for i, t in enumerate(trajectories) if i not in excluded]
    if not kept:
        logger.warning("Lipschitz estimate has no admissible pairs", excluded=len(excluded))
        return GammaTable(scale=scale, times=[], gamma_hat=[], excluded=excluded)
    ratios = np.array([(t.psi + t.h2_integral) / t.psi0 for t in kept])
    gamma_hat = np.maximum.accumulate(ratios.max(axis=0))
    return GammaTable(
        scale=scale,
        times=kept[0].times.tolist(),
        gamma_hat=gamma_hat.tolist(),
        excluded=excluded,
    )


def gamma_experiment(
    pairs: Sequence[tuple[State, State]],
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None,
    cfg: StepperConfig,
    T_horizon: float,
    scale: float,
    n_samples: int = 20,
    basis: SpectralBasis | None = None,
) -> GammaTable:
    """Evolve every pair to ``T_horizon`` and tabulate gamma on ``n_samples + 1`` times."""
    basis = basis or build_basis(grids, params)
    trajectories = evolve_ensemble(
        pairs, grids, params, forcing, cfg, T_horizon, basis, n_samples=n_samples
    )
    return estimate_gamma(trajectories, scale)


def lipschitz_surrogate(table: GammaTable) -> float:
    """Empirical ``sqrt(gamma(T))``; a surrogate, not a proven Lipschitz constant."""
    return table.lipschitz_surrogate


# -- dimension bound -----------------------------------------------------------------


def gauss_constant() -> float:
    """``B(1/4, 1/2) / (2 pi)``, the reciprocal of the AGM of 1 and sqrt(2)."""
    return float(scipy.special.beta(0.25, 0.5) / (2.0 * math.pi))


def dimension_bound(N: int, c: float, delta: float) -> float:
    """``N ln(8 G^2 c^2 / (1 - delta^2)) / ln(2 / (1 + delta^2))``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    numerator = math.log(8.0 * GAUSS_CONSTANT**2 * c**2 / (1.0 - delta**2))
    return N * numerator / math.log(2.0 / (1.0 + delta**2))


# -- eigenrelations ------------------------------------------------------------------

HARMONIC_TOLERANCE = 1e-12
ROBIN_TOLERANCE = 1e-3
ROBIN_LEVELS = 64
MIN_ORDER = 1.9


def robin_root(alpha: float) -> float:
    """Smallest ``m >= 0`` with ``m tan m = alpha``; ``m^2`` is the lowest Robin eigenvalue."""
    if alpha < 0.0:
        raise ValueError(f"Robin coefficient must be non-negative, got {alpha}")
    if alpha == 0.0:
        return 0.0
    upper = 0.5 * math.pi - 1e-12
    return float(scipy.optimize.brentq(lambda m: m * math.tan(m) - alpha, 0.0, upper))


def _checked(name: str, absolute: float, relative: float, tolerance: float) -> IdentityResidual:
    passed = bool(relative <= tolerance)
    diagnostics_metrics.record_identity(name, passed)
    logger.check_event(name, relative, tolerance)
    return IdentityResidual(
        name=name, absolute=absolute, relative=relative, tolerance=tolerance, passed=passed
    )


def eigenrelation_checks(
    grids: Grids, params: ModelParams, levels: int = ROBIN_LEVELS
) -> list[IdentityResidual]:
    """Horizontal Laplacian on every harmonic, and the lowest Robin eigenvalue of ``A_2``.

    The Robin check compares ``levels`` and ``levels / 2`` against the root of
    ``m tan m = alpha_s`` and also reports the observed convergence order.
    """
    sphere = grids.sphere
    worst_abs = 0.0
    worst_rel = 0.0
    for l in range(sphere.truncation_L + 1):
        for m in range(l + 1):
            for part in ("cos", "sin") if m else ("cos",):
                Y = sphere_ops.spherical_harmonic(sphere, l, m, part)
                err = float(np.max(np.abs(sphere_ops.lap_scalar(sphere, Y) + l * (l + 1) * Y)))
                scale = max(1.0, l * (l + 1)) * float(np.max(np.abs(Y)))
                worst_abs = max(worst_abs, err)
                worst_rel = max(worst_rel, err / scale)
    results = [_checked("laplacian_eigen", worst_abs, worst_rel, HARMONIC_TOLERANCE)]

    exact = robin_root(params.alpha_s) ** 2
    errors = []
    for K in (levels // 2, levels):
        sigma, _ = column_ops.vertical_eigenpairs(column_ops.make_vertical_grid(K), params.alpha_s)
        errors.append(abs(float(sigma[0]) - exact))
    scale = max(exact, 1.0)
    results.append(_checked("robin_eigen", errors[-1], errors[-1] / scale, ROBIN_TOLERANCE))
    if params.alpha_s > 0.0 and errors[-1] > 0.0 and errors[0] > 0.0:
        order = math.log2(errors[0] / errors[-1])
    else:
        order = float("inf")
    # deficit below the target order, so that a pass means relative <= 0
    results.append(_checked("robin_order", order, max(0.0, MIN_ORDER - order), 0.0))
    return results
