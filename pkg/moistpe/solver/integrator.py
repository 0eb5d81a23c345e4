"""IMEX time stepping with surface-pressure projection.

Diffusion is implicit. Per horizontal degree it is a tridiagonal system in
xi, solved banded for every order and component at once. Advection, Coriolis,
buoyancy and forcing are explicit. After each step the vertically averaged
velocity potential is removed, which restores the barotropic constraint
exactly.
"""

from __future__ import annotations

import math
import time as wallclock
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np
import scipy.linalg

from moistpe.core.errors import (
    ImplicitSolveError,
    MoistPEError,
    NumericalBlowupError,
    PreconditionViolation,
)
from moistpe.core.observability import get_logger, get_tracer, solver_metrics
from moistpe.diagnostics import norms_energy
from moistpe.models.fields import Forcing, Grids, State
from moistpe.numerics import column_ops
from moistpe.schemas.config import ModelParams, StepperConfig
from moistpe.schemas.reports import BudgetRecord, TimeseriesRow
from moistpe.solver.dynamics import (
    Dynamics,
    SpectralFields,
    project_potential,
    tendency,
    to_spectral,
    to_state,
)

logger = get_logger("integrator")
tracer = get_tracer(__name__)

# barotropic residual allowed in a starting state, relative to max(1, |v|)
ADMISSIBLE_TOL = 1e-8


class Observer(Protocol):
    """Called with the step index and a state view; returns a record or None."""

    name: str
    cadence: int

    def __call__(self, step: int, state: State) -> Any: ...

    def flush(self) -> None: ...


class ImplicitOperator:
    """``(c I - dt L)`` per degree for one component, ``L = -nu l(l+1) + mu D2``."""

    def __init__(
        self, coefficient: float, dt: float, nu: float, mu: float, D2: np.ndarray, ell: np.ndarray
    ):
        K = D2.shape[0]
        self.matrices = []
        self.bands = []
        for e in ell:
            M = (coefficient + dt * nu * e) * np.eye(K) - dt * mu * D2
            ab = np.zeros((3, K))
            ab[0, 1:] = np.diag(M, 1)
            ab[1] = np.diag(M)
            ab[2, :-1] = np.diag(M, -1)
            self.matrices.append(M)
            self.bands.append(ab)

    def solve(self, rhs: np.ndarray, tol: float, max_iters: int, component: str) -> np.ndarray:
        out = np.empty_like(rhs)
        for l, (M, ab) in enumerate(zip(self.matrices, self.bands)):
            B = rhs[l].T
            scale = np.linalg.norm(B)
            if scale == 0.0:
                out[l] = 0.0
                continue
            X = scipy.linalg.solve_banded((1, 1), ab, B)
            residual = np.linalg.norm(B - M @ X) / scale
            sweeps = 1
            # iterative refinement on the same factorization
            while residual > tol and sweeps < max_iters:
                X = X + scipy.linalg.solve_banded((1, 1), ab, B - M @ X)
                residual = np.linalg.norm(B - M @ X) / scale
                sweeps += 1
            if residual > tol:
                raise ImplicitSolveError(
                    f"implicit solve for {component} at degree {l} stalled",
                    component=component,
                    degree=l,
                    residual=float(residual),
                    sweeps=sweeps,
                )
            out[l] = X.T
        return out


class IMEXStepper:
    """Owns the implicit operators and the multistep history of one trajectory."""

    def __init__(
        self,
        grids: Grids,
        params: ModelParams,
        forcing: Forcing | None,
        cfg: StepperConfig,
        dt: float | None = None,
    ):
        self.grids = grids
        self.params = params
        self.cfg = cfg
        self.dt = cfg.dt if dt is None else dt
        self.dynamics = Dynamics(grids, params, forcing)
        self._operators: dict[float, list[ImplicitOperator]] = {}
        self._previous: tuple[SpectralFields, SpectralFields] | None = None
        self.steps_taken = 0

    def _implicit(self, coefficient: float) -> list[ImplicitOperator]:
        if coefficient not in self._operators:
            p, dyn = self.params, self.dynamics
            scale = 1.0 if p.diffusion else 0.0
            ell = dyn.tr.ell

            def op(nu: float, mu: float, D2: np.ndarray) -> ImplicitOperator:
                return ImplicitOperator(coefficient, self.dt, scale * nu, scale * mu, D2, ell)

            self._operators[coefficient] = [
                op(p.nu1, p.mu1, dyn.D2_velocity),
                op(p.nu1, p.mu1, dyn.D2_velocity),
                op(p.nu2, p.mu2, dyn.D2_temperature),
                op(p.nu3, p.mu3, dyn.D2_moisture),
            ]
        return self._operators[coefficient]

    def _solve(self, coefficient: float, rhs: SpectralFields) -> SpectralFields:
        ops = self._implicit(coefficient)
        names = ("chi", "psi", "T", "q")
        solved = [
            op.solve(r, self.cfg.implicit_tol, self.cfg.max_implicit_iters, name)
            for op, r, name in zip(ops, rhs.arrays(), names)
        ]
        return SpectralFields(*solved)

    def advance(self, x: SpectralFields, t: float) -> SpectralFields:
        """One step from spectral fields at time ``t``."""
        started = wallclock.perf_counter()
        dt = self.dt
        try:
            N = self.dynamics.explicit(x)
        except NumericalBlowupError as e:
            raise NumericalBlowupError(e.term, step=self.steps_taken + 1, time=t) from e

        use_bdf2 = self.cfg.scheme == "imex-bdf2" and self._previous is not None
        if use_bdf2:
            x_prev, N_prev = self._previous
            rhs = x * 2.0 - x_prev * 0.5 + (N * 2.0 - N_prev) * dt
            X = self._solve(1.5, rhs)
        else:
            X = self._solve(1.0, x + N * dt)

        if not X.is_finite():
            solver_metrics.record_blowup("implicit")
            raise NumericalBlowupError("implicit", step=self.steps_taken + 1, time=t + dt)

        _, chi = project_potential(X.chi, self.grids)
        solver_metrics.record_projection()
        X = SpectralFields(chi, X.psi, X.T, X.q)

        if self.cfg.scheme == "imex-bdf2":
            self._previous = (x, N)
        self.steps_taken += 1
        scheme = "imex-bdf2" if use_bdf2 else "imex-euler"
        solver_metrics.record_step(scheme, wallclock.perf_counter() - started)
        return X

    def step(self, state: State) -> State:
        x = self.advance(to_spectral(state, self.grids), state.time)
        return to_state(x, self.grids, state.time + self.dt)


def check_admissible(state: State, grids: Grids, tol: float = ADMISSIBLE_TOL) -> None:
    """Reject a state whose vertically averaged velocity carries divergence."""
    residual = column_ops.barotropic_residual(state.v, grids.sphere, grids.vertical)
    limit = tol * max(1.0, norms_energy.l2_norm(state.v, grids))
    if residual > limit:
        raise PreconditionViolation(
            "starting velocity violates the barotropic constraint",
            residual=residual,
            limit=limit,
        )


def step(
    state: State, grids: Grids, params: ModelParams, forcing: Forcing | None, cfg: StepperConfig
) -> State:
    """Single step with a fresh stepper (the multistep scheme starts with its Euler bootstrap)."""
    return IMEXStepper(grids, params, forcing, cfg).step(state)


@dataclass
class RunResult:
    final: State
    n_steps: int
    dt: float
    stream: list[tuple[str, int, Any]] = field(default_factory=list)

    def records(self, name: str) -> list[Any]:
        return [r for n, _, r in self.stream if n == name]


def uniform_steps(t0: float, t_end: float, dt: float) -> tuple[int, float]:
    """``n = ceil((t_end - t0) / dt)`` steps of equal length covering the interval."""
    span = t_end - t0
    if span <= 0.0:
        return 0, dt
    n = max(1, math.ceil(span / dt - 1e-12))
    return n, span / n


def run(
    initial: State,
    grids: Grids,
    params: ModelParams,
    forcing: Forcing | None,
    cfg: StepperConfig,
    t_end: float,
    observers: Sequence[Observer] = (),
) -> RunResult:
    """Integrate to ``t_end`` and feed observers at their step cadence.

    Observers see the initial state and every state whose step index is a
    multiple of their cadence, plus the final state.
    """
    if t_end < initial.time:
        raise ValueError(f"t_end={t_end} precedes the initial time {initial.time}")
    check_admissible(initial, grids)
    n, dt = uniform_steps(initial.time, t_end, cfg.dt)
    result = RunResult(final=initial, n_steps=n, dt=dt)
    if n == 0:
        return result

    stepper = IMEXStepper(grids, params, forcing, cfg, dt=dt)
    x = to_spectral(initial, grids)
    t0 = initial.time

    def notify(k: int, state: State) -> None:
        for obs in observers:
            if k == 0 or k == n or k % obs.cadence == 0:
                record = obs(k, state)
                if record is not None:
                    result.stream.append((obs.name, k, record))

    with tracer.start_as_current_span("integrator.run") as span:
        span.set_attribute("steps", n)
        span.set_attribute("scheme", cfg.scheme)
        logger.info("Run started", steps=n, dt=dt, scheme=cfg.scheme, t0=t0, t_end=t_end)
        try:
            notify(0, initial)
            for k in range(1, n + 1):
                x = stepper.advance(x, t0 + (k - 1) * dt)
                t = t0 + k * dt
                if observers and any(k == n or k % o.cadence == 0 for o in observers):
                    notify(k, to_state(x, grids, t))
                if k % 100 == 0:
                    logger.step_event(k, t)
        except MoistPEError as e:
            logger.error("Run aborted; flushing observers", error=e.message, **e.detail)
            for obs in observers:
                obs.flush()
            raise
        for obs in observers:
            obs.flush()

    result.final = to_state(x, grids, t_end)
    logger.info("Run finished", steps=n, time=t_end)
    return result


def cfl_dt(state: State, grids: Grids, safety: float, dt_max: float = 0.05) -> float:
    """Advective step limit over all nodes, with w diagnosed from the velocity.

    Returns ``dt_max`` for a fluid at rest; otherwise the estimate is not capped.
    """
    sphere, vg = grids.sphere, grids.vertical
    d_theta = np.gradient(sphere.theta_nodes)[:, None, None]
    d_phi = 2.0 * np.pi / sphere.n_lon
    arc_phi = sphere.sin_theta[:, None, None] * d_phi
    w = column_ops.w_at_levels(column_ops.diagnose_w(state.v, sphere, vg))

    limits = []
    for spacing, speed in ((d_theta, state.v.theta), (arc_phi, state.v.phi), (vg.spacing, w)):
        speed = np.abs(speed)
        moving = speed > 0.0
        if np.any(moving):
            ratio = np.broadcast_to(spacing, speed.shape) / np.where(moving, speed, 1.0)
            limits.append(float(np.min(ratio[moving])))
    if not limits:
        return dt_max
    return safety * min(limits)


# -- built-in observers ---------------------------------------------------


class NormMonitor:
    """Time-series rows: L2 norms, H1-type norms, tendency norm and residuals."""

    name = "timeseries"

    def __init__(
        self, grids: Grids, params: ModelParams, forcing: Forcing | None, cadence: int = 1
    ):
        self.grids = grids
        self.params = params
        self.forcing = forcing
        self.cadence = cadence
        self.rows: list[TimeseriesRow] = []
        self.sink: Callable[[list[TimeseriesRow]], None] | None = None

    def __call__(self, step: int, state: State) -> TimeseriesRow:
        tend = tendency(state, self.grids, self.params, self.forcing)
        norms = norms_energy.v_norms(state, self.grids, self.params, tend)
        budget = norms_energy.energy_budget(state, self.grids, self.params, self.forcing, tend)
        row = TimeseriesRow(
            t=state.time,
            l2_v=norms.l2_v,
            l2_T=norms.l2_T,
            l2_q=norms.l2_q,
            v1_v=norms.v1_v,
            v2_T=norms.v2_T,
            v3_q=norms.v3_q,
            dtU_l2=norms.dtU_l2,
            budget_residual=budget.residual,
            constraint_residual=column_ops.barotropic_residual(
                state.v, self.grids.sphere, self.grids.vertical
            ),
        )
        self.rows.append(row)
        return row

    def flush(self) -> None:
        if self.sink is not None:
            self.sink(self.rows)


class EnergyBudgetObserver:
    name = "budget"

    def __init__(
        self, grids: Grids, params: ModelParams, forcing: Forcing | None, cadence: int = 1
    ):
        self.grids = grids
        self.params = params
        self.forcing = forcing
        self.cadence = cadence
        self.records: list[BudgetRecord] = []
        self.sink: Callable[[list[BudgetRecord]], None] | None = None

    def __call__(self, step: int, state: State) -> BudgetRecord:
        record = norms_energy.energy_budget(state, self.grids, self.params, self.forcing)
        self.records.append(record)
        return record

    def flush(self) -> None:
        if self.sink is not None:
            self.sink(self.records)


class SnapshotObserver:
    """Writes ``snap_<step>.snap`` files through ``writer`` every ``cadence`` steps."""

    name = "snapshot"

    def __init__(self, directory: Path, writer: Callable[[State, Path], None], cadence: int):
        self.directory = Path(directory)
        self.writer = writer
        self.cadence = cadence
        self.paths: list[Path] = []

    def __call__(self, step: int, state: State) -> None:
        if step == 0:
            return None
        path = self.directory / f"snap_{step:08d}.snap"
        self.writer(state, path)
        self.paths.append(path)
        return None

    def flush(self) -> None:
        logger.debug("Snapshots written", count=len(self.paths))


class H2Monitor:
    """Samples ``|U|_2^2`` for the accumulated-growth fit."""

    name = "h2"

    def __init__(self, grids: Grids, params: ModelParams, cadence: int = 1):
        self.grids = grids
        self.params = params
        self.cadence = cadence
        self.times: list[float] = []
        self.values: list[float] = []

    def __call__(self, step: int, state: State) -> tuple[float, float]:
        value = norms_energy.h2_norm_sq(state, self.grids, self.params)
        self.times.append(state.time)
        self.values.append(value)
        return state.time, value

    def flush(self) -> None:
        return None
