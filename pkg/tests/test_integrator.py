"""IMEX stepping, run orchestration and observers."""

import numpy as np
import pytest

from moistpe.core.errors import ImplicitSolveError, NumericalBlowupError, PreconditionViolation
from moistpe.diagnostics import norms_energy
from moistpe.models.fields import Forcing, State
from moistpe.numerics import column_ops, sphere_ops
from moistpe.numerics.sphere_ops import VectorField
from moistpe.schemas.config import StepperConfig
from moistpe.schemas.reports import TIMESERIES_COLUMNS, TimeseriesRow
from moistpe.solver import dynamics, integrator
from moistpe.solver.dynamics import Dynamics, to_spectral
from moistpe.solver.integrator import (
    EnergyBudgetObserver,
    H2Monitor,
    ImplicitOperator,
    IMEXStepper,
    NormMonitor,
    SnapshotObserver,
)


class RecordingObserver:
    name = "recorder"

    def __init__(self, cadence):
        self.cadence = cadence
        self.steps = []
        self.flushed = False

    def __call__(self, step, state):
        self.steps.append(step)
        return step

    def flush(self):
        self.flushed = True


@pytest.mark.unit
class TestImplicitOperator:
    """Per-degree banded solves."""

    def test_solution_satisfies_system(self, grids, params, rng):
        """Each degree block solves (I - dt L) X = B to the requested residual."""
        dyn = Dynamics(grids, params)
        op = ImplicitOperator(1.0, 0.05, 1.0, 1.0, dyn.D2_temperature, dyn.tr.ell)
        n, K = dyn.tr.L + 1, grids.vertical.n_levels
        rhs = rng.standard_normal((n, n, K)) + 1j * rng.standard_normal((n, n, K))
        X = op.solve(rhs, 1e-12, 3, "T")
        for l in range(n):
            np.testing.assert_allclose(X[l] @ op.matrices[l].T, rhs[l], atol=1e-11)

    def test_stalled_solve_raises(self, grids, params, rng):
        """An unreachable residual target raises with the component and degree."""
        dyn = Dynamics(grids, params)
        op = ImplicitOperator(1.0, 0.05, 1.0, 1.0, dyn.D2_velocity, dyn.tr.ell)
        n, K = dyn.tr.L + 1, grids.vertical.n_levels
        rhs = rng.standard_normal((n, n, K))
        with pytest.raises(ImplicitSolveError) as info:
            op.solve(rhs, 1e-300, 1, "chi")
        assert info.value.detail["component"] == "chi"


@pytest.mark.unit
class TestStepping:
    """Single steps and schemes."""

    def test_bdf2_bootstraps_with_euler(self, grids, params, state, forcing):
        """A fresh multistep stepper takes an Euler step first."""
        euler_cfg = StepperConfig(dt=0.02, scheme="imex-euler")
        bdf2_cfg = StepperConfig(dt=0.02, scheme="imex-bdf2")
        euler = integrator.step(state, grids, params, forcing, euler_cfg)
        bdf2 = integrator.step(state, grids, params, forcing, bdf2_cfg)
        np.testing.assert_array_equal(euler.T, bdf2.T)
        np.testing.assert_array_equal(euler.v.theta, bdf2.v.theta)
        assert euler.time == pytest.approx(0.02)

    def test_step_keeps_constraint(self, grids, params, state, forcing, stepper_cfg):
        """The projection after each step restores the barotropic constraint."""
        stepper = IMEXStepper(grids, params, forcing, stepper_cfg)
        current = state
        for _ in range(5):
            current = stepper.step(current)
            residual = column_ops.barotropic_residual(current.v, grids.sphere, grids.vertical)
            assert residual <= 1e-10
        assert stepper.steps_taken == 5

    def test_diffusion_alone_decays_energy(self, grids, params, state, stepper_cfg):
        """Implicit diffusion strictly lowers the energy each step."""
        stepper = IMEXStepper(grids, params.only("diffusion"), None, stepper_cfg)
        current = state
        energies = [norms_energy.energy(current, grids)]
        for _ in range(4):
            current = stepper.step(current)
            energies.append(norms_energy.energy(current, grids))
        assert all(b < a for a, b in zip(energies, energies[1:]))

    def test_blowup_carries_step(self, grids, params, state, stepper_cfg):
        """Non-finite input aborts with the step index and time."""
        T = state.T.copy()
        T[..., 0] = np.inf
        stepper = IMEXStepper(grids, params, None, stepper_cfg)
        with pytest.raises(NumericalBlowupError) as info:
            stepper.advance(to_spectral(State(state.v, T, state.q, 0.0), grids), 0.0)
        assert info.value.step == 1


@pytest.mark.unit
class TestRun:
    """Run orchestration."""

    @pytest.mark.parametrize(
        "t0,t_end,dt,n,dt_eff",
        [(0.0, 1.0, 0.3, 4, 0.25), (0.0, 1.0, 0.25, 4, 0.25), (2.0, 2.0, 0.1, 0, 0.1)],
    )
    def test_uniform_steps(self, t0, t_end, dt, n, dt_eff):
        """The interval is covered by ceil(span/dt) equal steps."""
        steps, step = integrator.uniform_steps(t0, t_end, dt)
        assert steps == n
        assert step == pytest.approx(dt_eff)

    def test_end_before_start_rejected(self, grids, params, state, stepper_cfg):
        """t_end earlier than the initial time is an error."""
        with pytest.raises(ValueError):
            integrator.run(state.with_time(1.0), grids, params, None, stepper_cfg, 0.5)

    def test_zero_length_run(self, grids, params, state, stepper_cfg):
        """t_end equal to the start returns the initial state unchanged."""
        result = integrator.run(state, grids, params, None, stepper_cfg, 0.0)
        assert result.n_steps == 0
        assert result.final is state

    def test_observer_cadence(self, grids, params, state, stepper_cfg):
        """Observers see step 0, cadence multiples and the final step, then flush."""
        obs = RecordingObserver(cadence=3)
        result = integrator.run(state, grids, params, None, stepper_cfg, 0.14, [obs])
        assert result.n_steps == 7
        assert obs.steps == [0, 3, 6, 7]
        assert obs.flushed
        assert result.records("recorder") == [0, 3, 6, 7]
        assert result.final.time == pytest.approx(0.14)

    def test_observers_flushed_on_abort(self, grids, params, state, stepper_cfg):
        """A blowup still flushes every observer before re-raising."""
        obs = RecordingObserver(cadence=1)
        T = state.T.copy()
        T[0, 0, 0] = np.nan
        with pytest.raises(NumericalBlowupError):
            integrator.run(State(state.v, T, state.q), grids, params, None, stepper_cfg, 0.1, [obs])
        assert obs.flushed

    def test_cfl_estimate(self, grids, state):
        """At rest the cap is returned; moving fluid gives a finite positive step."""
        assert integrator.cfl_dt(State.zeros(grids), grids, 0.5, dt_max=0.05) == 0.05
        dt = integrator.cfl_dt(state, grids, 0.5)
        assert 0.0 < dt < np.inf


@pytest.mark.integration
class TestObservers:
    """Built-in observers."""

    def test_norm_monitor_rows(self, grids, params, state, forcing, stepper_cfg):
        """Rows carry the documented columns and a satisfied constraint."""
        assert tuple(TimeseriesRow.model_fields) == TIMESERIES_COLUMNS
        monitor = NormMonitor(grids, params, forcing, cadence=2)
        captured = []
        monitor.sink = captured.extend
        integrator.run(state, grids, params, forcing, stepper_cfg, 0.08, [monitor])
        assert [r.t for r in captured] == pytest.approx([0.0, 0.04, 0.08])
        assert all(r.constraint_residual <= 1e-10 for r in captured)
        assert all(r.dtU_l2 > 0.0 for r in captured)

    def test_budget_and_h2_observers(self, grids, params, state, forcing, stepper_cfg):
        """Budget records close and the H2 samples are positive."""
        budget = EnergyBudgetObserver(grids, params, forcing, cadence=1)
        h2 = H2Monitor(grids, params, cadence=1)
        integrator.run(state, grids, params, forcing, stepper_cfg, 0.04, [budget, h2])
        assert len(budget.records) == 3
        for r in budget.records:
            assert abs(r.residual) <= 1e-9 * (abs(r.dEdt) + r.dissipation + abs(r.work))
        assert len(h2.values) == 3 and min(h2.values) > 0.0

    def test_snapshot_observer(self, grids, params, state, stepper_cfg, tmp_path):
        """Snapshots are written at cadence multiples and never for step 0."""
        written = []
        snaps = SnapshotObserver(tmp_path, lambda s, p: written.append(p), cadence=2)
        integrator.run(state, grids, params, None, stepper_cfg, 0.08, [snaps])
        assert [p.name for p in written] == ["snap_00000002.snap", "snap_00000004.snap"]

    def test_unforced_energy_non_increasing(self, grids, params, state, stepper_cfg):
        """The coupled unforced model loses energy at every sample."""
        budget = EnergyBudgetObserver(grids, params, Forcing.zeros(grids), cadence=5)
        integrator.run(state, grids, params, Forcing.zeros(grids), stepper_cfg, 1.0, [budget])
        energies = [r.energy for r in budget.records]
        assert all(b <= a for a, b in zip(energies, energies[1:]))


def vertical_mode_state(grids, params, l, m, j):
    """Temperature Y_lm times the j-th Robin mode, with its diffusive decay rate."""
    sigma, V = column_ops.vertical_eigenpairs(grids.vertical, params.alpha_s)
    Y = sphere_ops.spherical_harmonic(grids.sphere, l, m)
    T = Y[..., None] * V[:, j]
    state = State(VectorField.zeros(grids.shape), T, np.zeros(grids.shape))
    return state, params.nu2 * l * (l + 1) + params.mu2 * sigma[j]


def divergent_state(grids, state):
    """Copy of ``state`` whose velocity gains a depth-independent divergent part."""
    g = sphere_ops.grad(grids.sphere, sphere_ops.spherical_harmonic(grids.sphere, 1, 0))
    K = grids.vertical.n_levels
    shift = VectorField(np.repeat(g.theta[..., None], K, -1), np.repeat(g.phi[..., None], K, -1))
    return State(state.v + shift, state.T, state.q, state.time)


@pytest.mark.unit
class TestDecayOracle:
    """Pure diffusion of a single eigenmode."""

    def test_tendency_is_eigenvalue(self, grids, params):
        """With diffusion alone dT/dt = -lambda T."""
        mode, lam = vertical_mode_state(grids, params, 2, 1, 1)
        tend = dynamics.tendency(mode, grids, params.only("diffusion"))
        np.testing.assert_allclose(tend.dT, -lam * mode.T, atol=1e-10 * lam)
        assert np.max(np.abs(tend.dv.theta)) < 1e-12

    def test_euler_amplitude_factor(self, grids, params):
        """One Euler step scales the mode by 1/(1 + lambda dt), near exp(-lambda dt)."""
        mode, lam = vertical_mode_state(grids, params, 2, 1, 1)
        dt = 0.02
        cfg = StepperConfig(dt=dt, scheme="imex-euler")
        after = integrator.step(mode, grids, params.only("diffusion"), None, cfg)
        factor = norms_energy.volume_inner(grids, after.T, mode.T) / norms_energy.volume_inner(
            grids, mode.T, mode.T
        )
        assert factor == pytest.approx(1.0 / (1.0 + lam * dt), rel=1e-10)
        assert abs(factor - np.exp(-lam * dt)) <= (lam * dt) ** 2

    @pytest.mark.parametrize("scheme,order", [("imex-euler", 0.9), ("imex-bdf2", 1.9)])
    def test_convergence_order(self, tiny_grids, params, scheme, order):
        """Errors against exp(-lambda t) shrink at the scheme order when dt is halved."""
        mode, lam = vertical_mode_state(tiny_grids, params, 0, 0, 0)
        p = params.only("diffusion")
        errors = []
        for dt in (0.01, 0.005):
            cfg = StepperConfig(dt=dt, scheme=scheme)
            final = integrator.run(mode, tiny_grids, p, None, cfg, 0.5).final
            errors.append(float(np.max(np.abs(final.T - mode.T * np.exp(-lam * 0.5)))))
        assert np.log2(errors[0] / errors[1]) >= order


@pytest.mark.unit
class TestPreconditions:
    """Starting states must satisfy the barotropic constraint."""

    def test_admissible_state_accepted(self, grids, state):
        """Random admissible states pass the check."""
        integrator.check_admissible(state, grids)

    def test_run_rejects_divergent_start(self, grids, params, state, stepper_cfg):
        """A divergent vertical-mean velocity is refused before any step."""
        with pytest.raises(PreconditionViolation) as info:
            integrator.run(divergent_state(grids, state), grids, params, None, stepper_cfg, 0.1)
        assert info.value.exit_code == 5
        assert info.value.detail["residual"] > info.value.detail["limit"]


@pytest.mark.unit
class TestStepLimit:
    """The advective step estimate."""

    def test_inverse_in_velocity(self, grids, state):
        """Scaling the velocity by c divides the step by c."""
        dt = integrator.cfl_dt(state, grids, 0.5)
        scaled = integrator.cfl_dt(state.scaled(2.5), grids, 0.5)
        assert scaled == pytest.approx(dt / 2.5, rel=1e-12)

    def test_linear_in_safety(self, grids, state):
        """The safety factor multiplies the estimate."""
        dt = integrator.cfl_dt(state, grids, 0.5)
        assert integrator.cfl_dt(state, grids, 0.25) == pytest.approx(0.5 * dt, rel=1e-14)
