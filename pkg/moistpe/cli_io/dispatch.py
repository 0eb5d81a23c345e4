"""Subcommand orchestration: each command builds its inputs from the config and writes artifacts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable

import numpy as np

from moistpe.cli_io.config_file import echo_config
from moistpe.cli_io.snapshot import write_snapshot
from moistpe.cli_io.timeseries import write_records, write_timeseries
from moistpe.core.config import settings
from moistpe.core.errors import ConfigError
from moistpe.core.observability import get_logger, get_prometheus_metrics, get_tracer
from moistpe.diagnostics import attractor, norms_energy
from moistpe.models.fields import Forcing, Grids, State, forcing_preset, random_state
from moistpe.schemas.config import Config
from moistpe.schemas.reports import BudgetRecord, FailureSummary, IdentityResidual
from moistpe.solver.integrator import (
    EnergyBudgetObserver,
    H2Monitor,
    NormMonitor,
    SnapshotObserver,
    run,
)

logger = get_logger("dispatch")
tracer = get_tracer(__name__)

# named RNG streams derived from the config seed
INITIAL_STREAM = 0
ENSEMBLE_STREAM = 1
GAMMA_STREAM = 2

IDENTITY_COLUMNS = ("name", "absolute", "relative", "tolerance", "precondition_ok", "passed")
BUDGET_COLUMNS = tuple(BudgetRecord.model_fields)
SPECTRUM_COLUMNS = ("component", "rank", "eigenvalue", "l", "m", "part", "vertical", "kind")
SQUEEZE_COLUMNS = ("n", "lambda_n", "delta_hat", "envelope")
SQUEEZE_PAIR_COLUMNS = ("n", "index", "psi0", "phi_T", "excluded")
GAMMA_COLUMNS = ("scale", "t", "gamma_hat")


class Context:
    """Grids, parameters, forcing and seeded streams shared by the commands."""

    def __init__(self, config: Config, output_dir: Path):
        self.config = config
        self.output_dir = output_dir
        self.grids = Grids.from_resolution(config.resolution)
        self.params = config.model
        self.forcing: Forcing = forcing_preset(
            config.forcing.preset, config.forcing.amplitude, self.grids
        )

    def stream(self, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.config.run.seed).spawn(index + 1)[index]

    def initial_state(self) -> State:
        rng = np.random.default_rng(self.stream(INITIAL_STREAM))
        return random_state(
            self.grids,
            rng,
            amplitude=self.config.run.initial_amplitude,
            max_degree=self.config.run.initial_degree,
        )

    def spun_up(self) -> State:
        """Random initial state integrated over the spin-up interval, clock reset to zero."""
        initial = self.initial_state()
        result = run(
            initial,
            self.grids,
            self.params,
            self.forcing,
            self.config.stepper,
            self.config.run.spinup,
        )
        return result.final.with_time(0.0)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_json(self, name: str, payload: dict[str, Any]) -> None:
        self.path(name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_command(ctx: Context) -> int:
    cfg = ctx.config
    out = cfg.output
    ctx.path("config_effective.ini").write_text(echo_config(cfg))

    monitor = NormMonitor(ctx.grids, ctx.params, ctx.forcing, cadence=out.cadence)
    budget = EnergyBudgetObserver(ctx.grids, ctx.params, ctx.forcing, cadence=out.cadence)
    h2 = H2Monitor(ctx.grids, ctx.params, cadence=out.cadence)
    monitor.sink = lambda rows: write_timeseries(rows, ctx.path("timeseries.csv"))
    budget.sink = lambda rows: write_records(rows, ctx.path("budget.csv"), BUDGET_COLUMNS)
    observers: list[Any] = [monitor, budget, h2]
    if out.snapshot_cadence > 0:
        observers.append(
            SnapshotObserver(
                ctx.output_dir,
                lambda state, p: write_snapshot(state, p, ctx.grids),
                out.snapshot_cadence,
            )
        )

    t_end = cfg.run.spinup + cfg.run.duration
    result = run(
        ctx.initial_state(), ctx.grids, ctx.params, ctx.forcing, cfg.stepper, t_end, observers
    )
    write_snapshot(result.final, ctx.path("final.snap"), ctx.grids)

    measured = [r for r in monitor.rows if r.t >= cfg.run.spinup - 1e-12]
    times = [r.t for r in measured]
    dtU = [r.dtU_l2 for r in measured]
    trend = norms_energy.growth_trend(times, dtU)
    h2_times = [t for t in h2.times if t >= cfg.run.spinup - 1e-12]
    h2_values = h2.values[len(h2.times) - len(h2_times):]
    fit = norms_energy.h2_integral_monitor(h2_times, h2_values, cfg.run.monitor_taus)
    ctx.write_json(
        "monitors.json",
        {
            "steps": result.n_steps,
            "dt": result.dt,
            "dtU_trend": trend.model_dump(),
            "dtU_ratio": trend.max_value / trend.reference if trend.reference > 0 else None,
            "h2_growth": {**fit.model_dump(), "spread": fit.spread},
        },
    )
    logger.info("Run artifacts written", directory=str(ctx.output_dir), steps=result.n_steps)
    return 0


def verify_command(ctx: Context) -> int:
    rng = np.random.default_rng(ctx.stream(INITIAL_STREAM))
    report = norms_energy.identity_suite(ctx.grids, ctx.params, rng)
    residuals: list[IdentityResidual] = report.residuals + attractor.eigenrelation_checks(
        ctx.grids, ctx.params
    )
    write_records(residuals, ctx.path("identities.csv"), IDENTITY_COLUMNS)
    failures = [r.model_dump() for r in residuals if not r.passed]
    ctx.write_json(
        "verify_summary.json",
        {
            "status": "fail" if failures else "ok",
            "horizontal_tolerance": report.horizontal_tolerance,
            "vertical_tolerance": report.vertical_tolerance,
            "residuals": [r.model_dump() for r in residuals],
        },
    )
    if failures:
        print(FailureSummary(command="verify", failures=failures).model_dump_json())
        return 1
    print(f"verify: {len(residuals)} checks passed")
    return 0


def spectrum_command(ctx: Context) -> int:
    basis = attractor.build_basis(ctx.grids, ctx.params)
    rows = []
    for name, comp in basis.components.items():
        for rank, (value, mode) in enumerate(zip(comp.eigenvalues, comp.modes)):
            rows.append(
                {
                    "component": name,
                    "rank": rank,
                    "eigenvalue": float(value),
                    "l": mode.degree,
                    "m": mode.order,
                    "part": mode.part,
                    "vertical": mode.vertical,
                    "kind": mode.kind,
                }
            )
    write_records(rows, ctx.path("spectrum.csv"), SPECTRUM_COLUMNS)
    counts = {name: comp.count for name, comp in basis.components.items()}
    print(f"spectrum: modes {counts}")
    return 0


def squeeze_command(ctx: Context) -> int:
    ens = ctx.config.ensemble
    base = ctx.spun_up()
    basis = attractor.build_basis(ctx.grids, ctx.params)
    pairs = attractor.make_ensemble(
        base, ens.size, ens.scale, ctx.stream(ENSEMBLE_STREAM), ctx.grids, ens.degrees
    )
    with tracer.start_as_current_span("dispatch.squeeze"):
        trajectories = attractor.evolve_ensemble(
            pairs,
            ctx.grids,
            ctx.params,
            ctx.forcing,
            ctx.config.stepper,
            ens.horizon,
            basis,
            n_samples=ens.gamma_samples,
        )
    gamma = attractor.estimate_gamma(trajectories, ens.scale)
    reports = attractor.squeeze_curve(trajectories, basis, ens.modes or None, gamma)

    write_records(
        [r.model_dump(include=set(SQUEEZE_COLUMNS)) for r in reports],
        ctx.path("squeeze.csv"),
        SQUEEZE_COLUMNS,
    )
    pair_rows = [
        {"n": r.n, **p.model_dump()} for r in reports for p in r.pairs
    ]
    write_records(pair_rows, ctx.path("squeeze_pairs.csv"), SQUEEZE_PAIR_COLUMNS)

    deltas = [r.delta_hat for r in reports if r.delta_hat is not None]
    squeezing = [r.n for r in reports if r.delta_hat is not None and r.delta_hat < 1.0]
    summary = {
        "mode_count": basis.mode_count,
        "pairs": len(pairs),
        "excluded": reports[0].excluded if reports else [],
        "non_increasing": all(b <= a for a, b in zip(deltas, deltas[1:])),
        "first_squeezing_n": squeezing[0] if squeezing else None,
        "lipschitz_surrogate": gamma.lipschitz_surrogate if gamma.gamma_hat else None,
    }
    ctx.write_json("squeeze_summary.json", summary)
    logger.info("Squeezing curve written", **{k: v for k, v in summary.items() if k != "excluded"})
    print(f"squeeze: first n with delta < 1: {summary['first_squeezing_n']}")
    return 0


def gamma_command(ctx: Context) -> int:
    ens = ctx.config.ensemble
    base = ctx.spun_up()
    basis = attractor.build_basis(ctx.grids, ctx.params)
    root = ctx.stream(GAMMA_STREAM)
    tables = []
    for scale, child in zip(ens.gamma_scales, root.spawn(len(ens.gamma_scales))):
        pairs = attractor.make_ensemble(base, ens.size, scale, child, ctx.grids, ens.degrees)
        table = attractor.gamma_experiment(
            pairs,
            ctx.grids,
            ctx.params,
            ctx.forcing,
            ctx.config.stepper,
            ens.horizon,
            scale,
            n_samples=ens.gamma_samples,
            basis=basis,
        )
        tables.append(table)

    rows = [
        {"scale": table.scale, "t": t, "gamma_hat": g}
        for table in tables
        for t, g in zip(table.times, table.gamma_hat)
    ]
    write_records(rows, ctx.path("gamma.csv"), GAMMA_COLUMNS)
    finals = [table.gamma_hat[-1] for table in tables if table.gamma_hat]
    spread = max(finals) / min(finals) if finals and min(finals) > 0 else None
    ctx.write_json(
        "gamma_summary.json",
        {
            "scales": list(ens.gamma_scales),
            "gamma_T": finals,
            "spread": spread,
            "lipschitz_surrogate": [attractor.lipschitz_surrogate(t) for t in tables],
        },
    )
    print(f"gamma: gamma(T) spread across scales {spread}")
    return 0


def dimbound_command(ctx: Context) -> int:
    d = ctx.config.dimbound
    value = attractor.dimension_bound(d.N, d.c, d.delta)
    ctx.write_json(
        "dimbound.json",
        {
            "N": d.N,
            "c": d.c,
            "delta": d.delta,
            "gauss_constant": attractor.GAUSS_CONSTANT,
            "value": value,
        },
    )
    print(f"{value:.6f}")
    return 0


COMMANDS: dict[str, Callable[[Context], int]] = {
    "run": run_command,
    "verify": verify_command,
    "spectrum": spectrum_command,
    "squeeze": squeeze_command,
    "gamma": gamma_command,
    "dimbound": dimbound_command,
}


def dispatch(subcommand: str, config: Config, output_dir: str | Path | None = None) -> int:
    """Run ``subcommand`` and write its artifacts; returns the exit status."""
    handler = COMMANDS.get(subcommand)
    if handler is None:
        raise ConfigError(
            f"unknown subcommand '{subcommand}'; expected one of {', '.join(COMMANDS)}",
            key="subcommand",
        )
    directory = Path(output_dir if output_dir is not None else config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    ctx = Context(config, directory)
    with tracer.start_as_current_span(f"moistpe.{subcommand}") as span:
        span.set_attribute("output_dir", str(directory))
        logger.info("Command started", command=subcommand, directory=str(directory))
        status = handler(ctx)
    if settings.prometheus_metrics_enabled:
        ctx.path("metrics.prom").write_text(get_prometheus_metrics())
    return status
