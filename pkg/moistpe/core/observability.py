"""Observability setup: loguru logging, Prometheus metrics and OpenTelemetry tracing."""

import functools
import logging
import sys
import time
from typing import Any, Callable, Optional, TypeVar

from loguru import logger
from opentelemetry import trace
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor
from prometheus_client import Counter, Histogram, Info, generate_latest

from moistpe.core.config import settings

F = TypeVar("F", bound=Callable[..., Any])

PLAIN_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"
COLOR_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{extra[component]}</cyan> - <level>{message}</level>"
)

# Prometheus metrics
STEPS_TOTAL = Counter(
    "moistpe_steps_total",
    "Total accepted time steps",
    ["scheme"]
)

STEP_DURATION = Histogram(
    "moistpe_step_duration_seconds",
    "Wall time per time step in seconds",
    ["scheme"],
    buckets=[0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.5]
)

PROJECTIONS_TOTAL = Counter(
    "moistpe_projections_total",
    "Surface-pressure projections applied"
)

BLOWUPS_TOTAL = Counter(
    "moistpe_blowups_total",
    "Runs aborted on non-finite values",
    ["term"]
)

IDENTITY_CHECKS = Counter(
    "moistpe_identity_checks_total",
    "Discrete identity evaluations",
    ["identity", "status"]
)

ENSEMBLE_PAIRS = Counter(
    "moistpe_ensemble_pairs_total",
    "Ensemble pairs evolved",
    ["status"]
)

# Application info
APP_INFO = Info("moistpe_app", "Application information")
APP_INFO.info({
    "name": settings.app_name,
    "version": settings.app_version,
    "environment": settings.app_env
})


class LoguruHandler(logging.Handler):
    """Handler to integrate standard logging with loguru."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level: str | int = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        frame, depth = logging.currentframe(), 2
        while frame and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back  # type: ignore[assignment]
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def _default_component(record: Any) -> bool:
    record["extra"].setdefault("component", record["name"] or "moistpe")
    return True


def setup_logging(level: Optional[str] = None) -> None:
    """Configure loguru logging on stderr; stdout stays free for command output."""
    logger.remove()

    level = level or settings.log_level
    if settings.log_format == "json":
        logger.add(
            sys.stderr,
            format=PLAIN_FORMAT,
            level=level,
            serialize=True,
        )
    else:
        logger.add(
            sys.stderr,
            format=COLOR_FORMAT,
            level=level,
            colorize=True,
            filter=_default_component,
        )

    if settings.log_file:
        logger.add(
            settings.log_file,
            rotation="10 MB",
            retention=5,
            level="ERROR",
            format=PLAIN_FORMAT,
            serialize=True,
        )

    # Intercept standard logging
    logging.basicConfig(handlers=[LoguruHandler()], level=0, force=True)


def setup_tracing() -> Optional[TracerProvider]:
    """Setup OpenTelemetry tracing when an OTLP endpoint is configured."""
    if not settings.opentelemetry_endpoint:
        logger.debug("OpenTelemetry endpoint not configured, skipping tracing setup")
        return None

    try:
        resource = Resource.create({
            "service.name": settings.otel_service_name,
            "service.version": settings.app_version,
            "deployment.environment": settings.app_env,
        })
        tracer_provider = TracerProvider(resource=resource)
        trace.set_tracer_provider(tracer_provider)

        otlp_exporter = OTLPSpanExporter(
            endpoint=str(settings.opentelemetry_endpoint),
            insecure=not settings.is_production
        )
        tracer_provider.add_span_processor(BatchSpanProcessor(otlp_exporter))

        logger.info("OpenTelemetry tracing initialized")
        return tracer_provider

    except Exception as e:
        logger.error(f"Failed to initialize OpenTelemetry tracing: {e}")
        return None


def get_tracer(name: str) -> trace.Tracer:
    return trace.get_tracer(name)


def get_prometheus_metrics() -> str:
    """Get Prometheus metrics in text format."""
    return generate_latest().decode()


class SolverMetricsCollector:
    """Collect time-stepping metrics."""

    @staticmethod
    def record_step(scheme: str, duration: float) -> None:
        STEPS_TOTAL.labels(scheme=scheme).inc()
        STEP_DURATION.labels(scheme=scheme).observe(duration)

    @staticmethod
    def record_projection() -> None:
        PROJECTIONS_TOTAL.inc()

    @staticmethod
    def record_blowup(term: str) -> None:
        BLOWUPS_TOTAL.labels(term=term).inc()


class DiagnosticsMetricsCollector:
    """Collect identity-check and ensemble metrics."""

    @staticmethod
    def record_identity(identity: str, passed: bool) -> None:
        IDENTITY_CHECKS.labels(identity=identity, status="pass" if passed else "fail").inc()

    @staticmethod
    def record_pair(excluded: bool) -> None:
        ENSEMBLE_PAIRS.labels(status="excluded" if excluded else "evolved").inc()


class StructuredLogger:
    """Logger with bound component name and keyword context."""

    def __init__(self, name: str):
        self.logger = logger.bind(component=name)

    def info(self, message: str, /, **kwargs: Any) -> None:
        self.logger.bind(**kwargs).info(message)

    def error(self, message: str, /, **kwargs: Any) -> None:
        self.logger.bind(**kwargs).error(message)

    def warning(self, message: str, /, **kwargs: Any) -> None:
        self.logger.bind(**kwargs).warning(message)

    def debug(self, message: str, /, **kwargs: Any) -> None:
        self.logger.bind(**kwargs).debug(message)

    def step_event(self, step: int, time: float, **kwargs: Any) -> None:
        """Log integration progress."""
        self.logger.bind(event_type="step", step=step, model_time=time, **kwargs).debug(
            f"Step {step} at t={time:.6g}"
        )

    def check_event(self, name: str, residual: float, tolerance: float, **kwargs: Any) -> None:
        """Log the outcome of a tolerance check."""
        passed = residual <= tolerance
        bound = self.logger.bind(
            event_type="check", check=name, residual=residual, tolerance=tolerance, **kwargs
        )
        if passed:
            bound.debug(f"Check {name}: {residual:.3e} <= {tolerance:.1e}")
        else:
            bound.warning(f"Check {name} failed: {residual:.3e} > {tolerance:.1e}")


def get_logger(name: str) -> StructuredLogger:
    """Get structured logger for component."""
    return StructuredLogger(name)


class PerformanceMonitor:
    """Monitor diagnostic wall times."""

    @staticmethod
    def time_function(func_name: str) -> Callable[[F], F]:
        """Decorator to time function execution."""
        def decorator(func: F) -> F:
            @functools.wraps(func)
            def wrapper(*args: Any, **kwargs: Any) -> Any:
                start = time.perf_counter()
                try:
                    result = func(*args, **kwargs)
                    duration = time.perf_counter() - start
                    logger.info(f"Function {func_name} executed in {duration:.3f}s")
                    return result
                except Exception as e:
                    duration = time.perf_counter() - start
                    logger.error(f"Function {func_name} failed after {duration:.3f}s: {e}")
                    raise
            return wrapper  # type: ignore[return-value]
        return decorator


# Global instances
solver_metrics = SolverMetricsCollector()
diagnostics_metrics = DiagnosticsMetricsCollector()
performance_monitor = PerformanceMonitor()
