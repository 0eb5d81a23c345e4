from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings. These govern observability only, never numerical results."""

    # Application settings
    app_name: str = "moistpe"
    app_version: str = "0.1.0"
    app_env: str = "dev"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="MOISTPE_", extra="ignore")

    # Logging settings
    log_format: str = "colored"
    log_level: str = "INFO"
    log_file: str | None = None

    # Observability settings
    prometheus_metrics_enabled: bool = True
    opentelemetry_endpoint: str | None = None
    otel_service_name: str = "moistpe"

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in ("colored", "json"):
            raise ValueError("log_format must be 'colored' or 'json'")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        return v.upper()

    @property
    def is_production(self) -> bool:
        return self.app_env.lower() in ["production", "prod"]


def get_settings() -> Settings:
    """Create settings instance with environment variable loading."""
    return Settings()


# Global settings instance
settings = get_settings()
