"""Plain-text ``[section]`` / ``key = value`` run configuration.

Every value is handed to the pydantic section models as text, so coercion and
range checks live in one place. Errors name the offending key and line.
"""

from __future__ import annotations

import typing
from typing import Any

from pydantic import BaseModel, ValidationError

from moistpe.core.errors import ConfigError
from moistpe.schemas.config import SECTIONS, Config


def _is_list(model: type[BaseModel], key: str) -> bool:
    annotation = model.model_fields[key].annotation
    return typing.get_origin(annotation) in (list, typing.List)


def _coerce(model: type[BaseModel], key: str, raw: str) -> Any:
    if _is_list(model, key):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def _validation_error(
    e: ValidationError, section: str, lines: dict[str, int], header: int
) -> ConfigError:
    first = e.errors()[0]
    loc = [str(part) for part in first.get("loc", ())]
    key = loc[0] if loc else None
    message = f"[{section}] {first.get('msg', 'invalid value')}"
    if key is None:
        return ConfigError(message, key=section, line=header)
    return ConfigError(message, key=f"{section}.{key}", line=lines.get(key, header))


def parse_config(text: str) -> Config:
    """Validated configuration; sections and keys left out take their defaults."""
    raw: dict[str, dict[str, Any]] = {}
    key_lines: dict[str, dict[str, int]] = {}
    headers: dict[str, int] = {}
    section: str | None = None

    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", key=section, line=number)
            if section in headers:
                raise ConfigError(f"duplicate section [{section}]", key=section, line=number)
            headers[section] = number
            raw[section] = {}
            key_lines[section] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got '{stripped}'", line=number)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if section is None:
            raise ConfigError("entry outside of any section", key=key, line=number)
        model = SECTIONS[section]
        if key not in model.model_fields:
            raise ConfigError(f"unknown key in [{section}]", key=f"{section}.{key}", line=number)
        if key in raw[section]:
            raise ConfigError("duplicate key", key=f"{section}.{key}", line=number)
        raw[section][key] = _coerce(model, key, value)
        key_lines[section][key] = number

    built = {}
    for name, values in raw.items():
        try:
            built[name] = SECTIONS[name].model_validate(values)
        except ValidationError as e:
            raise _validation_error(e, name, key_lines[name], headers[name]) from e
    return Config(**built)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def echo_config(config: Config) -> str:
    """Complete effective configuration; ``parse_config`` of the result reproduces it."""
    out = []
    for name in SECTIONS:
        section = getattr(config, name)
        out.append(f"[{name}]")
        for key in type(section).model_fields:
            out.append(f"{key} = {_format(getattr(section, key))}")
        out.append("")
    return "\n".join(out)


def apply_overrides(config: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` overrides from the command line."""
    if not overrides:
        return config
    text = echo_config(config)
    by_section: dict[str, list[str]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got '{item}'")
        target, value = item.split("=", 1)
        name, key = target.strip().split(".", 1)
        by_section.setdefault(name, []).append(f"{key.strip()} = {value.strip()}")

    lines = []
    section = None
    for line in text.splitlines():
        if line.startswith("["):
            section = line[1:-1]
        elif "=" in line and section in by_section:
            key = line.split("=", 1)[0].strip()
            if any(o.split("=", 1)[0].strip() == key for o in by_section[section]):
                continue
        lines.append(line)
        if line.startswith("[") and section in by_section:
            lines.extend(by_section[section])
    unknown = set(by_section) - set(SECTIONS)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown section in override: {name}", key=name)
    return parse_config("\n".join(lines))
