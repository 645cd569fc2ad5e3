"""Flat ``key = value`` config text shared by sim and training configs.

One assignment per line; blank lines and ``#`` comments are allowed.
Unknown keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigError


def parse_kv_text(text: str) -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def format_kv(pairs) -> str:
    return "\n".join(f"{key} = {value}" for key, value in pairs) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(field_type, key: str, text: str):
    # Dataclasses defined under `from __future__ import annotations` carry
    # their field types as strings.
    if isinstance(field_type, str):
        field_type = _TYPE_NAMES.get(field_type, field_type)
    if field_type is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if field_type is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if field_type is bool:
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}")
    if field_type is str:
        return text
    raise ConfigError(f"{key}: unsupported config field type {field_type!r}")


def dataclass_to_kv(obj) -> str:
    """Serialize a flat dataclass (int/float/bool/str fields only)."""
    pairs = [
        (f.name, _format_value(getattr(obj, f.name)))
        for f in dataclasses.fields(obj)
    ]
    return format_kv(pairs)


def dataclass_from_kv(cls, text: str, overrides: dict | None = None):
    """Parse config text into ``cls``, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    pairs = parse_kv_text(text)
    unknown = sorted(set(pairs) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs = {
        name: _coerce(fields[name].type, name, value) for name, value in pairs.items()
    }
    if overrides:
        kwargs.update(overrides)
    return cls(**kwargs)
