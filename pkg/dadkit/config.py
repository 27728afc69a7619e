"""
Flat key=value configuration.

Files are read with python-dotenv's ``dotenv_values`` so the same syntax
(comments, quoting, blank lines) works for run configs and for ``.env``.
Each config dataclass maps its fields to flat keys through ``KEY_PREFIX``;
``parse_config`` coerces the raw strings using the dataclass type hints.
"""
import dataclasses
import enum
import logging
import types
import typing
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any, TypeVar

from dotenv import dotenv_values

from dadkit.errors import ConfigError
from dadkit.utils import mapping_fingerprint

_log = logging.getLogger(__name__)

C = TypeVar("C")

# Keys consumed outside of a config dataclass (cache building, runners).
EXTRA_KEYS = frozenset(
    {
        "retries",
        "keep_rejected",
        "augmentation",
        "cache_batch_size",
        "workers",
        "vq_preset",
        "num_classes",
        "architecture",
        "width",
    }
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_float(raw: str) -> float:
    """Accept plain floats and fractions such as ``8/255``."""
    text = raw.strip()
    if "/" in text:
        num, _, den = text.partition("/")
        return float(num) / float(den)
    return float(text)


def parse_bool(raw: str) -> bool:
    text = raw.strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _coerce(raw: str, target: Any) -> Any:
    origin = typing.get_origin(target)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if raw.strip().lower() in {"", "none"}:
            return None
        return _coerce(raw, args[0])
    if target is bool:
        return parse_bool(raw)
    if target is int:
        return int(raw.strip())
    if target is float:
        return parse_float(raw)
    if isinstance(target, type) and issubclass(target, enum.Enum):
        return target(raw.strip().replace("-", "_").lower())
    return raw


def config_keys(cls: type) -> dict[str, str]:
    """Map flat key -> field name for a config dataclass."""
    prefix = getattr(cls, "KEY_PREFIX", "")
    return {
        prefix + f.name: f.name
        for f in dataclasses.fields(cls)
        if f.init and not f.metadata.get("nested")
    }


def parse_config(cls: type[C], values: Mapping[str, str], **fixed: Any) -> C:
    """Build ``cls`` from the keys of ``values`` that belong to it."""
    hints = typing.get_type_hints(cls)
    kwargs: dict[str, Any] = {}
    for key, field in config_keys(cls).items():
        if key not in values or values[key] is None:
            continue
        try:
            kwargs[field] = _coerce(values[key], hints[field])
        except ValueError as e:
            raise ConfigError(f"Bad value for {key}: {values[key]!r} ({e})") from e
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def known_keys(classes: Iterable[type]) -> frozenset[str]:
    keys: set[str] = set(EXTRA_KEYS)
    for cls in classes:
        keys.update(config_keys(cls))
    return frozenset(keys)


def parse_overrides(items: Iterable[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Expected key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: str | Path | None,
    overrides: Mapping[str, str] | None = None,
    *,
    allowed: frozenset[str] | None = None,
) -> dict[str, str]:
    """Read a flat config file and apply overrides on top of it."""
    values: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"Config file not found: {p}")
        values.update({k: v for k, v in dotenv_values(p).items() if v is not None})
        _log.debug("loaded %d keys from %s", len(values), p)
    values.update(overrides or {})

    if allowed is not None:
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
    return values


def render(config: object) -> dict[str, str]:
    """Flat key=value view of a config dataclass, nested configs included."""
    out: dict[str, str] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.metadata.get("nested"):
            out.update(render(value))
            continue
        key = getattr(config, "KEY_PREFIX", "") + f.name
        if isinstance(value, enum.Enum):
            value = value.value
        out[key] = str(value)
    return out


def fingerprint(config: object) -> str:
    return mapping_fingerprint(render(config))
