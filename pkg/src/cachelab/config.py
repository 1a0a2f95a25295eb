"""Flat `key = value` experiment configuration.

One key per line, `#` comments, values typed by the default they override
(ints, floats, booleans, strings, or comma-separated tuples). Chosen over a
nested format so configs stay diff-friendly and trivially scriptable.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def load_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _coerce_one(key: str, text: str, default):
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [p.strip() for p in text.split(",") if p.strip()]
            element = default[0] if default else 0
            if isinstance(element, int):
                return tuple(int(p, 0) for p in items)
            return tuple(items)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def resolve(defaults: dict, *layers: dict[str, str]) -> dict:
    """Apply raw string layers (file, then overrides) on top of the defaults."""
    values = dict(defaults)
    for layer in layers:
        for key, text in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _coerce_one(key, text, defaults[key])
    return values


def format_config(values: dict, header: str = "") -> str:
    lines = [f"# {line}" for line in header.splitlines() if line]
    for key in sorted(values):
        v = values[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
