"""Flat dotted-key config files.

Grammar (one setting per line):

    # comment                     blank lines and #-comments ignored
    section.key = value           key: dotted lowercase identifiers
    train.scales = 0.75, 1.0      comma list of numbers
    teacher.dir = "runs/a b"      quoted or bare strings
    teacher.synthetic = true      booleans: true / false

Values are typed by shape: bool, int, float, comma list, string.
Duplicate keys are rejected; unknown keys are rejected by the consumer
against its schema.
"""

from __future__ import annotations

import re
from typing import Any

from .errors import ConfigError

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)+$")

ConfigValue = Any  # bool | int | float | str | tuple of those


def _parse_scalar(text: str) -> ConfigValue:
    if text == "true":
        return True
    if text == "false":
        return False
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, ConfigValue]:
    values: dict[str, ConfigValue] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{source}:{lineno}: invalid key {key!r} (want section.name)")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        if "," in value:
            values[key] = tuple(_parse_scalar(part.strip()) for part in value.split(","))
        else:
            values[key] = _parse_scalar(value)
    return values


def load_config_file(path: str) -> dict[str, ConfigValue]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read(), source=path)
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config file: {exc}") from exc


def check_known_keys(values: dict[str, ConfigValue], known: set[str], source: str) -> None:
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")


def coerce(key: str, value: ConfigValue, kind: str) -> ConfigValue:
    """Check/convert one typed setting; kind is one of
    int, float, bool, str, int_list, float_list."""
    def fail():
        raise ConfigError(f"config key {key!r} expects {kind}, got {value!r}")

    if kind == "bool":
        if not isinstance(value, bool):
            fail()
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail()
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail()
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            fail()
        return value
    if kind in ("int_list", "float_list"):
        items = value if isinstance(value, tuple) else (value,)
        out = []
        for item in items:
            if isinstance(item, bool):
                fail()
            if kind == "int_list" and not isinstance(item, int):
                fail()
            if kind == "float_list" and not isinstance(item, (int, float)):
                fail()
            out.append(float(item) if kind == "float_list" else item)
        return tuple(out)
    raise ValueError(f"unknown kind {kind!r}")
