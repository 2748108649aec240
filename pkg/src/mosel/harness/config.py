"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Keys use the CLI option names
with underscores (``snr_db``, ``lr``, ``samples_per_class``); list values
are comma separated (``carriers_hz = 2.6e9, 2.8e9``).
"""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def write_config(path, values: dict) -> None:
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, (list, tuple)):
            v = ", ".join(repr(x) for x in v)
        lines.append(f"{key} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
