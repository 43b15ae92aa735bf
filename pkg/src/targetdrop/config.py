"""Plain-text ``key=value`` configs with typed defaults and override merging."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = val
    return out


def dump_kv(values: dict) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in sorted(values.items()))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def coerce(value: str, like):
    """Convert ``value`` to the type of the default ``like``."""
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        if value.strip() == "":
            return ()
        items = [x.strip() for x in value.split(",")]
        elem = like[0] if like else ""
        return tuple(coerce(x, elem) for x in items)
    return value


def resolve(defaults: dict, *layers: dict[str, str]) -> dict:
    """Merge string layers over typed defaults, rejecting unknown keys."""
    cfg = dict(defaults)
    for layer in layers:
        for key, val in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                cfg[key] = coerce(val, defaults[key])
            except ValueError as err:
                raise ConfigError(f"bad value for {key!r}: {err}") from err
    return cfg


def load_file(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())
