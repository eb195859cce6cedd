"""Plain-text key/value configuration files.

Format: one `key = value` per line, '#' starts a comment, blank lines
ignored.  Keys may repeat (e.g. one `scatterer` line per reflector).
"""

import math

from .errors import ConfigError


def read_kv(path) -> list:
    """Parse a key/value file into an ordered list of (key, value) strings."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    return pairs


def as_dict(pairs, multi=()) -> dict:
    """Collapse pairs to a dict; keys listed in `multi` collect into lists."""
    out = {}
    for key, value in pairs:
        if key in multi:
            out.setdefault(key, []).append(value)
        elif key in out:
            raise ConfigError(f"duplicate key '{key}'")
        else:
            out[key] = value
    return out


def parse_float(text: str, key: str) -> float:
    if text.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"bad float for '{key}': {text!r}") from None


def parse_int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad integer for '{key}': {text!r}") from None


def parse_fields(text: str, key: str) -> dict:
    """Parse 'a=1, b=2' style inline fields used by scatterer lines."""
    fields = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad field in '{key}': {part!r}")
        name, value = part.split("=", 1)
        fields[name.strip()] = value.strip()
    return fields
