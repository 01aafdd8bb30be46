"""Line based ``key = value`` configuration files."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import InvalidConfig


def parse_config(text):
    """Parse ``key = value`` lines into a dict of strings.

    Blank lines and lines starting with ``#`` are ignored.  Keys are
    lower-cased; a repeated key is an error.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not key:
            raise InvalidConfig(f"line {lineno}: empty key")
        if key in out:
            raise InvalidConfig(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path):
    return parse_config(Path(path).read_text())


def format_config(mapping):
    return "".join(f"{k} = {v}\n" for k, v in sorted(mapping.items()))


def config_hash(mapping):
    return hashlib.sha256(format_config(mapping).encode()).hexdigest()


def as_float(value, key):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InvalidConfig(f"{key}: expected a number, got {value!r}") from None


def as_int(value, key):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise InvalidConfig(f"{key}: expected an integer, got {value!r}") from None


def as_bool(value, key):
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"{key}: expected a boolean, got {value!r}")


def as_int_list(value, key):
    try:
        return [int(v) for v in str(value).replace("[", "").replace("]", "").split(",") if v.strip()]
    except ValueError:
        raise InvalidConfig(f"{key}: expected a comma separated integer list, got {value!r}") from None


def as_float_list(value, key):
    try:
        return [float(v) for v in str(value).replace("[", "").replace("]", "").split(",") if v.strip()]
    except ValueError:
        raise InvalidConfig(f"{key}: expected a comma separated number list, got {value!r}") from None


def child_seed(seed, name):
    """Stable 32-bit seed for a named sub-stream of ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
