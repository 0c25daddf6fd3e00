#!/usr/bin/env python3
"""
Shared core: errors, bundled defaults and key-value run configuration.
No numerical dependencies - used by every other module and by the CLI.
"""

import json
import logging
from pathlib import Path
from typing import Any, Mapping

logger = logging.getLogger(__name__)

# Cache for the bundled defaults
_defaults_cache: dict[str, Any] | None = None

# List-valued keys whose items are strings rather than numbers
_STR_LIST_KEYS = {"free", "models"}


class RegPinnError(Exception):
    """Base class for errors raised by this package."""


class DomainError(RegPinnError, ValueError):
    """A numeric input is outside the domain where the formula is defined."""


class DataFormatError(RegPinnError, ValueError):
    """An input file does not follow its documented schema."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None) -> None:
        self.path = None if path is None else Path(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class NumericalError(RegPinnError, RuntimeError):
    """A computation produced non-finite values and was aborted."""


def setup_logging(verbose: bool = False) -> None:
    """Configure root logging for command-line use."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def get_defaults_path() -> Path:
    """Get path to the bundled defaults.json."""
    return Path(__file__).parent / "defaults.json"


def load_defaults() -> dict[str, Any]:
    """Load defaults.json. Returns a fresh copy on every call."""
    global _defaults_cache
    if _defaults_cache is None:
        path = get_defaults_path()
        if not path.exists():
            raise FileNotFoundError(f"defaults.json not found at {path}")
        with open(path) as f:
            _defaults_cache = json.load(f)
    return json.loads(json.dumps(_defaults_cache))


def coerce_value(key: str, raw: str, default: Any) -> Any:
    """Convert a config-file string to the type of the default value."""
    raw = raw.strip()
    try:
        if isinstance(default, list):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            if key in _STR_LIST_KEYS:
                return items
            if default and all(isinstance(v, int) for v in default):
                return [int(item) for item in items]
            return [float(item) for item in items]
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ValueError(f"Invalid value for '{key}': {raw!r} ({e})") from e
    return raw


def format_value(value: Any) -> str:
    """Inverse of coerce_value; floats keep full precision."""
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_key_values(path: Path | str) -> dict[str, str]:
    """Parse a `key = value` file. `#` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError("expected 'key = value'", path, lineno)
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_key_values(values: Mapping[str, Any], path: Path | str) -> None:
    """Write a `key = value` file readable by read_key_values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for key, value in values.items():
            f.write(f"{key} = {format_value(value)}\n")


def load_run_config(path: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Resolve the run configuration: defaults, then config file, then overrides.

    Unknown keys in the file or the overrides raise ValueError.
    Overrides equal to None are ignored so argparse defaults can be passed through.
    """
    config = load_defaults()
    if path is not None:
        for key, raw in read_key_values(path).items():
            if key not in config:
                raise ValueError(f"Unknown config key '{key}' in {path}")
            config[key] = coerce_value(key, raw, config[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in config:
            raise ValueError(f"Unknown config key '{key}'")
        config[key] = value
    logger.debug("Resolved config: %s", config)
    return config
