import hashlib
import json
from datetime import timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Tuple, cast

from packaging.version import InvalidVersion, Version
from rich.console import Console

from .aliases import PathOrStr
from .exceptions import *


class StrEnum(str, Enum):
    def __str__(self) -> str:
        return self.value


def unique_name() -> str:
    import uuid

    import petname

    return cast(str, petname.generate()) + "-" + str(uuid.uuid4())[:7]


def stderr_console() -> Console:
    return Console(stderr=True)


def print_stderr(*args, **kwargs):
    stderr_console().print(*args, **kwargs)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_hash(obj: Any, length: int = 12) -> str:
    """
    SHA-256 of the canonical JSON encoding of ``obj``, truncated to ``length`` hex chars.
    """
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]


def parse_schema(schema: str) -> Tuple[str, Version]:
    """
    Split a schema id like ``absnas.space/1.0`` into its kind and version.

    :raises SchemaError: If the id can't be parsed.
    """
    try:
        kind, version = schema.split("/")
        return kind, Version(version)
    except (ValueError, InvalidVersion):
        raise SchemaError(f"Malformed schema id '{schema}'")


def check_schema(found: Any, expected: str, source: PathOrStr = "<memory>"):
    """
    Ensure a persisted object's schema id is compatible with the one this version writes.

    Only the major version has to match.

    :raises SchemaError: If the kind or the major version differ.
    """
    if not isinstance(found, str):
        raise SchemaError(f"Missing schema id in '{source}' (expected '{expected}')")
    found_kind, found_version = parse_schema(found)
    expected_kind, expected_version = parse_schema(expected)
    if found_kind != expected_kind or found_version.major != expected_version.major:
        raise SchemaError(f"'{source}' has schema '{found}', but this version of absnas reads '{expected}'")


def read_json(path: PathOrStr) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise IoFailure(f"File '{path}' not found")
    except json.JSONDecodeError as exc:
        raise IoFailure(f"Failed to parse JSON from '{path}': {exc}")


def write_json(path: PathOrStr, obj: Any):
    path = Path(path)
    try:
        path.parent.mkdir(exist_ok=True, parents=True)
        with open(path, "w") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise IoFailure(f"Failed to write '{path}': {exc}")


def ensure_absent(path: PathOrStr):
    """
    :raises OutputExistsError: If ``path`` already exists.
    """
    if Path(path).exists():
        raise OutputExistsError(
            f"'{path}' already exists and won't be overwritten.\n"
            f"Delete it or pick a different output directory with --out."
        )


def format_timedelta(td: "timedelta") -> str:
    def format_value_and_unit(value: int, unit: str) -> str:
        if value == 1:
            return f"{value} {unit}"
        else:
            return f"{value} {unit}s"

    parts = []
    seconds = int(td.total_seconds())
    days, seconds = divmod(seconds, 86400)
    hours, seconds = divmod(seconds, 3600)
    minutes, seconds = divmod(seconds, 60)
    if days:
        parts.append(format_value_and_unit(days, "day"))
    if hours:
        parts.append(format_value_and_unit(hours, "hour"))
    if minutes:
        parts.append(format_value_and_unit(minutes, "minute"))
    if seconds or not parts:
        parts.append(format_value_and_unit(seconds, "second"))
    return ", ".join(parts)
