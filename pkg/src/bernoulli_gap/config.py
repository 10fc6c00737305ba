"""Experiment configuration: packaged defaults, config files and flag overrides."""
from __future__ import annotations

import json
import os
import re
from importlib import resources
from typing import Any

import numpy as np

OUTPUT_DIR_ENV = "BERNOULLI_GAP_OUTPUT_DIR"


class UsageError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invalid value for '{field}': {message}")
        self.field = field


def load_defaults() -> dict[str, dict[str, Any]]:
    text = resources.files("bernoulli_gap").joinpath("defaults.json").read_text()
    return json.loads(text)


def load_config_file(path: str | os.PathLike | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError("config", f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config", "top level must be a JSON object")
    return data


def resolve(command: str, file_cfg: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Defaults < config file < command-line flags (``None`` flags are ignored).

    The config file may hold flat keys, per-command sections, or both; the
    command's section wins over flat keys.
    """
    defaults = load_defaults()
    out = dict(defaults["common"])
    out.update(defaults.get(command, {}))
    flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
    for source in (flat, file_cfg.get("common", {}), file_cfg.get(command, {})):
        unknown = set(source) - set(out)
        if unknown:
            raise UsageError(sorted(unknown)[0], f"unknown key for '{command}'")
        out.update(source)
    out.update({k: v for k, v in overrides.items() if v is not None})
    out["command"] = command
    return out


_RANGE = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*(?:/\s*(\d+))?\s*$")


def parse_int_list(value, field: str, minimum: int | None = None) -> list[int]:
    """``"4..14"``, ``"4..12/2"``, ``"8,16,32"``, ``"6"`` or an int/list."""
    if isinstance(value, (int, np.integer)):
        items = [int(value)]
    elif isinstance(value, (list, tuple)):
        items = [int(v) for v in value]
    else:
        items = []
        for part in str(value).split(","):
            m = _RANGE.match(part)
            if m:
                lo, hi, step = int(m[1]), int(m[2]), int(m[3] or 1)
                if hi < lo or step < 1:
                    raise UsageError(field, f"empty range {part!r}")
                items.extend(range(lo, hi + 1, step))
            else:
                try:
                    items.append(int(float(part)))
                except ValueError:
                    raise UsageError(field, f"cannot parse {part!r}") from None
    if not items:
        raise UsageError(field, "empty list")
    if minimum is not None and min(items) < minimum:
        raise UsageError(field, f"values must be >= {minimum}, got {min(items)}")
    return items


def parse_float_list(value, field: str, minimum: float | None = None) -> list[float]:
    if isinstance(value, (int, float)):
        items = [float(value)]
    elif isinstance(value, (list, tuple)):
        items = [float(v) for v in value]
    else:
        try:
            items = [float(p) for p in str(value).split(",")]
        except ValueError:
            raise UsageError(field, f"cannot parse {value!r}") from None
    if minimum is not None and min(items) < minimum:
        raise UsageError(field, f"values must be >= {minimum}")
    return items


def parse_count(value, field: str) -> int:
    try:
        n = int(float(value))
    except (TypeError, ValueError):
        raise UsageError(field, f"cannot parse {value!r}") from None
    if n < 0:
        raise UsageError(field, "must be nonnegative")
    return n


def replicate_seeds(master: int, n: int) -> list[int]:
    """``n`` independent 32-bit seeds derived deterministically from ``master``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def default_output_path(command: str, fmt: str) -> str | None:
    root = os.environ.get(OUTPUT_DIR_ENV)
    if not root:
        return None
    return os.path.join(root, f"{command}.{fmt}")
