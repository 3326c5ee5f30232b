"""Run configuration: flat key-value files, environment overrides, CLI flags.

Config files use dotted keys, one assignment per line::

    data.alpha = 2.0
    schedule.kind = shifted
    eval_resolutions = 8, 16, 32

Environment variables override file values: uppercase the dotted key,
replace dots with underscores, and prefix with ``FLOWCAL_`` (for example
``FLOWCAL_SCHEDULE_KIND=linear``).  Command-line flags override both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .calibrate import SearchConfig
from .errors import ConfigError, ValidationError
from .grid import DataSpec
from .schedule import (
    SigmaSchedule,
    linear_schedule,
    shifted_schedule,
    time_shifted_schedule,
)

ENV_PREFIX = "FLOWCAL_"

DEFAULTS: dict[str, str] = {
    "data.mean": "0.0",
    "data.variance": "1.0",
    "data.alpha": "2.0",
    "ref_resolution": "64",
    "eval_resolutions": "8, 16, 32",
    "schedule.kind": "linear",
    "schedule.T": "50",
    "schedule.shift": "3.0",
    "search.eps_coarse": "0.1",
    "search.eps_fine": "0.01",
    "search.stride_coarse": "0.02",
    "search.stride_fine": "0.002",
    "n_calibration": "64",
    "n_eval": "256",
    "seed": "20250809",
    "output_dir": "out",
}

_SCHEDULE_KINDS = ("linear", "shifted", "time_shifted")


@dataclass(frozen=True)
class RunConfig:
    data: DataSpec
    ref_resolution: int
    eval_resolutions: tuple[int, ...]
    schedule_kind: str
    schedule_T: int
    schedule_shift: float
    search: SearchConfig = field(default_factory=SearchConfig)
    n_calibration: int = 64
    n_eval: int = 256
    seed: int = 20250809
    output_dir: Path = Path("out")


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _env_overrides(env: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for key in DEFAULTS:
        env_name = ENV_PREFIX + key.upper().replace(".", "_")
        if env_name in env:
            out[key] = env[env_name]
    return out


def _parse_int(values: Mapping[str, str], key: str) -> int:
    try:
        return int(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {values[key]!r}") from exc


def _parse_float(values: Mapping[str, str], key: str) -> float:
    try:
        return float(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {values[key]!r}") from exc


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def load_run_config(
    config_path: str | Path | None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults < file < environment < explicit overrides, then validate."""
    values = dict(DEFAULTS)
    if config_path is not None:
        values.update(parse_config_file(config_path))
    if env is not None:
        values.update(_env_overrides(env))
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val

    try:
        data = DataSpec(
            mean=_parse_float(values, "data.mean"),
            variance=_parse_float(values, "data.variance"),
            alpha=_parse_float(values, "data.alpha"),
        )
        search = SearchConfig(
            eps_coarse=_parse_float(values, "search.eps_coarse"),
            eps_fine=_parse_float(values, "search.eps_fine"),
            stride_coarse=_parse_float(values, "search.stride_coarse"),
            stride_fine=_parse_float(values, "search.stride_fine"),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    ref = _parse_int(values, "ref_resolution")
    try:
        evals = tuple(
            int(part.strip()) for part in values["eval_resolutions"].split(",") if part.strip()
        )
    except ValueError as exc:
        raise ConfigError(
            f"eval_resolutions: expected comma-separated integers, got "
            f"{values['eval_resolutions']!r}"
        ) from exc
    for r in (ref, *evals):
        if not _is_pow2(r):
            raise ConfigError(f"resolutions must be powers of two >= 2, got {r}")
    if not evals:
        raise ConfigError("eval_resolutions must name at least one resolution")

    kind = values["schedule.kind"]
    if kind not in _SCHEDULE_KINDS:
        raise ConfigError(f"schedule.kind must be one of {_SCHEDULE_KINDS}, got {kind!r}")
    T = _parse_int(values, "schedule.T")
    if T < 1:
        raise ConfigError(f"schedule.T must be >= 1, got {T}")
    shift = _parse_float(values, "schedule.shift")
    if shift <= 0:
        raise ConfigError(f"schedule.shift must be positive, got {shift}")

    n_cal = _parse_int(values, "n_calibration")
    if n_cal < 1:
        raise ConfigError(f"n_calibration must be >= 1, got {n_cal}")
    n_eval = _parse_int(values, "n_eval")
    if n_eval < 16:
        raise ConfigError(f"n_eval must be >= 16, got {n_eval}")

    return RunConfig(
        data=data,
        ref_resolution=ref,
        eval_resolutions=evals,
        schedule_kind=kind,
        schedule_T=T,
        schedule_shift=shift,
        search=search,
        n_calibration=n_cal,
        n_eval=n_eval,
        seed=_parse_int(values, "seed"),
        output_dir=Path(values["output_dir"]),
    )


def build_schedule(cfg: RunConfig, resolution: int) -> SigmaSchedule:
    """Schedule for sampling at ``resolution``; only time_shifted varies with it."""
    if cfg.schedule_kind == "linear":
        return linear_schedule(cfg.schedule_T)
    if cfg.schedule_kind == "shifted":
        return shifted_schedule(cfg.schedule_T, cfg.schedule_shift)
    return time_shifted_schedule(
        cfg.schedule_T,
        cfg.schedule_shift,
        ref_pixels=cfg.ref_resolution * cfg.ref_resolution,
        target_pixels=resolution * resolution,
    )
