"""Sampling noise schedules.

Convention: sigmas[0] = 0 is clean data, sigmas[T] = 1 is pure noise, and
values increase strictly with the index.  Reverse sampling walks t = T-1..0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DomainError, ValidationError

DEFAULT_STEPS = 50


@dataclass(frozen=True, eq=False)
class SigmaSchedule:
    """Ordered noise levels sigma_0..sigma_T with construction metadata."""

    sigmas: np.ndarray
    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.sigmas, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValidationError("schedule needs at least two sigma values")
        if not np.isfinite(arr).all():
            raise ValidationError("schedule contains non-finite sigmas")
        if arr[0] != 0.0 or arr[-1] != 1.0:
            raise ValidationError(f"schedule endpoints must be 0 and 1, got {arr[0]}, {arr[-1]}")
        if not np.all(np.diff(arr) > 0):
            raise ValidationError("schedule sigmas must be strictly increasing")
        arr.flags.writeable = False
        object.__setattr__(self, "sigmas", arr)

    @property
    def T(self) -> int:
        return len(self.sigmas) - 1


def linear_schedule(T: int) -> SigmaSchedule:
    """sigma_t = t / T."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    return SigmaSchedule(np.arange(T + 1) / T, kind="linear")


def shifted_schedule(T: int, shift: float) -> SigmaSchedule:
    """Non-linear warp sigma = shift*u / (1 + (shift-1)*u) of the linear grid.

    shift > 1 biases sampling toward high noise levels (pointwise above the
    linear schedule), shift < 1 toward low ones; shift = 1 is the identity.
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if not (shift > 0 and np.isfinite(shift)):
        raise DomainError(f"shift must be positive and finite, got {shift}")
    u = np.arange(T + 1) / T
    sig = shift * u / (1.0 + (shift - 1.0) * u)
    # pin endpoints against rounding so the invariant holds exactly
    sig[0], sig[-1] = 0.0, 1.0
    return SigmaSchedule(sig, kind="shifted", params={"shift": float(shift)})


def resolution_shift(base_shift: float, ref_pixels: int, target_pixels: int) -> float:
    """Resolution-dependent shift: linear in pixel count, identity at the reference."""
    if ref_pixels <= 0 or target_pixels <= 0:
        raise DomainError("pixel counts must be positive")
    if not (base_shift > 0 and np.isfinite(base_shift)):
        raise DomainError(f"base_shift must be positive and finite, got {base_shift}")
    return base_shift * (target_pixels / ref_pixels)


def time_shifted_schedule(
    T: int, base_shift: float, ref_pixels: int, target_pixels: int
) -> SigmaSchedule:
    """Shifted schedule whose shift scales with the target resolution."""
    s = resolution_shift(base_shift, ref_pixels, target_pixels)
    warped = shifted_schedule(T, s)
    return SigmaSchedule(
        warped.sigmas,
        kind="time_shifted",
        params={
            "base_shift": float(base_shift),
            "ref_pixels": float(ref_pixels),
            "target_pixels": float(target_pixels),
            "shift": float(s),
        },
    )


def to_json_dict(schedule: SigmaSchedule) -> dict[str, Any]:
    return {
        "kind": schedule.kind,
        "T": schedule.T,
        "params": dict(schedule.params),
        "sigmas": [float(s) for s in schedule.sigmas],
    }


def from_json_dict(doc: Mapping[str, Any]) -> SigmaSchedule:
    for key in ("kind", "T", "params", "sigmas"):
        if key not in doc:
            raise ValidationError(f"schedule document missing field '{key}'")
    sigmas = np.asarray(doc["sigmas"], dtype=np.float64)
    if len(sigmas) != int(doc["T"]) + 1:
        raise ValidationError("schedule sigmas length does not match T")
    return SigmaSchedule(sigmas, kind=str(doc["kind"]), params=dict(doc["params"]))


def save_schedule(schedule: SigmaSchedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(schedule), indent=2) + "\n")


def load_schedule(path: str | Path) -> SigmaSchedule:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed schedule JSON: {exc}") from exc
    return from_json_dict(doc)
