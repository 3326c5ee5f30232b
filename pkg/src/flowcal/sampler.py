"""Forward noising and deterministic Euler reverse sampling.

The reverse update stepping the state from sigma_from down to sigma_to is

    x <- x + phi(x, sigma_cond) * (sigma_to - sigma_from),

with the conditioning level sigma_cond deliberately decoupled from the pair
(sigma_from, sigma_to): standard sampling conditions each step on the
*target* level sigma_t, while a calibration table substitutes per-step
values chosen to minimize one-step reverse error.  That substitution is the
whole intervention; the schedule itself is never altered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, SizeError, ValidationError
from .grid import Field, load_field, save_field
from .model import Denoiser, _velocity_stack
from .rng import Stream, generator, mix64
from .schedule import SigmaSchedule

# the optional `table` arguments accept any object with the CalibrationTable
# attributes (T, schedule_kind, width, height, sigmas_hat); keeping the
# parameter duck-typed avoids importing the calibration layer from here


@dataclass(frozen=True)
class Trajectory:
    """Forward-noised states x_0..x_T of one clean field."""

    fields: tuple[Field, ...]
    schedule: SigmaSchedule
    seed: int

    def __post_init__(self) -> None:
        if len(self.fields) != self.schedule.T + 1:
            raise ValidationError("trajectory length must be T+1")
        shape = self.fields[0].data.shape
        if any(f.data.shape != shape for f in self.fields):
            raise SizeError("trajectory fields must share one resolution")


def add_noise(x0: Field, sigma: float, seed: int) -> Field:
    """Interpolant sample (1-sigma)*x0 + sigma*eps with unit Gaussian eps."""
    if not (0.0 <= sigma <= 1.0):
        raise DomainError(f"sigma must lie in [0, 1], got {sigma}")
    if sigma == 0.0:
        return x0  # bit-exact clean endpoint
    eps = generator(seed, Stream.NOISE).standard_normal(x0.data.shape)
    return Field((1.0 - sigma) * x0.data + sigma * eps)


def forward_trajectory(x0: Field, schedule: SigmaSchedule, seed: int) -> Trajectory:
    """Noised states at every schedule level, sub-seeded per step."""
    fields = tuple(
        add_noise(x0, float(schedule.sigmas[t]), mix64(seed, Stream.TRAJECTORY, t))
        for t in range(schedule.T + 1)
    )
    return Trajectory(fields=fields, schedule=schedule, seed=seed)


def euler_step(
    x: Field, sigma_from: float, sigma_to: float, sigma_cond: float, d: Denoiser
) -> Field:
    """One reverse Euler step from sigma_from down to sigma_to."""
    if not (0.0 <= sigma_to <= sigma_from <= 1.0):
        raise DomainError(
            f"need 0 <= sigma_to <= sigma_from <= 1, got {sigma_to}, {sigma_from}"
        )
    if sigma_to == sigma_from:
        return x
    v = _velocity_stack(d, x.data, sigma_cond)
    return Field(x.data + v * (sigma_to - sigma_from))


def _conditioning(schedule: SigmaSchedule, table, width: int, height: int) -> np.ndarray:
    """Per-step conditioning levels c_0..c_{T-1}; validates any table."""
    if table is None:
        return schedule.sigmas[:-1].copy()
    if table.T != schedule.T:
        raise ValidationError(f"table T={table.T} does not match schedule T={schedule.T}")
    if table.schedule_kind != schedule.kind:
        raise ValidationError(
            f"table schedule kind {table.schedule_kind!r} does not match {schedule.kind!r}"
        )
    if (table.width, table.height) != (width, height):
        raise ValidationError(
            f"table is for {table.width}x{table.height}, sampling at {width}x{height}"
        )
    return np.asarray(table.sigmas_hat, dtype=np.float64)


def _run_reverse(
    d: Denoiser, schedule: SigmaSchedule, conds: np.ndarray, stack: np.ndarray
) -> np.ndarray:
    sig = schedule.sigmas
    for t in range(schedule.T - 1, -1, -1):
        v = _velocity_stack(d, stack, float(conds[t]))
        stack = stack + v * (sig[t] - sig[t + 1])
    return stack


def sample(
    d: Denoiser,
    schedule: SigmaSchedule,
    table,
    width: int,
    height: int,
    seed: int,
) -> Field:
    """Integrate the reverse ODE from pure noise; deterministic in seed.

    ``table`` is an optional CalibrationTable; absent, every step uses the
    default conditioning sigma_t and the result equals sampling with a
    table filled with the schedule values.
    """
    conds = _conditioning(schedule, table, width, height)
    x_init = generator(seed, Stream.INIT).standard_normal((height, width))
    return Field(_run_reverse(d, schedule, conds, x_init))


def sample_batch(
    d: Denoiser,
    schedule: SigmaSchedule,
    table,
    width: int,
    height: int,
    n: int,
    seed: int,
) -> list[Field]:
    """n independent samples, vectorized over the batch.

    Sample i uses the initial noise of per-sample seed mix64(seed, i); all
    steps are applied to the whole stack at once, which matches the
    single-sample path bit-for-bit because the velocity is computed
    slice-independently.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    conds = _conditioning(schedule, table, width, height)
    stack = np.stack(
        [
            generator(mix64(seed, i), Stream.INIT).standard_normal((height, width))
            for i in range(n)
        ]
    )
    out = _run_reverse(d, schedule, conds, stack)
    return [Field(out[i]) for i in range(n)]


def save_trajectory(traj: Trajectory, directory: str | Path) -> None:
    """Write one field binary per step plus an index JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for t, f in enumerate(traj.fields):
        name = f"step_{t:04d}.fld"
        save_field(f, directory / name)
        names.append(name)
    index = {
        "fields": names,
        "width": traj.fields[0].width,
        "height": traj.fields[0].height,
        "T": traj.schedule.T,
        "schedule_kind": traj.schedule.kind,
        "sigmas": [float(s) for s in traj.schedule.sigmas],
        "seed": traj.seed,
    }
    (directory / "index.json").write_text(json.dumps(index, indent=2) + "\n")


def load_trajectory_fields(directory: str | Path) -> list[Field]:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{directory}: unreadable trajectory index: {exc}") from exc
    if "fields" not in index:
        raise ValidationError(f"{directory}: index missing field 'fields'")
    return [load_field(directory / name) for name in index["fields"]]
