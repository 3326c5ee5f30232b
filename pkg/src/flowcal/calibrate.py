"""Per-timestep calibration of the conditioning noise level.

For each step t (walked backward from T-1) the procedure searches for the
conditioning value sigma_tilde minimizing the one-step reverse error
against the forward trajectory, using a coarse window/stride followed by a
fine window/stride around the incumbent.  Candidates are clamped to
[0, sigma_hat_{t+1}] so the calibrated levels stay monotone; the default
sigma_t is always evaluated first, which makes the calibrated loss
non-inferior to the default loss by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import SizeError, ValidationError
from .grid import Field
from .model import Denoiser, _velocity_stack
from .rng import Stream, generator
from .schedule import SigmaSchedule

# conditioning values are searched strictly below 1 (the velocity domain)
_SIGMA_CAP = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class SearchConfig:
    """Coarse/fine window half-widths and strides for the 1-D search."""

    eps_coarse: float = 0.1
    eps_fine: float = 0.01
    stride_coarse: float = 0.02
    stride_fine: float = 0.002

    def __post_init__(self) -> None:
        if not (0.0 < self.eps_fine < self.eps_coarse):
            raise ValidationError("need 0 < eps_fine < eps_coarse")
        if not (0.0 < self.stride_fine < self.stride_coarse):
            raise ValidationError("need 0 < stride_fine < stride_coarse")


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Calibrated conditioning levels sigma_hat_0..sigma_hat_{T-1} for one resolution."""

    width: int
    height: int
    T: int
    schedule_kind: str
    sigmas_hat: np.ndarray
    losses: np.ndarray
    n_samples: int
    seed: int

    def __post_init__(self) -> None:
        hat = np.ascontiguousarray(self.sigmas_hat, dtype=np.float64)
        losses = np.ascontiguousarray(self.losses, dtype=np.float64)
        if len(hat) != self.T or len(losses) != self.T:
            raise ValidationError(f"table arrays must have length T={self.T}")
        if not (np.isfinite(hat).all() and np.isfinite(losses).all()):
            raise ValidationError("table contains non-finite values")
        if hat[0] < 0.0 or hat[-1] > 1.0 or np.any(np.diff(hat) < 0):
            raise ValidationError("sigmas_hat must be nondecreasing within [0, 1]")
        hat.flags.writeable = False
        losses.flags.writeable = False
        object.__setattr__(self, "sigmas_hat", hat)
        object.__setattr__(self, "losses", losses)


def one_step_reverse_loss(
    d: Denoiser,
    x0s: Sequence[Field],
    schedule: SigmaSchedule,
    t: int,
    sigma_tilde: float,
    seed: int,
) -> float:
    """Mean per-pixel error of one reverse Euler step conditioned at sigma_tilde.

    Each clean field is noised to sigma_{t+1} and sigma_t with the *same*
    noise draw (coupled, so the measurement isolates conditioning error
    rather than noise-resampling variance), then the step from x_{t+1} is
    compared against x_t.  Deterministic in (seed, t); all candidate
    conditioning values therefore see identical draws.
    """
    if not x0s:
        raise ValueError("x0s must be non-empty")
    if not (0 <= t < schedule.T):
        raise ValueError(f"t must lie in [0, {schedule.T - 1}], got {t}")
    shape = x0s[0].data.shape
    if any(f.data.shape != shape for f in x0s):
        raise SizeError("x0s must share one resolution")
    sig_t = float(schedule.sigmas[t])
    sig_t1 = float(schedule.sigmas[t + 1])
    x0 = np.stack([f.data for f in x0s])
    eps = np.stack(
        [
            generator(seed, Stream.CALIBRATION, t, i).standard_normal(shape)
            for i in range(len(x0s))
        ]
    )
    x_t = (1.0 - sig_t) * x0 + sig_t * eps
    x_t1 = (1.0 - sig_t1) * x0 + sig_t1 * eps
    x_hat = x_t1 + _velocity_stack(d, x_t1, sigma_tilde) * (sig_t - sig_t1)
    return float(np.mean((x_hat - x_t) ** 2))


def _candidates(lo: float, hi: float, stride: float) -> list[float]:
    if hi < lo:
        return []
    count = int(math.floor((hi - lo) / stride + 1e-9)) + 1
    # clip against hi: rounding may push the last point a few ulp past the
    # window edge, which would leak candidates above the monotonic bound
    pts = [min(lo + j * stride, hi) for j in range(count)]
    # the window edge itself is admissible; when the stride grid stops short
    # of it (a clamped window), append it so the bound stays reachable
    if hi - pts[-1] > 1e-12:
        pts.append(hi)
    return [p for p in pts if p < 1.0]


def coarse_to_fine_search(
    loss_fn: Callable[[float], float],
    center: float,
    upper: float,
    cfg: SearchConfig,
) -> tuple[float, float, bool]:
    """Two-stage grid minimization of ``loss_fn`` around ``center`` within [0, upper].

    Returns (argmin, loss, degraded).  The default ``center`` (clamped into
    range) is evaluated first and only strict improvements replace it;
    candidates are swept in ascending order, so ties resolve to the
    smallest value.  If the coarse window is empty (upper below the window
    start) the clamped default is returned with ``degraded`` set.
    """
    default = min(center, upper, _SIGMA_CAP)
    default = max(default, 0.0)
    best_sigma, best_loss = default, loss_fn(default)

    lo_c = max(0.0, center - cfg.eps_coarse)
    hi_c = min(upper, center + cfg.eps_coarse)
    if hi_c < lo_c:
        return best_sigma, best_loss, True

    for cand in _candidates(lo_c, hi_c, cfg.stride_coarse):
        val = loss_fn(cand)
        if val < best_loss:
            best_sigma, best_loss = cand, val

    lo_f = max(0.0, best_sigma - cfg.eps_fine)
    hi_f = min(upper, best_sigma + cfg.eps_fine)
    for cand in _candidates(lo_f, hi_f, cfg.stride_fine):
        val = loss_fn(cand)
        if val < best_loss:
            best_sigma, best_loss = cand, val

    return best_sigma, best_loss, False


def calibrate_step(
    d: Denoiser,
    x0s: Sequence[Field],
    schedule: SigmaSchedule,
    t: int,
    upper: float,
    cfg: SearchConfig,
    seed: int,
) -> tuple[float, float, bool]:
    """Calibrated conditioning for step t under the monotonic bound ``upper``."""

    def loss_fn(sigma_tilde: float) -> float:
        return one_step_reverse_loss(d, x0s, schedule, t, sigma_tilde, seed)

    return coarse_to_fine_search(loss_fn, float(schedule.sigmas[t]), upper, cfg)


def calibrate_schedule(
    d: Denoiser,
    x0s: Sequence[Field],
    schedule: SigmaSchedule,
    cfg: SearchConfig,
    seed: int,
) -> CalibrationTable:
    """Backward recursion over all steps, threading each result as the next bound.

    The bound starts at sigma_T = 1; each calibrated value becomes the
    upper clamp for the step below it, so the finished table is monotone by
    construction.
    """
    if not x0s:
        raise ValueError("x0s must be non-empty")
    shape = x0s[0].data.shape
    if any(f.data.shape != shape for f in x0s):
        raise SizeError("x0s must share one resolution")
    T = schedule.T
    sig_hat = np.empty(T)
    losses = np.empty(T)
    upper = float(schedule.sigmas[T])
    for t in range(T - 1, -1, -1):
        s, loss, degraded = calibrate_step(d, x0s, schedule, t, upper, cfg, seed)
        if degraded:
            print(f"calibrate: step {t} had an empty candidate range; kept clamped default")
        sig_hat[t] = s
        losses[t] = loss
        upper = s
    height, width = shape
    return CalibrationTable(
        width=width,
        height=height,
        T=T,
        schedule_kind=schedule.kind,
        sigmas_hat=sig_hat,
        losses=losses,
        n_samples=len(x0s),
        seed=seed,
    )


_TABLE_FIELDS = (
    "width",
    "height",
    "T",
    "schedule_kind",
    "sigmas_hat",
    "losses",
    "n_samples",
    "seed",
)


def save_table(table: CalibrationTable, path: str | Path) -> None:
    doc = {
        "width": table.width,
        "height": table.height,
        "T": table.T,
        "schedule_kind": table.schedule_kind,
        "sigmas_hat": [float(s) for s in table.sigmas_hat],
        "losses": [float(v) for v in table.losses],
        "n_samples": table.n_samples,
        "seed": table.seed,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_table(path: str | Path) -> CalibrationTable:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed table JSON: {exc}") from exc
    for key in _TABLE_FIELDS:
        if key not in doc:
            raise ValidationError(f"{path}: table document missing field '{key}'")
    return CalibrationTable(
        width=int(doc["width"]),
        height=int(doc["height"]),
        T=int(doc["T"]),
        schedule_kind=str(doc["schedule_kind"]),
        sigmas_hat=np.asarray(doc["sigmas_hat"], dtype=np.float64),
        losses=np.asarray(doc["losses"], dtype=np.float64),
        n_samples=int(doc["n_samples"]),
        seed=int(doc["seed"]),
    )


def table_path(root: str | Path, schedule_kind: str, width: int, height: int) -> Path:
    """Storage convention: <root>/<schedule_kind>/<width>x<height>.json."""
    return Path(root) / schedule_kind / f"{width}x{height}.json"
