"""Measurement apparatus: reverse-error curves, SSIM, spectral Fréchet distance.

These are the read-outs demonstrating the resolution effect: how the same
noise level degrades structure more at lower resolutions, how one-step
forward/reverse error grows under resolution mismatch, and how generated
batches compare to reference batches in distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SizeError, ValidationError
from .grid import DataSpec, Field, box_downsample, freq_index_norm, grf_sample
from .model import Denoiser
from .rng import Stream, mix64
from .sampler import add_noise, sample_batch
from .schedule import SigmaSchedule
from .calibrate import one_step_reverse_loss

SSIM_WINDOW = 8


@dataclass(frozen=True, eq=False)
class Curve:
    """A labelled series of (x, y) points with strictly increasing x."""

    xs: np.ndarray
    ys: np.ndarray
    label: str

    def __post_init__(self) -> None:
        xs = np.ascontiguousarray(self.xs, dtype=np.float64)
        ys = np.ascontiguousarray(self.ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValidationError("curve xs and ys must be 1-D arrays of equal length")
        if np.any(np.diff(xs) <= 0):
            raise ValidationError("curve xs must be strictly increasing")
        if "," in self.label or "\n" in self.label:
            raise ValidationError("curve labels must not contain commas or newlines")
        xs.flags.writeable = False
        ys.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Sufficient statistics of a stationary Gaussian batch: mean + radial-bin variances."""

    mean: float
    variances: np.ndarray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.variances, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("variances must be a non-empty 1-D array")
        if np.any(v < 0) or not np.isfinite(v).all():
            raise ValidationError("variances must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "variances", v)


def reverse_mse_curve(
    d: Denoiser, x0s: Sequence[Field], schedule: SigmaSchedule, seed: int
) -> Curve:
    """One-step reverse error at every step under default conditioning sigma_t."""
    ys = np.array(
        [
            one_step_reverse_loss(d, x0s, schedule, t, float(schedule.sigmas[t]), seed)
            for t in range(schedule.T)
        ]
    )
    w, h = x0s[0].width, x0s[0].height
    return Curve(np.arange(schedule.T, dtype=float), ys, label=f"{d.kind}-{w}x{h}")


def _window_sums(a: np.ndarray, w: int) -> np.ndarray:
    """Sums of all w x w sliding windows via an integral image."""
    s = np.cumsum(np.cumsum(a, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    return s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]


def ssim(a: Field, b: Field, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all sliding windows, in [-1, 1].

    Uniform window weighting.  The dynamic range is estimated as six pooled
    standard deviations of the two inputs (symmetric in the arguments, so
    ssim(a, b) == ssim(b, a) exactly); stabilizers are C1 = (0.01 L)^2 and
    C2 = (0.03 L)^2.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise SizeError(f"fields differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    if a.width < window or a.height < window:
        raise SizeError(f"fields must be at least {window}x{window}")
    dyn_range = 6.0 * np.sqrt((a.data.var() + b.data.var()) / 2.0)
    dyn_range = max(dyn_range, 1e-12)  # keeps constant inputs well-defined
    c1 = (0.01 * dyn_range) ** 2
    c2 = (0.03 * dyn_range) ** 2
    n = window * window
    mu_a = _window_sums(a.data, window) / n
    mu_b = _window_sums(b.data, window) / n
    var_a = np.maximum(_window_sums(a.data**2, window) / n - mu_a**2, 0.0)
    var_b = np.maximum(_window_sums(b.data**2, window) / n - mu_b**2, 0.0)
    cov = _window_sums(a.data * b.data, window) / n - mu_a * mu_b
    score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def ssim_noise_curve(
    spec: DataSpec,
    resolutions: Sequence[int],
    sigma_grid: Sequence[float],
    n: int,
    seed: int,
) -> list[Curve]:
    """SSIM between clean and forward-noised fields, per resolution.

    Each sample is one random field drawn at the largest requested
    resolution and box-downsampled to the others, so the curves compare
    resolutions of the same underlying realization rather than independent
    redraws.  Noise draws are fresh per (sample, resolution, sigma).
    """
    if any(not 0.0 <= s <= 1.0 for s in sigma_grid):
        raise ValueError("sigma_grid values must lie in [0, 1]")
    base = max(resolutions)
    curves = []
    samples = [grf_sample(spec, base, base, mix64(seed, Stream.DATA, j)) for j in range(n)]
    for r in sorted(resolutions):
        down = [box_downsample(s, base // r) for s in samples]
        ys = []
        for i, sig in enumerate(sigma_grid):
            vals = [
                ssim(x0, add_noise(x0, sig, mix64(seed, Stream.NOISE, j, r, i)))
                for j, x0 in enumerate(down)
            ]
            ys.append(float(np.mean(vals)))
        curves.append(Curve(np.asarray(sigma_grid, dtype=float), np.array(ys), label=f"{r}x{r}"))
    return curves


def gaussian_stats(fields: Sequence[Field]) -> GaussianStats:
    """Pooled mean plus variance per radial frequency bin, averaged over fields.

    Bins are integer-rounded |k| for 0..width//2, with corner modes beyond
    the Nyquist ring folded into the last bin so the variances sum to the
    full (mean-removed) per-pixel variance.
    """
    if len(fields) < 2:
        raise ValueError(f"need at least 2 fields, got {len(fields)}")
    shape = fields[0].data.shape
    if any(f.data.shape != shape for f in fields):
        raise SizeError("fields must share one resolution")
    h, w = shape
    n = w * h
    pooled_mean = float(np.mean([f.data.mean() for f in fields]))
    nbins = w // 2 + 1
    rings = np.minimum(np.rint(freq_index_norm(w, h)).astype(int), nbins - 1)
    acc = np.zeros(nbins)
    for f in fields:
        power = np.abs(np.fft.fft2(f.data - pooled_mean)) ** 2 / n**2
        acc += np.bincount(rings.ravel(), weights=power.ravel(), minlength=nbins)
    return GaussianStats(mean=pooled_mean, variances=acc / len(fields))


def gaussian_frechet(a: GaussianStats, b: GaussianStats) -> float:
    """2-Wasserstein distance between diagonal Gaussians with the given stats."""
    if a.variances.shape != b.variances.shape:
        raise SizeError(
            f"bin counts differ: {a.variances.size} vs {b.variances.size}"
        )
    gap = (a.mean - b.mean) ** 2 + np.sum(
        (np.sqrt(a.variances) - np.sqrt(b.variances)) ** 2
    )
    return float(np.sqrt(gap))


def eval_generation(
    d: Denoiser,
    schedule: SigmaSchedule,
    table,
    spec: DataSpec,
    width: int,
    height: int,
    n: int,
    seed: int,
) -> dict:
    """Fréchet distance of n generated samples against n reference draws."""
    if n < 16:
        raise ValueError(f"n must be >= 16, got {n}")
    generated = sample_batch(d, schedule, table, width, height, n, mix64(seed, Stream.GENERATION))
    reference = [
        grf_sample(spec, width, height, mix64(seed, Stream.REFERENCE, i)) for i in range(n)
    ]
    fd = gaussian_frechet(gaussian_stats(generated), gaussian_stats(reference))
    key = "fd_calibrated" if table is not None else "fd_default"
    return {key: fd, "resolution": f"{width}x{height}", "n": n, "seed": seed}


def write_curves_csv(path: str | Path, curves: Sequence[Curve]) -> None:
    """Schema: header ``x,y,label``, one row per point, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("x,y,label\n")
        for c in curves:
            for x, y in zip(c.xs, c.ys):
                fh.write(f"{x:.17g},{y:.17g},{c.label}\n")


def read_curves_csv(path: str | Path) -> list[Curve]:
    by_label: dict[str, tuple[list[float], list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x", "y", "label"]:
            raise ValidationError(f"{path}: expected header x,y,label, got {header}")
        for row in reader:
            xs, ys = by_label.setdefault(row[2], ([], []))
            xs.append(float(row[0]))
            ys.append(float(row[1]))
    return [Curve(np.array(xs), np.array(ys), label) for label, (xs, ys) in by_label.items()]


_SVG_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
)


def write_curves_svg(path: str | Path, curves: Sequence[Curve], title: str = "") -> None:
    """Minimal line plot: fixed 800x600 viewBox, one polyline per curve.

    Presentation-only output for eyeballing results; carries no precision
    guarantees.
    """
    width, height, margin = 800, 600, 60
    xs_all = np.concatenate([c.xs for c in curves])
    ys_all = np.concatenate([c.ys for c in curves])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x: float) -> float:
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y: float) -> float:
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{margin}" y="{height - margin + 30}" font-size="14">{x_lo:.4g}</text>',
        f'<text x="{width - margin - 40}" y="{height - margin + 30}" font-size="14">'
        f"{x_hi:.4g}</text>",
        f'<text x="5" y="{height - margin}" font-size="14">{y_lo:.4g}</text>',
        f'<text x="5" y="{margin}" font-size="14">{y_hi:.4g}</text>',
    ]
    if title:
        parts.append(f'<text x="{width // 2 - 80}" y="25" font-size="16">{title}</text>')
    for i, c in enumerate(curves):
        color = _SVG_PALETTE[i % len(_SVG_PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(c.xs, c.ys))
        parts.append(f'<polyline fill="none" stroke="{color}" points="{points}"/>')
        parts.append(
            f'<text x="{width - margin - 160}" y="{margin + 20 * (i + 1)}" '
            f'font-size="14" fill="{color}">{c.label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
