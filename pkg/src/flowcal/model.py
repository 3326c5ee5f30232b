"""Frequency-diagonal Wiener velocity models.

The velocity field predicts d(x)/d(sigma) along the straight interpolant
x_sigma = (1-sigma)*x_data + sigma*eps, whose target is (eps - x_data).
For Gaussian data the conditional expectation of that target given
x_sigma is linear and diagonal in the Fourier basis: per frequency bin
with assumed signal power s2, noise power n2 and prior mean m,

    v = A * (c - (1-sigma)*m_hat) - m_hat,
    A = (sigma*n2 - (1-sigma)*s2) / ((1-sigma)^2*s2 + sigma^2*n2),

where c is the bin coefficient and m_hat the transform of the constant
mean.  The conditioning value ``sigma_cond`` enters only through A: it is
what the model *believes* the input's noise level to be, and is the single
knob the calibration module turns.

Three flavors share this formula and differ only in where s2 comes from:

* oracle  -- the true per-bin power of the data distribution at the
  field's own resolution (exact conditional expectation);
* frozen  -- powers indexed by normalized frequency nu = |k|/width with
  parameters fixed at a reference resolution, emulating a model pretrained
  at that resolution and applied elsewhere;
* fitted  -- same parametric family, with parameters learned by
  minimizing the flow-matching loss.

Per-bin powers are expressed in per-pixel-variance units (bin power of a
unit-variance white field = 1) so they compare directly to noise_variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateDataError, DomainError, SizeError, ValidationError
from .grid import DataSpec, Field, freq_index_norm, power_law_spectrum
from .rng import Stream, content_key, generator
from .schedule import SigmaSchedule, linear_schedule

GOLDEN_RATIO = (math.sqrt(5.0) - 1.0) / 2.0

# fit_spectrum search space
_AMP_GRID = np.geomspace(0.01, 100.0, 33)
_ALPHA_GRID = np.linspace(0.0, 4.0, 17)


@dataclass(frozen=True)
class WienerParams:
    """Assumed signal power per normalized frequency: S(nu) = amplitude * nu**(-alpha).

    The DC bin carries the prior mean instead of a power value.
    """

    mean: float
    amplitude: float
    alpha: float

    def __post_init__(self) -> None:
        if not (
            np.isfinite(self.mean) and np.isfinite(self.amplitude) and np.isfinite(self.alpha)
        ):
            raise ValidationError("Wiener parameters must be finite")
        if self.amplitude <= 0:
            raise ValidationError(f"amplitude must be positive, got {self.amplitude}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be nonnegative, got {self.alpha}")


@dataclass(frozen=True)
class Denoiser:
    """Velocity model phi(x, sigma_cond); immutable, evaluation is pure."""

    kind: str  # "oracle" | "frozen" | "fitted"
    spec: DataSpec | None = None
    params: WienerParams | None = None
    ref_width: int | None = None
    ref_height: int | None = None
    noise_variance: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("oracle", "frozen", "fitted"):
            raise ValidationError(f"unknown denoiser kind {self.kind!r}")
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ValidationError("noise_variance must be positive and finite")
        if self.kind == "oracle" and self.spec is None:
            raise ValidationError("oracle denoiser needs a DataSpec")
        if self.kind in ("frozen", "fitted") and self.params is None:
            raise ValidationError(f"{self.kind} denoiser needs WienerParams")
        if self.kind == "frozen" and not (self.ref_width and self.ref_height):
            raise ValidationError("frozen denoiser needs a reference resolution")

    @classmethod
    def oracle(cls, spec: DataSpec, noise_variance: float = 1.0) -> "Denoiser":
        return cls(kind="oracle", spec=spec, noise_variance=noise_variance)

    @classmethod
    def frozen(
        cls, params: WienerParams, ref_width: int, ref_height: int, noise_variance: float = 1.0
    ) -> "Denoiser":
        return cls(
            kind="frozen",
            params=params,
            ref_width=ref_width,
            ref_height=ref_height,
            noise_variance=noise_variance,
        )

    @classmethod
    def fitted(cls, params: WienerParams, noise_variance: float = 1.0) -> "Denoiser":
        return cls(kind="fitted", params=params, noise_variance=noise_variance)

    def prior_mean(self) -> float:
        return self.spec.mean if self.kind == "oracle" else self.params.mean


@lru_cache(maxsize=128)
def _signal_power_grid(d: Denoiser, width: int, height: int) -> np.ndarray:
    """Assumed per-bin signal power (per-pixel units); DC bin is 0 (pure mean).

    A 1x1 grid is the scalar reduction: the single bin holds the full
    variance of the oracle's distribution (a plain Gaussian), or S(nu) has
    no support and the parametric kinds degenerate to the exact-mean model.
    """
    if d.kind == "oracle":
        spec = d.spec
        if width == 1 and height == 1:
            return np.array([[spec.variance]])
        p = power_law_spectrum(width, height, spec.alpha)
        return spec.variance * width * height * p / p.sum()
    params = d.params
    nu = freq_index_norm(width, height) / width
    s2 = np.zeros_like(nu)
    nz = nu > 0
    s2[nz] = params.amplitude * nu[nz] ** (-params.alpha)
    return s2


def reference_params(spec: DataSpec, width: int, height: int) -> WienerParams:
    """Exact WienerParams matching ``spec`` at one resolution.

    frozen(reference_params(spec, w, h), w, h) evaluates identically to
    oracle(spec) on w x h fields; applied at any other size it keeps these
    normalized-frequency statistics, which is the mismatch under study.
    """
    p = power_law_spectrum(width, height, spec.alpha)
    amplitude = spec.variance * width * height / (p.sum() * width**spec.alpha)
    return WienerParams(mean=spec.mean, amplitude=float(amplitude), alpha=spec.alpha)


def wiener_gain(d: Denoiser, width: int, height: int, sigma_cond: float) -> np.ndarray:
    """Per-bin gain A at the given conditioning level (sigma_cond in (0, 1))."""
    s2 = _signal_power_grid(d, width, height)
    n2 = d.noise_variance
    num = sigma_cond * n2 - (1.0 - sigma_cond) * s2
    den = (1.0 - sigma_cond) ** 2 * s2 + sigma_cond**2 * n2
    return num / den


def _velocity_stack(d: Denoiser, stack: np.ndarray, sigma_cond: float) -> np.ndarray:
    """Velocity applied over the last two axes of ``stack`` (shape (..., h, w))."""
    if not (0.0 <= sigma_cond < 1.0):
        raise DomainError(f"sigma_cond must lie in [0, 1), got {sigma_cond}")
    if sigma_cond == 0.0:
        # With a clean input the noise is unconditioned: E[eps - x | x] = -x.
        # The general gain is 0/0 at the DC bin here, so this case is exact,
        # not a numerical fallback.
        return -stack
    h, w = stack.shape[-2], stack.shape[-1]
    gain = wiener_gain(d, w, h, sigma_cond)
    m = d.prior_mean()
    spec = np.fft.fft2(stack, axes=(-2, -1))
    if m != 0.0:
        m_dc = m * w * h
        centered_dc = spec[..., 0, 0] - (1.0 - sigma_cond) * m_dc
        out = gain * spec
        out[..., 0, 0] = gain[0, 0] * centered_dc - m_dc
    else:
        out = gain * spec
    return np.fft.ifft2(out, axes=(-2, -1)).real


def velocity(d: Denoiser, x: Field, sigma_cond: float) -> Field:
    """Predicted d(x)/d(sigma) for input ``x`` believed to sit at ``sigma_cond``."""
    return Field(_velocity_stack(d, x.data, sigma_cond))


_LOSS_DRAWS_PER_SAMPLE = 8


def flow_matching_loss(
    d: Denoiser, samples: list[Field], schedule: SigmaSchedule, seed: int
) -> float:
    """Mean squared velocity-regression error per pixel.

    For each sample, noise levels are drawn uniformly from the schedule's
    entries sigma_0..sigma_{T-1} (stratified across draws, with an exactly
    uniform marginal), each with fresh unit noise; the model velocity at
    that level is compared against (eps - x_data).  The per-sample draws
    are keyed by the sample's content, so duplicated samples contribute
    identical terms and the mean is unchanged.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    shape = samples[0].data.shape
    if any(f.data.shape != shape for f in samples):
        raise SizeError("samples must share one resolution")
    draws = _LOSS_DRAWS_PER_SAMPLE
    total = 0.0
    for f in samples:
        g = generator(seed, Stream.FLOW_LOSS, content_key(f.data))
        for j in range(draws):
            u = (j + g.random()) / draws  # stratum j of an exactly uniform [0,1)
            t = min(int(u * schedule.T), schedule.T - 1)
            sig = float(schedule.sigmas[t])
            eps = g.standard_normal(shape)
            x_sig = (1.0 - sig) * f.data + sig * eps
            residual = _velocity_stack(d, x_sig, sig) - (eps - f.data)
            total += float(np.mean(residual**2))
    return total / (len(samples) * draws)


def _golden_min(fn, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section minimizer on [lo, hi] for a unimodal objective."""
    a, b = lo, hi
    c = b - GOLDEN_RATIO * (b - a)
    e = a + GOLDEN_RATIO * (b - a)
    fc, fe = fn(c), fn(e)
    while abs(b - a) > tol * (1.0 + abs(a) + abs(b)):
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - GOLDEN_RATIO * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, e, fe
            e = a + GOLDEN_RATIO * (b - a)
            fe = fn(e)
    return (a + b) / 2.0


def fit_spectrum(samples: list[Field], noise_variance: float, seed: int) -> WienerParams:
    """Learn (amplitude, alpha, mean) by minimizing the flow-matching loss.

    Coarse log-grid over amplitude in [0.01, 100] and alpha in [0, 4],
    followed by one golden-section refinement pass per axis (amplitude in
    log space, then alpha).  The grid is scanned alpha-major ascending with
    strict improvement, so ties break toward smaller alpha, then smaller
    amplitude.  The mean is the average of the per-sample means.
    """
    if len(samples) < 8:
        raise ValueError(f"need at least 8 samples to fit, got {len(samples)}")
    shape = samples[0].data.shape
    if any(f.data.shape != shape for f in samples):
        raise SizeError("samples must share one resolution")
    mean = float(np.mean([f.data.mean() for f in samples]))
    pooled_var = float(np.mean([f.data.var() for f in samples]))
    if pooled_var <= 1e-12 * (1.0 + mean * mean):
        raise DegenerateDataError("samples have (near-)zero variance; nothing to fit")

    sched = linear_schedule(50)  # internal default; the loss only needs a sigma distribution

    def loss_at(amplitude: float, alpha: float) -> float:
        den = Denoiser.fitted(
            WienerParams(mean=mean, amplitude=amplitude, alpha=alpha),
            noise_variance=noise_variance,
        )
        return flow_matching_loss(den, samples, sched, seed)

    best_loss, amp_best, alpha_best = math.inf, None, None
    for alpha in _ALPHA_GRID:
        for amp in _AMP_GRID:
            val = loss_at(amp, alpha)
            if val < best_loss:
                best_loss, amp_best, alpha_best = val, float(amp), float(alpha)

    # one bounded golden pass per axis, bracketing by one grid step; the
    # refinement is adopted only on strict improvement so the result never
    # falls behind the grid incumbent
    amp_ratio = _AMP_GRID[1] / _AMP_GRID[0]
    log_lo = math.log(max(amp_best / amp_ratio, _AMP_GRID[0]))
    log_hi = math.log(min(amp_best * amp_ratio, _AMP_GRID[-1]))
    amp_cand = math.exp(
        _golden_min(lambda la: loss_at(math.exp(la), alpha_best), log_lo, log_hi)
    )
    cand_loss = loss_at(amp_cand, alpha_best)
    if cand_loss < best_loss:
        best_loss, amp_best = cand_loss, amp_cand

    alpha_step = _ALPHA_GRID[1] - _ALPHA_GRID[0]
    a_lo = max(alpha_best - alpha_step, 0.0)
    a_hi = min(alpha_best + alpha_step, _ALPHA_GRID[-1])
    alpha_cand = _golden_min(lambda a: loss_at(amp_best, a), a_lo, a_hi)
    if loss_at(amp_best, alpha_cand) < best_loss:
        alpha_best = alpha_cand

    return WienerParams(mean=mean, amplitude=float(amp_best), alpha=float(alpha_best))
