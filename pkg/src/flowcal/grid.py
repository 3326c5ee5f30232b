"""2-D real-valued grids and Gaussian-random-field synthesis.

Fields are immutable float64 grids.  The synthetic data distribution is a
stationary Gaussian random field with a power-law radial spectrum
P(k) ~ k**(-alpha) for k != 0; the k = 0 bin carries the pure mean.  Fields
of this family stand in for image data: their per-frequency statistics are
known exactly, so every downstream behavior has a closed-form oracle.

FFT normalization (fixed throughout the package): forward transform is
unnormalized, the inverse divides by N = width*height.  Parseval under this
convention reads  sum|x|^2 = (1/N) * sum|X|^2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericalError, SizeError, ValidationError
from .rng import Stream, generator

FIELD_MAGIC = 0x31444C46  # ascii "FLD1", little-endian
_HEADER = struct.Struct("<IIII")  # magic, width, height, reserved


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def _require_pow2(width: int, height: int) -> None:
    if not (_is_pow2(width) and _is_pow2(height)):
        raise SizeError(f"grid dimensions must be powers of two >= 2, got {width}x{height}")


@dataclass(frozen=True, eq=False)
class Field:
    """A width x height grid of finite float64 values, immutable once built."""

    data: np.ndarray  # shape (height, width), row-major

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise SizeError(f"field data must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericalError("field contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def flat(self) -> np.ndarray:
        """Row-major flattened copy of the values."""
        return self.data.ravel().copy()


@dataclass(frozen=True)
class DataSpec:
    """Gaussian-random-field distribution: DC level, total power, spectral exponent."""

    mean: float
    variance: float
    alpha: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.mean) and np.isfinite(self.variance) and np.isfinite(self.alpha)):
            raise ValidationError("data spec values must be finite")
        if self.variance <= 0:
            raise ValidationError(f"variance must be positive, got {self.variance}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be nonnegative, got {self.alpha}")


def freq_index_norm(width: int, height: int) -> np.ndarray:
    """Euclidean norm of signed integer frequency indices, shape (height, width)."""
    kx = np.fft.fftfreq(width) * width
    ky = np.fft.fftfreq(height) * height
    return np.hypot(kx[np.newaxis, :], ky[:, np.newaxis])


def power_law_spectrum(width: int, height: int, alpha: float) -> np.ndarray:
    """Unnormalized spectral weights k**(-alpha) with the DC bin zeroed."""
    k = freq_index_norm(width, height)
    p = np.zeros_like(k)
    nz = k > 0
    p[nz] = k[nz] ** (-alpha)
    return p


def grf_sample(spec: DataSpec, width: int, height: int, seed: int) -> Field:
    """Draw one stationary Gaussian random field.

    White noise is shaped in the frequency domain by sqrt(P(k)), with the
    scale chosen so the expected per-pixel variance equals ``spec.variance``
    exactly; the DC bin is zeroed and the mean added back as a constant.
    Deterministic in ``seed``.
    """
    _require_pow2(width, height)
    n = width * height
    white = generator(seed, Stream.GRF).standard_normal((height, width))
    p = power_law_spectrum(width, height, spec.alpha)
    scale = np.sqrt(n * spec.variance * p / p.sum())
    shaped = np.fft.ifft2(np.fft.fft2(white) * scale).real
    return Field(shaped + spec.mean)


def box_downsample(x: Field, factor: int) -> Field:
    """Average factor x factor blocks; preserves the field mean exactly."""
    if factor < 1:
        raise SizeError(f"downsample factor must be >= 1, got {factor}")
    if x.width % factor or x.height % factor:
        raise SizeError(f"factor {factor} does not divide {x.width}x{x.height}")
    h, w = x.height // factor, x.width // factor
    blocks = x.data.reshape(h, factor, w, factor)
    return Field(blocks.mean(axis=(1, 3)))


def fft2(x: Field) -> np.ndarray:
    """Unnormalized forward 2-D FFT of a power-of-two field."""
    _require_pow2(x.width, x.height)
    return np.fft.fft2(x.data)


def ifft2(spectrum: np.ndarray) -> Field:
    """Inverse 2-D FFT (divides by N); returns the real part as a Field."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2:
        raise SizeError(f"spectrum must be 2-D, got shape {spectrum.shape}")
    h, w = spectrum.shape
    _require_pow2(w, h)
    return Field(np.fft.ifft2(spectrum).real)


def field_stats(x: Field) -> tuple[float, float]:
    """Population mean and variance (divide by N)."""
    mean = float(x.data.mean())
    var = float(x.data.var())
    return mean, var


def radial_power_spectrum(x: Field) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-bin power over rings of rounded |k|, rings 1..width//2.

    Power is |X_k|^2 / N per bin so that a unit-variance white field has
    ring powers near 1.  The DC bin and partially aliased corner rings
    (|k| > width//2) are excluded; this is the estimator used for slope
    fitting, not the variance-complete binning used by diagnostics.
    """
    spec = np.abs(fft2(x)) ** 2 / (x.width * x.height)
    rings = np.rint(freq_index_norm(x.width, x.height)).astype(int)
    kmax = min(x.width, x.height) // 2
    ks = np.arange(1, kmax + 1)
    power = np.array([spec[rings == k].mean() for k in ks])
    return ks.astype(float), power


def spectrum_slope(fields: Sequence[Field]) -> float:
    """Log-log least-squares slope of the ring power pooled over fields."""
    if not fields:
        raise ValueError("need at least one field")
    ks, acc = radial_power_spectrum(fields[0])
    for f in fields[1:]:
        ks2, p = radial_power_spectrum(f)
        if ks2.shape != ks.shape:
            raise SizeError("fields must share one resolution")
        acc = acc + p
    mean_power = acc / len(fields)
    if np.any(mean_power <= 0):
        raise ValueError("ring power vanished; cannot fit a log-log slope")
    slope = np.polyfit(np.log(ks), np.log(mean_power), 1)[0]
    return float(slope)


def save_field(x: Field, path: str | Path) -> None:
    """Write the flat binary format: 16-byte header + little-endian float64s."""
    payload = _HEADER.pack(FIELD_MAGIC, x.width, x.height, 0)
    payload += x.data.astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def load_field(path: str | Path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated field file")
    magic, width, height, _ = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise ValidationError(f"{path}: bad magic 0x{magic:08X}")
    expected = _HEADER.size + 8 * width * height
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(height, width)
    return Field(data.astype(np.float64))


def write_field_csv(x: Field, path: str | Path) -> None:
    """Debug export: one grid row per line, 17 significant digits."""
    lines = (",".join(f"{v:.17g}" for v in row) for row in x.data)
    Path(path).write_text("\n".join(lines) + "\n")
