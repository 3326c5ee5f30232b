"""Flow-matching sampler sandbox with calibrated noise-level conditioning.

Analytically tractable Gaussian-random-field data makes every behavior of
the sampler oracle-checkable: the optimal velocity is a closed-form Wiener
filter, so resolution-dependent conditioning mismatch can be produced,
measured, and corrected exactly.
"""

from .calibrate import (
    CalibrationTable,
    SearchConfig,
    calibrate_schedule,
    calibrate_step,
    load_table,
    one_step_reverse_loss,
    save_table,
)
from .diagnostics import (
    Curve,
    GaussianStats,
    eval_generation,
    gaussian_frechet,
    gaussian_stats,
    reverse_mse_curve,
    ssim,
    ssim_noise_curve,
)
from .grid import (
    DataSpec,
    Field,
    box_downsample,
    fft2,
    field_stats,
    grf_sample,
    ifft2,
    load_field,
    save_field,
)
from .model import (
    Denoiser,
    WienerParams,
    fit_spectrum,
    flow_matching_loss,
    reference_params,
    velocity,
)
from .sampler import Trajectory, add_noise, euler_step, forward_trajectory, sample, sample_batch
from .schedule import (
    SigmaSchedule,
    linear_schedule,
    resolution_shift,
    shifted_schedule,
    time_shifted_schedule,
)

__version__ = "0.1.0"
