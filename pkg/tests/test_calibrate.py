import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcal import (
    DataSpec,
    Denoiser,
    Field,
    SearchConfig,
    calibrate_schedule,
    calibrate_step,
    grf_sample,
    linear_schedule,
    load_table,
    one_step_reverse_loss,
    reference_params,
    save_table,
)
from flowcal.calibrate import CalibrationTable, coarse_to_fine_search, table_path
from flowcal.errors import SizeError, ValidationError
from flowcal.rng import Stream, mix64

CFG = SearchConfig()


def scalar_fields(n, std, seed):
    g = np.random.default_rng(seed)
    return [Field(np.array([[v]])) for v in g.normal(0.0, std, n)]


def test_search_config_validation():
    with pytest.raises(ValidationError):
        SearchConfig(eps_coarse=0.01, eps_fine=0.1)
    with pytest.raises(ValidationError):
        SearchConfig(stride_coarse=0.002, stride_fine=0.02)


def test_loss_nonnegative_and_deterministic(spec):
    d = Denoiser.oracle(spec)
    sched = linear_schedule(10)
    x0s = [grf_sample(spec, 16, 16, mix64(1, Stream.DATA, i)) for i in range(4)]
    a = one_step_reverse_loss(d, x0s, sched, 5, 0.5, seed=9)
    b = one_step_reverse_loss(d, x0s, sched, 5, 0.5, seed=9)
    assert a >= 0.0
    assert a == b


def test_loss_scan_prefers_default_over_far_candidates():
    # scalar system, oracle model: the default sigma_t is closer to the
    # optimum than sigma_t +- 0.2 at mid-schedule
    d = Denoiser.oracle(DataSpec(0.0, 4.0, 1.0))
    sched = linear_schedule(50)
    x0s = scalar_fields(512, 2.0, seed=5)
    t = 25
    st_ = float(sched.sigmas[t])
    mid = one_step_reverse_loss(d, x0s, sched, t, st_, seed=55)
    lo = one_step_reverse_loss(d, x0s, sched, t, st_ - 0.2, seed=55)
    hi = one_step_reverse_loss(d, x0s, sched, t, st_ + 0.2, seed=55)
    assert mid <= lo
    assert mid <= hi


def test_loss_matches_manual_euler_composition(spec):
    # the batched loss must agree with composing the public ops per item
    from flowcal.sampler import euler_step
    from flowcal.rng import generator

    d = Denoiser.oracle(spec)
    sched = linear_schedule(10)
    x0s = [grf_sample(spec, 8, 8, mix64(14, Stream.DATA, i)) for i in range(3)]
    t, sigma_tilde, seed = 4, 0.47, 91
    got = one_step_reverse_loss(d, x0s, sched, t, sigma_tilde, seed)
    sig_t, sig_t1 = float(sched.sigmas[t]), float(sched.sigmas[t + 1])
    per_item = []
    for i, x0 in enumerate(x0s):
        eps = generator(seed, Stream.CALIBRATION, t, i).standard_normal(x0.data.shape)
        x_t = Field((1 - sig_t) * x0.data + sig_t * eps)
        x_t1 = Field((1 - sig_t1) * x0.data + sig_t1 * eps)
        x_hat = euler_step(x_t1, sig_t1, sig_t, sigma_tilde, d)
        per_item.append(float(np.mean((x_hat.data - x_t.data) ** 2)))
    assert got == pytest.approx(float(np.mean(per_item)), rel=1e-12)


def test_loss_input_validation(spec):
    d = Denoiser.oracle(spec)
    sched = linear_schedule(10)
    x0s = [grf_sample(spec, 8, 8, 1)]
    with pytest.raises(ValueError):
        one_step_reverse_loss(d, [], sched, 0, 0.0, seed=0)
    with pytest.raises(ValueError):
        one_step_reverse_loss(d, x0s, sched, 10, 0.5, seed=0)
    mixed = [grf_sample(spec, 8, 8, 1), grf_sample(spec, 16, 16, 1)]
    with pytest.raises(SizeError):
        one_step_reverse_loss(d, mixed, sched, 0, 0.0, seed=0)


def test_search_finds_quadratic_optimum():
    calls = []

    def loss(s):
        calls.append(s)
        return (s - 0.437) ** 2

    best, val, degraded = coarse_to_fine_search(loss, center=0.44, upper=1.0, cfg=CFG)
    assert not degraded
    assert abs(best - 0.437) <= CFG.stride_fine
    assert val == pytest.approx((best - 0.437) ** 2)
    assert calls[0] == 0.44  # default evaluated first


def test_search_respects_upper_clamp():
    best, _, degraded = coarse_to_fine_search(lambda s: (s - 0.9) ** 2, 0.5, upper=0.45, cfg=CFG)
    assert not degraded
    assert best <= 0.45


def test_search_empty_range_degrades_to_clamped_default():
    # upper far below the coarse window: keep the clamped default, flag it
    best, val, degraded = coarse_to_fine_search(lambda s: s, center=0.8, upper=0.6, cfg=CFG)
    assert degraded
    assert best == 0.6
    assert val == 0.6


def exhaustive_search_oracle(loss, center, upper, cfg):
    """Dense fine-grid argmin over the union of the two searched windows."""
    from flowcal.calibrate import _candidates

    lo_c = max(0.0, center - cfg.eps_coarse)
    hi_c = min(upper, center + cfg.eps_coarse)
    coarse = [min(center, upper)] + _candidates(lo_c, hi_c, cfg.stride_coarse)
    incumbent = coarse[int(np.argmin([loss(c) for c in coarse]))]
    lo_f = max(0.0, incumbent - cfg.eps_fine)
    hi_f = min(upper, incumbent + cfg.eps_fine)
    dense = np.concatenate(
        [np.arange(lo_c, hi_c + 1e-12, cfg.stride_fine), [hi_c],
         np.arange(lo_f, hi_f + 1e-12, cfg.stride_fine), [hi_f]]
    )
    dense = np.sort(dense[dense < 1.0])
    return float(dense[np.argmin([loss(s) for s in dense])])


def test_search_oracle_equivalence_on_random_quadratics():
    g = np.random.default_rng(4711)
    for _ in range(20):
        center = float(g.uniform(0.1, 0.9))
        upper = float(min(1.0, center + g.uniform(0.0, 0.2)))
        opt = float(g.uniform(center - 0.15, center + 0.15))
        loss = lambda s: (s - opt) ** 2
        best, _, _ = coarse_to_fine_search(loss, center, upper, CFG)
        oracle = exhaustive_search_oracle(loss, center, upper, CFG)
        assert abs(best - oracle) <= CFG.stride_fine + 1e-12


def test_calibrate_step_never_worse_than_default(spec):
    frozen = Denoiser.frozen(reference_params(spec, 64, 64), 64, 64)
    sched = linear_schedule(20)
    x0s = [grf_sample(spec, 16, 16, mix64(3, Stream.DATA, i)) for i in range(8)]
    for t in (0, 7, 14, 19):
        sig_hat, loss, _ = calibrate_step(frozen, x0s, sched, t, 1.0, CFG, seed=17)
        default = one_step_reverse_loss(frozen, x0s, sched, t, float(sched.sigmas[t]), seed=17)
        assert loss <= default
        assert 0.0 <= sig_hat <= 1.0


def test_calibrate_schedule_monotone_and_deterministic(spec):
    frozen = Denoiser.frozen(reference_params(spec, 64, 64), 64, 64)
    sched = linear_schedule(15)
    x0s = [grf_sample(spec, 8, 8, mix64(21, Stream.DATA, i)) for i in range(8)]
    t1 = calibrate_schedule(frozen, x0s, sched, CFG, seed=2)
    t2 = calibrate_schedule(frozen, x0s, sched, CFG, seed=2)
    assert np.array_equal(t1.sigmas_hat, t2.sigmas_hat)
    assert np.all(np.diff(t1.sigmas_hat) >= 0)
    assert t1.sigmas_hat[-1] <= 1.0
    assert t1.n_samples == 8


def test_calibrate_schedule_non_inferiority_exact(spec):
    frozen = Denoiser.frozen(reference_params(spec, 64, 64), 64, 64)
    sched = linear_schedule(15)
    x0s = [grf_sample(spec, 16, 16, mix64(33, Stream.DATA, i)) for i in range(8)]
    table = calibrate_schedule(frozen, x0s, sched, CFG, seed=44)
    for t in range(sched.T):
        default = one_step_reverse_loss(frozen, x0s, sched, t, float(sched.sigmas[t]), seed=44)
        assert table.losses[t] <= default


def test_calibrate_schedule_rejects_mixed_resolutions(spec):
    frozen = Denoiser.frozen(reference_params(spec, 64, 64), 64, 64)
    sched = linear_schedule(5)
    mixed = [grf_sample(spec, 8, 8, 1), grf_sample(spec, 16, 16, 1)]
    with pytest.raises(SizeError):
        calibrate_schedule(frozen, mixed, sched, CFG, seed=0)


def test_table_validation():
    with pytest.raises(ValidationError):
        CalibrationTable(
            width=8, height=8, T=4, schedule_kind="linear",
            sigmas_hat=np.array([0.1, 0.3, 0.2, 0.9]),  # not monotone
            losses=np.zeros(4), n_samples=1, seed=0,
        )
    with pytest.raises(ValidationError):
        CalibrationTable(
            width=8, height=8, T=4, schedule_kind="linear",
            sigmas_hat=np.array([0.1, 0.2, 0.3]),  # wrong length
            losses=np.zeros(4), n_samples=1, seed=0,
        )


def test_table_save_load_roundtrip(tmp_path):
    table = CalibrationTable(
        width=16, height=16, T=4, schedule_kind="linear",
        sigmas_hat=np.array([0.11, 0.31, 0.52, 0.77]),
        losses=np.array([1e-3, 2e-3, 3e-3, 4e-3]),
        n_samples=12, seed=99,
    )
    path = tmp_path / "tables" / "linear" / "16x16.json"
    save_table(table, path)
    back = load_table(path)
    assert back.width == 16 and back.height == 16 and back.T == 4
    assert back.schedule_kind == "linear"
    assert np.array_equal(back.sigmas_hat, table.sigmas_hat)
    assert np.array_equal(back.losses, table.losses)
    assert back.n_samples == 12 and back.seed == 99


def test_table_load_rejects_tampering(tmp_path):
    table = CalibrationTable(
        width=8, height=8, T=5, schedule_kind="linear",
        sigmas_hat=np.array([0.1, 0.2, 0.3, 0.4, 0.5]),
        losses=np.zeros(5), n_samples=1, seed=0,
    )
    path = tmp_path / "t.json"
    save_table(table, path)

    import json

    doc = json.loads(path.read_text())
    doc["sigmas_hat"][3] = 0.25  # sigma_hat[3] < sigma_hat[2]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_table(path)


def test_table_load_names_missing_field(tmp_path):
    import json

    table = CalibrationTable(
        width=8, height=8, T=2, schedule_kind="linear",
        sigmas_hat=np.array([0.3, 0.6]), losses=np.zeros(2), n_samples=1, seed=0,
    )
    path = tmp_path / "t.json"
    save_table(table, path)
    doc = json.loads(path.read_text())
    del doc["losses"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="losses"):
        load_table(path)
    path.write_text("{broken")
    with pytest.raises(ValidationError):
        load_table(path)


def test_table_path_convention(tmp_path):
    assert table_path(tmp_path, "shifted", 16, 16) == tmp_path / "shifted" / "16x16.json"


@given(opt=st.floats(0.0, 1.2), center=st.floats(0.1, 0.95))
@settings(max_examples=60, deadline=None)
def test_search_result_always_within_bounds(opt, center):
    upper = min(1.0, center + 0.05)
    best, _, _ = coarse_to_fine_search(lambda s: (s - opt) ** 2, center, upper, CFG)
    assert 0.0 <= best <= upper
    assert best < 1.0
