import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcal import linear_schedule, resolution_shift, shifted_schedule, time_shifted_schedule
from flowcal.errors import DomainError, ValidationError
from flowcal.schedule import (
    SigmaSchedule,
    from_json_dict,
    load_schedule,
    save_schedule,
    to_json_dict,
)


def test_linear_examples():
    assert np.array_equal(linear_schedule(4).sigmas, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.array_equal(linear_schedule(1).sigmas, [0.0, 1.0])


def test_linear_rejects_zero():
    with pytest.raises(DomainError):
        linear_schedule(0)


def test_shifted_identity_at_one():
    assert np.array_equal(shifted_schedule(10, 1.0).sigmas, linear_schedule(10).sigmas)


def test_shifted_hand_value():
    # shift=3 at u=0.5: 3*0.5 / (1 + 2*0.5) = 0.75
    assert shifted_schedule(2, 3.0).sigmas[1] == 0.75


def test_shifted_rejects_nonpositive():
    with pytest.raises(DomainError):
        shifted_schedule(10, 0.0)
    with pytest.raises(DomainError):
        shifted_schedule(10, -2.0)


@given(T=st.integers(1, 1000), shift=st.floats(0.1, 10.0))
@settings(max_examples=80, deadline=None)
def test_schedule_invariants(T, shift):
    s = shifted_schedule(T, shift)
    assert s.sigmas[0] == 0.0
    assert s.sigmas[-1] == 1.0
    assert np.all(np.diff(s.sigmas) > 0)


@given(T=st.integers(2, 200), shift=st.floats(1.0 + 1e-6, 10.0))
@settings(max_examples=50, deadline=None)
def test_shifted_above_linear_for_large_shift(T, shift):
    lin = linear_schedule(T).sigmas
    warped = shifted_schedule(T, shift).sigmas
    assert np.all(warped[1:-1] > lin[1:-1])


@given(T=st.integers(2, 200), shift=st.floats(0.1, 1.0 - 1e-6))
@settings(max_examples=50, deadline=None)
def test_shifted_below_linear_for_small_shift(T, shift):
    lin = linear_schedule(T).sigmas
    warped = shifted_schedule(T, shift).sigmas
    assert np.all(warped[1:-1] < lin[1:-1])


def test_resolution_shift_examples():
    assert resolution_shift(3.0, 1024, 1024) == 3.0
    assert resolution_shift(3.0, 4096, 1024) == 0.75
    assert resolution_shift(2.0, 100, 400) > resolution_shift(2.0, 100, 200)


def test_resolution_shift_errors():
    with pytest.raises(DomainError):
        resolution_shift(3.0, 0, 64)
    with pytest.raises(DomainError):
        resolution_shift(-1.0, 64, 64)


def test_time_shifted_matches_manual():
    s = time_shifted_schedule(20, 3.0, ref_pixels=64 * 64, target_pixels=16 * 16)
    manual = shifted_schedule(20, 3.0 * (16 * 16) / (64 * 64))
    assert np.array_equal(s.sigmas, manual.sigmas)
    assert s.kind == "time_shifted"
    assert s.params["shift"] == pytest.approx(0.1875)


def test_schedule_validation_rejects_bad_arrays():
    with pytest.raises(ValidationError):
        SigmaSchedule(np.array([0.0, 0.5, 0.9]), kind="linear")  # endpoint != 1
    with pytest.raises(ValidationError):
        SigmaSchedule(np.array([0.0, 0.6, 0.4, 1.0]), kind="linear")  # not increasing


def test_schedule_json_roundtrip(tmp_path):
    s = shifted_schedule(12, 2.5)
    doc = to_json_dict(s)
    back = from_json_dict(doc)
    assert np.array_equal(back.sigmas, s.sigmas)
    assert back.kind == s.kind and back.params == dict(s.params)

    path = tmp_path / "sched.json"
    save_schedule(s, path)
    loaded = load_schedule(path)
    assert np.array_equal(loaded.sigmas, s.sigmas)


def test_schedule_json_missing_field(tmp_path):
    s = linear_schedule(4)
    doc = to_json_dict(s)
    del doc["sigmas"]
    with pytest.raises(ValidationError, match="sigmas"):
        from_json_dict(doc)
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError):
        load_schedule(path)


def test_schedule_json_length_mismatch():
    doc = to_json_dict(linear_schedule(4))
    doc["T"] = 7
    with pytest.raises(ValidationError):
        from_json_dict(doc)
