import json

import numpy as np
import pytest

from flowcal.cli import EXIT_ARTIFACT, EXIT_CONFIG, EXIT_OK, main
from flowcal.config import build_schedule, load_run_config, parse_config_file
from flowcal.errors import ConfigError

SMALL_CONFIG = """\
# small deterministic run
data.alpha = 2.0
ref_resolution = 32
eval_resolutions = 8, 16
schedule.kind = linear
schedule.T = 12
n_calibration = 10
n_eval = 32
seed = 424242
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One fit+calibrate pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(SMALL_CONFIG + f"output_dir = {root / 'out'}\n")
    assert main(["--config", str(cfg_path), "fit"]) == EXIT_OK
    assert main(["--config", str(cfg_path), "calibrate"]) == EXIT_OK
    return root


def _cfg_path(workdir) -> str:
    return str(workdir / "run.cfg")


def test_config_file_parsing(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("data.alpha = 1.5\n# comment\n\nn_eval = 64\n")
    values = parse_config_file(path)
    assert values == {"data.alpha": "1.5", "n_eval": "64"}


def test_config_unknown_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("nonsense.key = 3\n")
    with pytest.raises(ConfigError):
        parse_config_file(path)


def test_config_missing_file_exits_2(tmp_path):
    assert main(["--config", str(tmp_path / "absent.cfg"), "fit"]) == EXIT_CONFIG


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        load_run_config(None, overrides={"ref_resolution": "48"})
    with pytest.raises(ConfigError):
        load_run_config(None, overrides={"n_eval": "4"})
    with pytest.raises(ConfigError):
        load_run_config(None, overrides={"schedule.kind": "cosine"})
    with pytest.raises(ConfigError):
        load_run_config(None, overrides={"data.variance": "-1"})


def test_config_precedence_env_and_flags(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 1\n")
    cfg = load_run_config(path, env={"FLOWCAL_SEED": "2"})
    assert cfg.seed == 2
    cfg = load_run_config(path, env={"FLOWCAL_SEED": "2"}, overrides={"seed": "3"})
    assert cfg.seed == 3


def test_config_defaults_complete():
    cfg = load_run_config(None)
    assert cfg.ref_resolution == 64
    assert cfg.eval_resolutions == (8, 16, 32)
    assert cfg.schedule_kind == "linear"


def test_build_schedule_per_resolution():
    cfg = load_run_config(None, overrides={"schedule.kind": "time_shifted"})
    s16 = build_schedule(cfg, 16)
    s64 = build_schedule(cfg, 64)
    assert s16.kind == "time_shifted"
    assert not np.array_equal(s16.sigmas, s64.sigmas)
    lin = load_run_config(None)
    assert np.array_equal(build_schedule(lin, 16).sigmas, build_schedule(lin, 64).sigmas)


def test_fit_writes_valid_params(workdir):
    doc = json.loads((workdir / "out" / "params" / "wiener.json").read_text())
    assert set(doc) == {"mean", "amplitude", "alpha", "noise_variance", "ref_width", "ref_height"}
    assert doc["ref_width"] == 32
    assert 1.5 <= doc["alpha"] <= 2.5


def test_fit_rerun_is_byte_identical(workdir, tmp_path):
    cfg_path = tmp_path / "rerun.cfg"
    cfg_path.write_text(SMALL_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
    assert main(["--config", str(cfg_path), "fit"]) == EXIT_OK
    first = (tmp_path / "out" / "params" / "wiener.json").read_bytes()
    assert main(["--config", str(cfg_path), "fit"]) == EXIT_OK
    second = (tmp_path / "out" / "params" / "wiener.json").read_bytes()
    assert first == second


def test_calibrate_writes_tables(workdir):
    from flowcal.calibrate import load_table

    for r in (8, 16):
        path = workdir / "out" / "tables" / "linear" / f"{r}x{r}.json"
        assert path.is_file()
        table = load_table(path)
        assert table.T == 12
        assert table.width == r


def test_calibrate_without_fit_exits_2(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(SMALL_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
    assert main(["--config", str(cfg_path), "calibrate"]) == EXIT_CONFIG


def test_sample_outputs_and_default_table_equivalence(workdir):
    cfg = _cfg_path(workdir)
    assert main(["--config", cfg, "sample", "--resolution", "16", "--n", "3",
                 "--no-with-table"]) == EXIT_OK
    out_dir = workdir / "out" / "samples" / "16x16_default"
    index = json.loads((out_dir / "index.json").read_text())
    assert len(index["fields"]) == 3
    default_bytes = [(out_dir / name).read_bytes() for name in index["fields"]]

    # a table holding the schedule defaults must reproduce --no-with-table output
    from flowcal.calibrate import load_table, save_table, CalibrationTable

    table_file = workdir / "out" / "tables" / "linear" / "16x16.json"
    original = table_file.read_bytes()
    sched = build_schedule(load_run_config(cfg), 16)
    ident = CalibrationTable(
        width=16, height=16, T=sched.T, schedule_kind="linear",
        sigmas_hat=sched.sigmas[:-1].copy(), losses=np.zeros(sched.T),
        n_samples=1, seed=0,
    )
    try:
        save_table(ident, table_file)
        assert main(["--config", cfg, "sample", "--resolution", "16", "--n", "3"]) == EXIT_OK
        cal_dir = workdir / "out" / "samples" / "16x16_calibrated"
        cal_index = json.loads((cal_dir / "index.json").read_text())
        cal_bytes = [(cal_dir / name).read_bytes() for name in cal_index["fields"]]
        assert cal_bytes == default_bytes
    finally:
        table_file.write_bytes(original)


def test_sample_reproducible(workdir):
    cfg = _cfg_path(workdir)
    out_dir = workdir / "out" / "samples" / "8x8_default"
    assert main(["--config", cfg, "sample", "--resolution", "8", "--n", "2",
                 "--no-with-table"]) == EXIT_OK
    first = (out_dir / "sample_0000.fld").read_bytes()
    assert main(["--config", cfg, "sample", "--resolution", "8", "--n", "2",
                 "--no-with-table"]) == EXIT_OK
    assert (out_dir / "sample_0000.fld").read_bytes() == first


def test_corrupt_table_exits_3(workdir):
    cfg = _cfg_path(workdir)
    table_file = workdir / "out" / "tables" / "linear" / "16x16.json"
    original = table_file.read_bytes()
    doc = json.loads(original)
    doc["sigmas_hat"][2] = 1.5  # out of range
    try:
        table_file.write_text(json.dumps(doc))
        assert main(["--config", cfg, "sample", "--resolution", "16", "--n", "2"]) == EXIT_ARTIFACT
    finally:
        table_file.write_bytes(original)


def test_diagnose_and_report(workdir):
    cfg = _cfg_path(workdir)
    assert main(["--config", cfg, "diagnose"]) == EXIT_OK
    reports = workdir / "out" / "reports"
    for name in ("ssim_curves", "reverse_mse", "sigma_hat_vs_default", "fd_report"):
        assert (reports / f"{name}.csv").is_file()
        assert (reports / f"{name}.svg").is_file()

    # row counts follow the config grids
    ssim_rows = (reports / "ssim_curves.csv").read_text().strip().split("\n")
    n_res = 3  # eval {8,16} plus ref 32
    assert len(ssim_rows) == 1 + 9 * n_res  # header + sigma grid per resolution
    mse_rows = (reports / "reverse_mse.csv").read_text().strip().split("\n")
    assert len(mse_rows) == 1 + 12 * 2 * n_res  # T points, frozen+oracle, per resolution
    fd_rows = (reports / "fd_report.csv").read_text().strip().split("\n")
    assert fd_rows[0] == "resolution,fd_default,fd_calibrated,improvement_pct"
    assert len(fd_rows) == 1 + 2  # one row per eval resolution

    assert main(["--config", cfg, "report"]) == EXIT_OK
    summary = (reports / "summary.txt").read_text()
    assert "8x8" in summary and "16x16" in summary


def test_diagnose_requires_tables(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(SMALL_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
    assert main(["--config", str(cfg_path), "fit"]) == EXIT_OK
    assert main(["--config", str(cfg_path), "diagnose"]) == EXIT_CONFIG


def test_timestamps_confined_to_meta(workdir):
    meta = json.loads((workdir / "out" / "run_meta.json").read_text())
    assert all("timestamp" in run for run in meta["runs"])
    params = (workdir / "out" / "params" / "wiener.json").read_text()
    assert "timestamp" not in params
