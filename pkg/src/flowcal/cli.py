"""Command-line front end for the full workflow.

Commands:
    fit        learn reference-resolution model parameters from synthetic data
    calibrate  build per-resolution conditioning tables for the frozen model
    sample     generate fields at one resolution, with or without a table
    diagnose   emit CSV/SVG reports (SSIM curves, reverse-error curves,
               calibrated-vs-default conditioning, Frechet distances)
    report     aggregate artifacts into a human-readable summary

Outputs land under <output_dir>/{params,tables,samples,reports}.  Every
command is deterministic given config + seed; wall-clock timestamps are
confined to <output_dir>/run_meta.json.

Exit codes: 0 success, 2 config error, 3 invalid or missing artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .calibrate import (
    CalibrationTable,
    calibrate_schedule,
    load_table,
    one_step_reverse_loss,
    save_table,
    table_path,
)
from .config import RunConfig, build_schedule, load_run_config
from .diagnostics import (
    Curve,
    eval_generation,
    reverse_mse_curve,
    ssim_noise_curve,
    write_curves_csv,
    write_curves_svg,
)
from .errors import ConfigError, NumericalError, ValidationError
from .grid import grf_sample, save_field
from .model import Denoiser, WienerParams, fit_spectrum, flow_matching_loss
from .rng import Stream, mix64
from .sampler import sample_batch

DIAG_SIGMA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
DIAG_SSIM_SAMPLES = 32
DIAG_MSE_SAMPLES = 32

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NUMERIC = 4


def _params_path(cfg: RunConfig) -> Path:
    return cfg.output_dir / "params" / "wiener.json"


def _load_params(cfg: RunConfig) -> tuple[WienerParams, int, int, float]:
    path = _params_path(cfg)
    if not path.is_file():
        raise ConfigError(f"{path} not found; run 'fit' first")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc}") from exc
    for key in ("mean", "amplitude", "alpha", "noise_variance", "ref_width", "ref_height"):
        if key not in doc:
            raise ValidationError(f"{path}: missing field '{key}'")
    params = WienerParams(
        mean=float(doc["mean"]), amplitude=float(doc["amplitude"]), alpha=float(doc["alpha"])
    )
    return params, int(doc["ref_width"]), int(doc["ref_height"]), float(doc["noise_variance"])


def _frozen_denoiser(cfg: RunConfig) -> Denoiser:
    params, ref_w, ref_h, nv = _load_params(cfg)
    return Denoiser.frozen(params, ref_w, ref_h, noise_variance=nv)


def _calibration_fields(cfg: RunConfig, resolution: int) -> list:
    return [
        grf_sample(cfg.data, resolution, resolution, mix64(cfg.seed, Stream.DATA, resolution, i))
        for i in range(cfg.n_calibration)
    ]


def _write_meta(cfg: RunConfig, command: str) -> None:
    meta_path = cfg.output_dir / "run_meta.json"
    meta = {"runs": []}
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError:
            meta = {"runs": []}
    meta["runs"].append(
        {
            "command": command,
            "seed": cfg.seed,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    )
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def cmd_fit(cfg: RunConfig) -> None:
    r = cfg.ref_resolution
    print(f"fit: drawing {cfg.n_calibration} training fields at {r}x{r}")
    fields = _calibration_fields(cfg, r)
    params = fit_spectrum(fields, noise_variance=1.0, seed=mix64(cfg.seed, Stream.FLOW_LOSS))
    final_loss = flow_matching_loss(
        Denoiser.fitted(params),
        fields,
        build_schedule(cfg, r),
        mix64(cfg.seed, Stream.FLOW_LOSS),
    )
    path = _params_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "mean": params.mean,
        "amplitude": params.amplitude,
        "alpha": params.alpha,
        "noise_variance": 1.0,
        "ref_width": r,
        "ref_height": r,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"fit: amplitude={params.amplitude:.6g} alpha={params.alpha:.4f} "
          f"mean={params.mean:.6g}")
    print(f"fit: final training loss {final_loss:.8f}")
    print(f"fit: wrote {path}")


def cmd_calibrate(cfg: RunConfig) -> None:
    d = _frozen_denoiser(cfg)
    tables_root = cfg.output_dir / "tables"
    for r in cfg.eval_resolutions:
        sched = build_schedule(cfg, r)
        x0s = _calibration_fields(cfg, r)
        cal_seed = mix64(cfg.seed, Stream.CALIBRATION, r)
        table = calibrate_schedule(d, x0s, sched, cfg.search, cal_seed)
        defaults = np.array(
            [
                one_step_reverse_loss(d, x0s, sched, t, float(sched.sigmas[t]), cal_seed)
                for t in range(sched.T)
            ]
        )
        path = table_path(tables_root, sched.kind, r, r)
        save_table(table, path)
        dev = table.sigmas_hat - sched.sigmas[:-1]
        print(
            f"calibrate {r}x{r}: mean|sigma_hat - sigma| = {np.abs(dev).mean():.4f}, "
            f"upward fraction = {np.mean(dev > 0):.2f}, "
            f"total loss improvement = {(defaults - table.losses).sum():.3e}"
        )
        print(f"calibrate: wrote {path}")


def cmd_sample(cfg: RunConfig, resolution: int, with_table: bool, n: int) -> None:
    d = _frozen_denoiser(cfg)
    sched = build_schedule(cfg, resolution)
    table: CalibrationTable | None = None
    if with_table:
        path = table_path(cfg.output_dir / "tables", sched.kind, resolution, resolution)
        if not path.is_file():
            raise ConfigError(f"{path} not found; run 'calibrate' first")
        table = load_table(path)
    # the generation seed ignores with_table so default and table-of-defaults
    # sampling are comparable draw-for-draw
    fields = sample_batch(
        d, sched, table, resolution, resolution, n, mix64(cfg.seed, Stream.GENERATION, resolution)
    )
    sub = f"{resolution}x{resolution}_{'calibrated' if with_table else 'default'}"
    out_dir = cfg.output_dir / "samples" / sub
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(fields):
        name = f"sample_{i:04d}.fld"
        save_field(f, out_dir / name)
        names.append(name)
    index = {
        "fields": names,
        "width": resolution,
        "height": resolution,
        "n": n,
        "seed": cfg.seed,
        "calibrated": with_table,
        "schedule_kind": sched.kind,
        "T": sched.T,
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    print(f"sample: wrote {n} fields to {out_dir}")


def cmd_diagnose(cfg: RunConfig) -> None:
    d = _frozen_denoiser(cfg)
    reports = cfg.output_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    resolutions = sorted(set(cfg.eval_resolutions) | {cfg.ref_resolution})

    curves = ssim_noise_curve(
        cfg.data, resolutions, DIAG_SIGMA_GRID, DIAG_SSIM_SAMPLES, mix64(cfg.seed, Stream.NOISE)
    )
    write_curves_csv(reports / "ssim_curves.csv", curves)
    write_curves_svg(reports / "ssim_curves.svg", curves, title="SSIM vs sigma")
    print(f"diagnose: wrote ssim_curves ({len(curves)} curves)")

    mse_curves = []
    for r in resolutions:
        sched = build_schedule(cfg, r)
        x0s = [
            grf_sample(cfg.data, r, r, mix64(cfg.seed, Stream.DATA, r, i))
            for i in range(DIAG_MSE_SAMPLES)
        ]
        mse_curves.append(reverse_mse_curve(d, x0s, sched, mix64(cfg.seed, Stream.CALIBRATION, r)))
        oracle = Denoiser.oracle(cfg.data)
        mse_curves.append(
            reverse_mse_curve(oracle, x0s, sched, mix64(cfg.seed, Stream.CALIBRATION, r))
        )
    write_curves_csv(reports / "reverse_mse.csv", mse_curves)
    write_curves_svg(reports / "reverse_mse.svg", mse_curves, title="one-step reverse MSE")
    print(f"diagnose: wrote reverse_mse ({len(mse_curves)} curves)")

    hat_curves = []
    for r in cfg.eval_resolutions:
        sched = build_schedule(cfg, r)
        path = table_path(cfg.output_dir / "tables", sched.kind, r, r)
        if not path.is_file():
            raise ConfigError(f"{path} not found; run 'calibrate' first")
        table = load_table(path)
        ts = np.arange(sched.T, dtype=float)
        hat_curves.append(Curve(ts, table.sigmas_hat, label=f"calibrated-{r}x{r}"))
        hat_curves.append(Curve(ts, sched.sigmas[:-1], label=f"default-{r}x{r}"))
    write_curves_csv(reports / "sigma_hat_vs_default.csv", hat_curves)
    write_curves_svg(
        reports / "sigma_hat_vs_default.svg", hat_curves, title="conditioning levels"
    )
    print(f"diagnose: wrote sigma_hat_vs_default ({len(hat_curves)} curves)")

    rows = []
    for r in cfg.eval_resolutions:
        sched = build_schedule(cfg, r)
        table = load_table(table_path(cfg.output_dir / "tables", sched.kind, r, r))
        eval_seed = mix64(cfg.seed, Stream.GENERATION, r)
        rep_d = eval_generation(d, sched, None, cfg.data, r, r, cfg.n_eval, eval_seed)
        rep_c = eval_generation(d, sched, table, cfg.data, r, r, cfg.n_eval, eval_seed)
        fd_d, fd_c = rep_d["fd_default"], rep_c["fd_calibrated"]
        improvement = (fd_d - fd_c) / fd_d * 100.0 if fd_d > 0 else 0.0
        rows.append((r, fd_d, fd_c, improvement))
        print(
            f"diagnose {r}x{r}: fd_default={fd_d:.5f} fd_calibrated={fd_c:.5f} "
            f"improvement={improvement:.1f}%"
        )
    with open(reports / "fd_report.csv", "w") as fh:
        fh.write("resolution,fd_default,fd_calibrated,improvement_pct\n")
        for r, fd_d, fd_c, imp in rows:
            fh.write(f"{r},{fd_d:.17g},{fd_c:.17g},{imp:.17g}\n")
    fd_curves = [
        Curve(np.array([float(r) for r, *_ in rows]), np.array([fd for _, fd, _, _ in rows]),
              label="default"),
        Curve(np.array([float(r) for r, *_ in rows]), np.array([fd for _, _, fd, _ in rows]),
              label="calibrated"),
    ]
    write_curves_svg(reports / "fd_report.svg", fd_curves, title="Frechet distance")
    print("diagnose: wrote fd_report")


def cmd_report(cfg: RunConfig) -> None:
    params, ref_w, ref_h, _ = _load_params(cfg)
    lines = [
        "flowcal run summary",
        "===================",
        f"data: mean={cfg.data.mean} variance={cfg.data.variance} alpha={cfg.data.alpha}",
        f"reference model: {ref_w}x{ref_h}, amplitude={params.amplitude:.6g}, "
        f"alpha={params.alpha:.4f}",
        f"schedule: {cfg.schedule_kind}, T={cfg.schedule_T}",
        "",
    ]
    for r in cfg.eval_resolutions:
        sched = build_schedule(cfg, r)
        path = table_path(cfg.output_dir / "tables", sched.kind, r, r)
        if not path.is_file():
            raise ConfigError(f"{path} not found; run 'calibrate' first")
        table = load_table(path)
        dev = table.sigmas_hat - sched.sigmas[:-1]
        lines.append(
            f"{r}x{r}: mean|dev|={np.abs(dev).mean():.4f} max|dev|={np.abs(dev).max():.4f} "
            f"upward_fraction={np.mean(dev > 0):.2f} (n={table.n_samples})"
        )
    fd_path = cfg.output_dir / "reports" / "fd_report.csv"
    if fd_path.is_file():
        lines.append("")
        lines.append(fd_path.read_text().strip())
    text = "\n".join(lines) + "\n"
    out = cfg.output_dir / "reports" / "summary.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    print(f"report: wrote {out}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcal",
        description="flow-matching sampler sandbox with calibrated noise conditioning",
    )
    parser.add_argument("--config", type=Path, default=None, help="key-value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out", type=Path, default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", help="fit reference-resolution model parameters")
    sub.add_parser("calibrate", help="calibrate conditioning per eval resolution")
    p_sample = sub.add_parser("sample", help="generate fields at one resolution")
    p_sample.add_argument("--resolution", type=int, required=True)
    p_sample.add_argument("--n", type=int, default=16)
    p_sample.add_argument(
        "--with-table", action=argparse.BooleanOptionalAction, default=True,
        help="use the calibrated table (--no-with-table for default conditioning)",
    )
    sub.add_parser("diagnose", help="emit diagnostic CSV/SVG reports")
    sub.add_parser("report", help="summarize artifacts into reports/summary.txt")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    try:
        cfg = load_run_config(args.config, env=os.environ, overrides=overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(cfg.output_dir / ".lock"))
    try:
        with lock.acquire(timeout=0.5):
            _write_meta(cfg, args.command)
            if args.command == "fit":
                cmd_fit(cfg)
            elif args.command == "calibrate":
                cmd_calibrate(cfg)
            elif args.command == "sample":
                cmd_sample(cfg, args.resolution, args.with_table, args.n)
            elif args.command == "diagnose":
                cmd_diagnose(cfg)
            elif args.command == "report":
                cmd_report(cfg)
    except Timeout:
        print(f"output directory {cfg.output_dir} is locked by another run", file=sys.stderr)
        return EXIT_ARTIFACT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
