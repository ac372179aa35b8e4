"""Batch command-line front end.

Subcommands: synth, simulate, calibrate, detect, bench, export-plotdata.
Exit codes are part of the interface: 0 success, 1 configuration error,
2 infeasible synthesis, 3 numerical failure.  Every run that writes
outputs also writes a manifest (config hash, seed, version) so identical
manifests imply identical outputs.  LIPFD_THREADS caps parallel scenario
jobs in `bench`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import manipulator as bench_mod
from . import modelio, plots, residuals as res, synthesis
from .config import ConfigError, RunConfig, dump_config, load_config, validate_config
from .manipulator import (
    DETECTION_FAMILIES, PAPER_LITERAL, SYMBOLIC,
    ScenarioSpec, WindowSpec, calibrate_benchmark, run_scenario, report_summary,
    build_plant,
)
from .model import ContractViolation
from .residuals import ARR, EARR, EARR_LINEAR, IEARR

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

_FAMILY_FLAG = {"arr": ARR, "earr": EARR, "earr-linear": EARR_LINEAR, "iearr": IEARR}
_PRESET_FLAG = {"symbolic": SYMBOLIC, "paper-literal": PAPER_LITERAL}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the exit-code contract reserves 2
    # for infeasibility, so remap usage errors to the config-error code
    def error(self, message):
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="lipfd", description="fault detection toolkit for Lipschitz "
                                          "nonlinear systems")
    p.add_argument("--version", action="version", version=f"lipfd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, help="JSON run configuration")
        sp.add_argument("--preset", choices=sorted(_PRESET_FLAG),
                        help="manipulator preset")
        sp.add_argument("--seed", type=int, help="base RNG seed")
        sp.add_argument("--out", type=str, help="output directory")

    sp = sub.add_parser("synth", help="solve the observer design problem")
    common(sp)
    sp.add_argument("--beta", type=float, help="decay rate")
    sp.add_argument("--lam", type=float, help="projection multiplier")
    sp.add_argument("--weight", type=float, help="objective weight on gamma")
    sp.add_argument("--dump-lmi", action="store_true",
                    help="write the assembled LMIs in sparse triplet form")

    sp = sub.add_parser("simulate", help="simulate one scenario, write sim.csv")
    common(sp)
    sp.add_argument("--scenario", type=int, help="scenario id 1..5")
    sp.add_argument("--design", type=str, help="design JSON from synth")

    sp = sub.add_parser("calibrate", help="scenario-1 calibration thresholds")
    common(sp)
    sp.add_argument("--design", type=str)
    sp.add_argument("--with-noise", action="store_true",
                    help="also recalibrate with measurement noise on")

    sp = sub.add_parser("detect", help="apply thresholds to an evaluation CSV")
    sp.add_argument("--evaluation", type=str, required=True,
                    help="evaluation CSV with J and Jth columns")

    sp = sub.add_parser("bench", help="run the five-scenario benchmark")
    common(sp)
    sp.add_argument("--scenario", type=int, help="run a single scenario id")
    sp.add_argument("--residual", choices=sorted(_FAMILY_FLAG) + ["all"],
                    default="all", help="restrict emitted residual families")
    sp.add_argument("--design", type=str, help="reuse a design JSON")
    sp.add_argument("--dump-lmi", action="store_true")

    sp = sub.add_parser("export-plotdata", help="long-format plot data from a bundle")
    sp.add_argument("--bundle", type=str, required=True, help="scenario bundle directory")
    sp.add_argument("--out", type=str, help="output directory (default: bundle)")
    sp.add_argument("--downsample", type=int, default=10)
    return p


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else validate_config({})
    if getattr(args, "preset", None):
        cfg.plant_preset = args.preset
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "beta", None) is not None:
        if args.beta <= 0:
            raise ConfigError("config key 'synthesis.beta' invalid: must be > 0")
        cfg.beta = args.beta
    if getattr(args, "lam", None) is not None:
        if args.lam <= 0:
            raise ConfigError("config key 'synthesis.lambda' invalid: must be > 0")
        cfg.lam = args.lam
    if getattr(args, "weight", None) is not None:
        cfg.objective_weight = args.weight
    if getattr(args, "scenario", None) is not None:
        if not 1 <= args.scenario <= 5:
            raise ConfigError("config key 'scenario.id' invalid: must be 1..5")
        cfg.scenario_id = args.scenario
    return cfg


def _preset(cfg: RunConfig) -> str:
    return _PRESET_FLAG[cfg.plant_preset]


def _write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    text = dump_config(cfg)
    manifest = {
        "tool": "lipfd",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config": json.loads(text),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _solve(cfg: RunConfig, preset: str):
    if cfg.plant_model_file:
        plant = modelio.load_plant(cfg.plant_model_file)
    else:
        plant = build_plant(kind=preset)
    problem = synthesis.SynthesisProblem.from_plant(
        plant, beta=cfg.beta, lam=cfg.lam, strictness_margin=cfg.delta)
    design = synthesis.solve_design(problem, {
        "objective_weight": cfg.objective_weight, "form": cfg.form})
    return plant, problem, design


def _design_exit(design) -> int:
    if design.solver_status == synthesis.STATUS_INFEASIBLE:
        print("synthesis infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    if design.solver_status in (synthesis.STATUS_UNBOUNDED,
                                synthesis.STATUS_NUMERICAL_FAILURE):
        print(f"synthesis failed: {design.solver_status}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _get_design(cfg: RunConfig, args, preset: str):
    if getattr(args, "design", None):
        return None, synthesis.load_design(args.design)
    plant, problem, design = _solve(cfg, preset)
    return problem, design


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    if getattr(args, "preset", None) is None and not args.config:
        cfg.plant_preset = "paper-literal"   # reproduce the reported design values
    preset = _preset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plant, problem, design = _solve(cfg, preset)
    code = _design_exit(design)
    if code != EXIT_OK:
        return code
    synthesis.save_design(design, out / "design.json")
    if args.dump_lmi:
        for form in (synthesis.PRINTED, synthesis.REPAIRED):
            spec = synthesis.assemble_lmi(problem, form=form)
            synthesis.write_lmi_triplets(spec, problem, out / f"lmi_{form}.txt")
    cert = design.certificates
    print(f"status: {design.solver_status} ({design.meta.get('solver')})")
    print(f"mu = {design.mu:.6g}")
    print(f"gamma = {design.gamma:.6g}")
    print(f"epsilon = {design.epsilon:.6g}")
    print("certificate margins:")
    print(f"  lmi_max_eig                 = {cert.lmi_max_eig:.6g}")
    print(f"  preschur_max_eig            = {cert.preschur_max_eig:.6g}")
    print(f"  closedloop_spectral_abscissa= {cert.closedloop_spectral_abscissa:.6g}")
    print(f"  decay_max_eig               = {cert.decay_max_eig:.6g}")
    print(f"  nullspace_max_eig           = {cert.nullspace_max_eig:.6g}")
    print(f"certificates: {'PASS' if cert.passed else 'FAIL'}")
    _write_manifest(out, cfg, "synth")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    preset = _preset(cfg)
    scenario_id = cfg.scenario_id or 1
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem, design = _get_design(cfg, args, preset)
    code = _design_exit(design)
    if code != EXIT_OK:
        return code
    spec = ScenarioSpec.from_id(scenario_id, seed=cfg.seed + scenario_id,
                                dt=cfg.dt, duration=cfg.duration,
                                window=WindowSpec(cfg.window_t0, cfg.window_len),
                                noise_fraction=cfg.noise_fraction)
    calibration = bench_mod.calibrate_benchmark(
        design, preset, spec=replace(spec, id=1, noise_on=False,
                                     fault=bench_mod.FaultConfig(), seed=cfg.seed),
        safety_factor=cfg.safety_factor, with_noise=spec.noise_on,
        noise_seeds=(cfg.seed + 1001, cfg.seed + 1002))
    report = run_scenario(spec, design, preset, calibration=calibration)
    report.sim.to_csv(out / "sim.csv")
    print(f"wrote {out / 'sim.csv'} ({report.sim.grid.n_samples} samples)")
    _write_manifest(out, cfg, "simulate")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    preset = _preset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem, design = _get_design(cfg, args, preset)
    code = _design_exit(design)
    if code != EXIT_OK:
        return code
    spec = ScenarioSpec.from_id(1, seed=cfg.seed, dt=cfg.dt, duration=cfg.duration,
                                window=WindowSpec(cfg.window_t0, cfg.window_len),
                                noise_fraction=cfg.noise_fraction)
    ctx = calibrate_benchmark(design, preset, spec=spec,
                              safety_factor=cfg.safety_factor,
                              with_noise=args.with_noise,
                              noise_seeds=(cfg.seed + 1001, cfg.seed + 1002))
    _write_thresholds(out, ctx)
    for fam, th in ctx.thresholds.items():
        print(f"J_th[{fam}] = {list(np.round(th.J_th, 9))}")
    _write_manifest(out, cfg, "calibrate")
    return EXIT_OK


def _write_thresholds(out: Path, ctx) -> None:
    doc = {fam: res.threshold_to_dict(th) for fam, th in ctx.thresholds.items()}
    doc["amplitude_reference"] = [float(v) for v in ctx.amplitude_reference]
    with open(out / "thresholds_noise_free.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if ctx.noisy_thresholds is not None:
        doc = {fam: res.threshold_to_dict(th) for fam, th in ctx.noisy_thresholds.items()}
        with open(out / "thresholds_noise_on.json", "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def cmd_detect(args) -> int:
    path = Path(args.evaluation)
    if not path.exists():
        raise ConfigError(f"evaluation file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    j_cols = [i for i, h in enumerate(header) if h.startswith("J") and not h.startswith("Jth")]
    th_cols = [i for i, h in enumerate(header) if h.startswith("Jth")]
    if not j_cols or not th_cols:
        raise ConfigError("evaluation CSV must carry J and Jth columns")
    t = data[:, 0]
    J = data[:, j_cols]
    th = data[0, th_cols]
    alarm = False
    for c in range(J.shape[1]):
        above = J[:, c] > th[c]
        if above.any():
            i = int(np.argmax(above))
            print(f"channel {c+1}: first crossing at t = {t[i]:.6g} s "
                  f"(J = {J[i, c]:.6g} > Jth = {th[c]:.6g})")
            alarm = True
        else:
            print(f"channel {c+1}: no crossing (peak J = {J[:, c].max():.6g}, "
                  f"Jth = {th[c]:.6g})")
    print(f"alarm: {'yes' if alarm else 'no'}")
    return EXIT_OK


def _bundle_families(choice: str) -> tuple:
    if choice == "all":
        return (ARR, EARR, EARR_LINEAR, IEARR)
    return (_FAMILY_FLAG[choice],)


def _write_scenario_bundle(out: Path, report, families) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.sim.to_csv(out / "sim.csv")
    for fam in families:
        tag = fam.lower()
        res.residual_to_csv(report.residual_traces[fam], out / f"residuals_{tag}.csv")
        th = report.thresholds.get(fam)
        res.evaluation_to_csv(report.evaluations[fam], th, out / f"evaluation_{tag}.csv")
        plots.plot_residual(report.residual_traces[fam], out / f"residuals_{tag}.png",
                            title=f"scenario {report.spec.id}: {fam} residual")
        plots.plot_evaluation(report.evaluations[fam], th, out / f"evaluation_{tag}.png",
                              title=f"scenario {report.spec.id}: {fam} evaluation")
    with open(out / "report.txt", "w") as fh:
        fh.write(f"scenario {report.spec.id}: {report.spec.description}\n")
        fh.write(f"preset: {report.preset}\nseed: {report.spec.seed}\n\n")
        for fam in families:
            det = report.detections.get(fam)
            if det is None:
                continue
            th = report.thresholds[fam].J_th
            peak = np.max(report.evaluations[fam].J, axis=0)
            fh.write(f"[{fam}]\n")
            fh.write(f"  J_th        = {[f'{v:.9g}' for v in th]}\n")
            fh.write(f"  peak J      = {[f'{v:.9g}' for v in peak]}\n")
            fh.write(f"  peak J/J_th = {[f'{v:.6g}' for v in det.peak_ratio]}\n")
            fh.write(f"  alarm       = {det.alarm}\n")
            delay = report.detection_delay[fam]
            if not math.isnan(delay):
                fh.write(f"  detection delay = {delay:.6g} s after onset\n")
            fh.write("\n")


def _write_summary_csv(out: Path, summary: dict) -> None:
    lines = ["scenario,family,channel,J_th,peak_J,peak_ratio,alarm,"
             "detection_delay,threshold_ratio_vs_ARR"]
    ratio_map = summary["threshold_ratios"]
    for row in summary["scenarios"]:
        fam = row["family"]
        for c in range(len(row["J_th"])):
            ratio = ""
            if row["scenario"] == 1 and f"ARR/{fam}" in ratio_map:
                ratio = f"{ratio_map[f'ARR/{fam}'][c]:.9g}"
            delay = row["detection_delay"]
            delay_txt = "" if math.isnan(delay) else f"{delay:.9g}"
            lines.append(
                f"{row['scenario']},{fam},{c+1},{row['J_th'][c]:.9g},"
                f"{row['peak_J'][c]:.9g},{row['peak_ratio'][c]:.9g},"
                f"{int(row['alarm'])},{delay_txt},{ratio}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    preset = _preset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem, design = _get_design(cfg, args, preset)
    code = _design_exit(design)
    if code != EXIT_OK:
        return code
    synthesis.save_design(design, out / "design.json")
    if getattr(args, "dump_lmi", False) and problem is not None:
        for form in (synthesis.PRINTED, synthesis.REPAIRED):
            spec = synthesis.assemble_lmi(problem, form=form)
            synthesis.write_lmi_triplets(spec, problem, out / f"lmi_{form}.txt")

    window = WindowSpec(cfg.window_t0, cfg.window_len)
    base = ScenarioSpec.from_id(1, seed=cfg.seed, dt=cfg.dt, duration=cfg.duration,
                                window=window, noise_fraction=cfg.noise_fraction)
    ids = [cfg.scenario_id] if cfg.scenario_id else [1, 2, 3, 4, 5]
    needs_noise = any(ScenarioSpec.from_id(i).noise_on for i in ids)
    calibration = calibrate_benchmark(design, preset, spec=base,
                                      safety_factor=cfg.safety_factor,
                                      with_noise=needs_noise,
                                      noise_seeds=(cfg.seed + 1001, cfg.seed + 1002))
    _write_thresholds(out, calibration)

    def job(i: int):
        spec = ScenarioSpec.from_id(i, seed=cfg.seed + i, dt=cfg.dt,
                                    duration=cfg.duration, window=window,
                                    noise_fraction=cfg.noise_fraction)
        return run_scenario(spec, design, preset, calibration=calibration)

    threads = int(os.environ.get("LIPFD_THREADS", "1"))
    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(job, ids))
    else:
        reports = [job(i) for i in ids]

    families = _bundle_families(args.residual)
    for rep in reports:
        _write_scenario_bundle(out / f"scenario_{rep.spec.id}", rep, families)
    ok = True
    if 1 in ids:
        summary = report_summary(reports)
        _write_summary_csv(out, summary)
        for fam, ratios in summary["threshold_ratios"].items():
            print(f"threshold ratio {fam}: {[f'{v:.4g}' for v in ratios]}")
        # acceptance-tagged structural checks: calibration run must not alarm
        cal_rows = [r for r in summary["scenarios"] if r["scenario"] == 1]
        ok = all(not r["alarm"] for r in cal_rows)
    for rep in reports:
        fams = ", ".join(f"{f}={'alarm' if rep.detections[f].alarm else 'quiet'}"
                         for f in DETECTION_FAMILIES)
        print(f"scenario {rep.spec.id}: {fams}")
    _write_manifest(out, cfg, "bench")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_export_plotdata(args) -> int:
    bundle = Path(args.bundle)
    if not bundle.is_dir():
        raise ConfigError(f"bundle directory not found: {bundle}")
    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    factor = max(1, args.downsample)
    wrote = 0
    for kind, prefix in (("residuals", "r"), ("evaluation", "J")):
        rows = []
        for csv_path in sorted(bundle.glob(f"{kind}_*.csv")):
            fam = csv_path.stem.split("_", 1)[1].upper()
            with open(csv_path) as fh:
                header = fh.readline().strip().split(",")
            data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
            data = data[::factor]
            for col, name in enumerate(header[1:], start=1):
                if name == "alarm":
                    continue
                if name.startswith("Jth"):
                    series = f"Jth_{fam}_{name[3:]}"
                elif name.startswith("J"):
                    series = f"J_{fam}_{name[1:]}"
                else:
                    series = f"r_{fam}_{name[1:]}"
                for trow in range(data.shape[0]):
                    rows.append(f"{data[trow, 0]:.17g},{series},{data[trow, col]:.17g}")
        if rows:
            target = out / f"plotdata_{kind}.csv"
            target.write_text("t,series,value\n" + "\n".join(rows) + "\n")
            wrote += 1
            print(f"wrote {target}")
    if wrote == 0:
        raise ConfigError(f"no residual/evaluation CSV files in {bundle}")
    return EXIT_OK


_DISPATCH = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "export-plotdata": cmd_export_plotdata,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
