"""Command-line pipeline: calibrate | extract | replay | assess | report.

Every command reads an optional TOML config (section named after the
command) with flags overriding config values. Errors print one line of
JSON with a stable ``code`` field on stderr; exit codes are 0 (success),
1 (runtime failure), 2 (bad input or config).
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
from joblib import Parallel, delayed

try:
    import tomllib
except ModuleNotFoundError:  # 3.10 fallback
    import tomli as tomllib

from .assessment import (HealthReport, RechargePolicy, fit_baselines,
                         motion_report, replay)
from .calibration import (CalibrationDataset, CalibrationProblem, calibrate)
from .errors import InputError, RotorbattError
from .mesh import build_mesh
from .parameters import ParameterSet, default_parameters
from .profiles import (MOTION_TAGS, load_profile, moving_average, parse_log,
                       periodic_reconstruct, profile_stats, save_profile,
                       segment)
from .solver import SolverOptions, VoltageTrace
from .synthetic import DEFAULT_BANDS

NOMINAL_PACK_V = 14.8


@dataclass
class RunConfig:
    """Merged config document; resolves paths relative to the config file."""

    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls(raw={}, base_dir=Path.cwd())
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                return cls(raw=tomllib.load(fh), base_dir=path.parent)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"config file {path} is not valid TOML: {exc}")

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise InputError(f"config section [{name}] must be a table")
        return sec

    def resolve(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def _pick(flag, cfg: dict, key: str, default):
    """Flag wins, then config, then default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _existing(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise InputError(f"{what} not found: {path}")
    return Path(path)


def _load_params(cfg: dict, config: RunConfig) -> ParameterSet:
    if "params" not in cfg:
        return default_parameters()
    path = _existing(config.resolve(cfg["params"]), "parameter file")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"parameter file {path} is not valid JSON: {exc}")
    return ParameterSet.from_dict(data).validate()


def _solver_options(cfg: dict) -> SolverOptions:
    opts = SolverOptions()
    table = cfg.get("options", {})
    if not isinstance(table, dict):
        raise InputError("config key 'options' must be a table")
    for key, value in table.items():
        if not hasattr(opts, key):
            raise InputError(f"unknown solver option {key!r}")
        setattr(opts, key, value)
    return opts


def _mesh_shape(cfg: dict) -> dict:
    table = cfg.get("mesh", {})
    if not isinstance(table, dict):
        raise InputError("config key 'mesh' must be a table")
    allowed = {"N_n", "N_sep", "N_p", "N_r"}
    unknown = set(table) - allowed
    if unknown:
        raise InputError(f"unknown mesh keys: {sorted(unknown)}")
    return dict(table)


def _out_dir(flag, cfg: dict, config: RunConfig) -> Path:
    out = Path(_pick(flag, cfg, "out_dir", "out"))
    out = out if out.is_absolute() else config.resolve(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RotorbattError as exc:
            click.echo(json.dumps(exc.to_dict()), err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(json.dumps({"code": "input", "message": str(exc)}),
                       err=True)
            sys.exit(2)
        except Exception as exc:  # pragma: no cover - defensive
            click.echo(json.dumps({
                "code": "internal",
                "message": f"{type(exc).__name__}: {exc}"}), err=True)
            sys.exit(1)
    return wrapper


@click.group()
def main():
    """Motion-aware battery health assessment pipeline."""


# ----------------------------------------------------------------------
@main.command("calibrate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out-dir", default=None)
@click.option("--budget", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--population", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@cli_errors
def cmd_calibrate(config_path, out_dir, budget, seed, population, jobs):
    """Fit free parameters against measured voltage traces."""
    config = RunConfig.load(config_path)
    cfg = config.section("calibrate")
    params = _load_params(cfg, config)
    free = cfg.get("free")
    if not free:
        raise InputError("calibrate needs a [calibrate.free] table of "
                         "parameter bounds")
    entries = cfg.get("dataset")
    if not entries:
        raise InputError("calibrate needs at least one [[calibrate.dataset]]")
    datasets = []
    for entry in entries:
        prof_path = _existing(config.resolve(entry["profile"]),
                              "dataset profile")
        trace_path = _existing(config.resolve(entry["trace"]),
                               "dataset trace")
        profile = load_profile(prof_path)
        trace = VoltageTrace.from_csv(trace_path)
        datasets.append(CalibrationDataset(
            profile=profile, measured=trace,
            weight=float(entry.get("weight", 1.0)),
            initial_soc=float(entry.get("initial_soc", 1.0)),
            voltage=entry.get("voltage", "pack")))
    problem = CalibrationProblem(
        datasets=datasets,
        free_parameters={k: tuple(v) for k, v in free.items()},
        fixed_parameters=params,
        budget=int(_pick(budget, cfg, "budget", 2000)),
        seed=int(_pick(seed, cfg, "seed", 0)),
        population=int(_pick(population, cfg, "population", 32)),
        n_jobs=int(_pick(jobs, cfg, "jobs", 1)),
        mesh_shape=_mesh_shape(cfg),
        options=_solver_options(cfg))
    result = calibrate(problem)
    out = _out_dir(out_dir, cfg, config)
    result.write_json(out / "calibration_result.json")
    result.write_convergence_csv(out / "convergence.csv")
    click.echo(json.dumps({
        "best_rmse_v": result.best_rmse,
        "evaluation_count": result.evaluation_count,
        "stopped_on": result.stopped_on,
        "result": str(out / "calibration_result.json")}))


# ----------------------------------------------------------------------
@main.command("extract")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--out-dir", default=None)
@click.option("--labels", "labels_path", type=click.Path(), default=None)
@click.option("--window", type=int, default=None,
              help="Moving-average window, samples.")
@click.option("--target-duration", type=float, default=None)
@click.option("--stitch", type=click.Choice(["repeat", "crossfade"]),
              default=None)
@cli_errors
def cmd_extract(config_path, log_path, out_dir, labels_path, window,
                target_duration, stitch):
    """Parse a flight log, segment it, and emit per-motion profiles."""
    config = RunConfig.load(config_path)
    cfg = config.section("extract")
    log = _pick(log_path, cfg, "log", None)
    if log is None:
        raise InputError("extract needs --log or config key 'log'")
    log = _existing(config.resolve(log), "flight log")
    raw = parse_log(log, expected_rate=cfg.get("rate"))
    filtered = moving_average(raw, int(_pick(window, cfg, "window", 10)))

    labels = _pick(labels_path, cfg, "labels", None)
    if labels is not None:
        labels = _existing(config.resolve(labels), "label file")
        segments = segment(filtered, mode="label_file", label_file=labels)
    else:
        bands = {k: tuple(v)
                 for k, v in cfg.get("bands", DEFAULT_BANDS).items()}
        segments = segment(
            filtered, mode="threshold", bands=bands,
            window_s=float(cfg.get("window_s", 2.0)),
            min_duration_s=float(cfg.get("min_duration", 5.0)))
    if not segments:
        raise InputError("no motion segments found in the log")

    out = _out_dir(out_dir, cfg, config)
    rate = filtered.sample_rate
    (out / "segments.json").write_text(json.dumps([
        {"start": s.start, "end": s.end, "tag": s.tag,
         "start_s": s.start / rate, "end_s": s.end / rate}
        for s in segments], indent=2) + "\n", encoding="utf-8")

    target = float(_pick(target_duration, cfg, "target_duration", 60.0))
    mode = _pick(stitch, cfg, "stitch", "repeat")
    nominal_v = float(cfg.get("nominal_v", NOMINAL_PACK_V))
    longest = {}
    for seg in segments:
        if seg.length() > longest.get(seg.tag, (0, None))[0]:
            longest[seg.tag] = (seg.length(), seg)
    stats = {}
    written = []
    for tag, (_, seg) in sorted(longest.items()):
        prof = periodic_reconstruct(filtered, seg, target, stitch=mode)
        dest = out / f"profile_{tag}.csv"
        save_profile(prof, dest)
        stats[tag] = profile_stats(prof, nominal_v)
        written.append(str(dest))
    (out / "stats.json").write_text(
        json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps({"segments": len(segments),
                           "profiles": written}))


# ----------------------------------------------------------------------
def _recharge_policy(cfg: dict, mode_flag) -> RechargePolicy:
    table = cfg.get("recharge", {})
    if not isinstance(table, dict):
        raise InputError("config key 'recharge' must be a table")
    mode = mode_flag or table.get("mode", "cc_cv")
    return RechargePolicy(
        mode=mode,
        c_rate=float(table.get("c_rate", 1.0)),
        taper_c_rate=float(table.get("taper_c_rate", 0.05)),
        v_charge=table.get("v_charge"))


@main.command("replay")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--profile", "profile_path", type=click.Path(), default=None)
@click.option("--reps", type=int, default=None)
@click.option("--recharge", "recharge_mode",
              type=click.Choice(["cc_cv", "teleport"]), default=None)
@click.option("--initial-soc", type=float, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@cli_errors
def cmd_replay(config_path, profile_path, reps, recharge_mode, initial_soc,
               out_path):
    """Replay one profile with recharges and write its health report."""
    config = RunConfig.load(config_path)
    cfg = config.section("replay")
    prof = _pick(profile_path, cfg, "profile", None)
    if prof is None:
        raise InputError("replay needs --profile or config key 'profile'")
    profile = load_profile(_existing(config.resolve(prof), "profile"))
    params = _load_params(cfg, config)
    mesh = build_mesh(params, **_mesh_shape(cfg))
    report = replay(
        params, profile,
        repetitions=int(_pick(reps, cfg, "repetitions", 20)),
        recharge=_recharge_policy(cfg, recharge_mode),
        mesh=mesh, options=_solver_options(cfg),
        initial_soc=float(_pick(initial_soc, cfg, "initial_soc", 0.9)))
    dest = Path(_pick(out_path, cfg, "out", "health_report.json"))
    dest = dest if dest.is_absolute() else config.resolve(dest)
    report.write_json(dest)
    click.echo(json.dumps({"tag": report.tag, "lli": report.lli,
                           "capacity_fade": report.capacity_fade,
                           "report": str(dest)}))


# ----------------------------------------------------------------------
@main.command("assess")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--motion-dir", type=click.Path(), default=None,
              help="Directory of extract outputs (profile_<tag>.csv).")
@click.option("--out-dir", default=None)
@click.option("--reps", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@cli_errors
def cmd_assess(config_path, motion_dir, out_dir, reps, jobs):
    """Replay baselines plus motion profiles and emit normalized reports."""
    config = RunConfig.load(config_path)
    cfg = config.section("assess")
    params = _load_params(cfg, config)
    mesh = build_mesh(params, **_mesh_shape(cfg))
    options = _solver_options(cfg)
    repetitions = int(_pick(reps, cfg, "repetitions", 20))
    soc = float(cfg.get("initial_soc", 0.9))
    duration = float(cfg.get("baseline_duration", 60.0))
    rate = float(cfg.get("baseline_rate", 1.0))
    recharge = _recharge_policy(cfg, None)
    measure_fade = bool(cfg.get("measure_fade", True))

    levels = cfg.get("baselines", [16.0, 18.0, 20.0, 22.0])
    unit = cfg.get("baseline_unit", "amps")
    if unit not in ("amps", "c_rate"):
        raise InputError("baseline_unit must be 'amps' or 'c_rate'")
    if len(levels) < 2:
        raise InputError("assess needs at least two baseline levels")

    from .profiles import constant_current
    tasks = []
    for level in levels:
        amps = float(level) * (params.Q_rated if unit == "c_rate" else 1.0)
        tasks.append((f"cc_{level:g}",
                      constant_current(amps, duration, rate), "cc"))

    motion_sources = [config.resolve(p) for p in cfg.get("motions", [])]
    scan = _pick(motion_dir, cfg, "motion_dir", None)
    if scan is not None:
        scan = config.resolve(scan)
        if not Path(scan).is_dir():
            raise InputError(f"motion directory not found: {scan}")
        motion_sources.extend(sorted(Path(scan).glob("profile_*.csv")))
    for src in motion_sources:
        prof = load_profile(_existing(src, "motion profile"))
        tag = prof.label or "other"
        if tag == "cc":
            continue
        tasks.append((tag, prof, tag))

    n_jobs = int(_pick(jobs, cfg, "jobs", 1))
    runner = Parallel(n_jobs=n_jobs) if n_jobs != 1 else None
    call = delayed(replay) if runner else replay
    invocations = [
        call(params, prof, repetitions, recharge, mesh, options, soc,
             tag, measure_fade)
        for _, prof, tag in tasks]
    reports = runner(invocations) if runner else invocations

    out = _out_dir(out_dir, cfg, config)
    cc_reports, motion_reports = [], []
    for (name, _, _), report in zip(tasks, reports):
        report.write_json(out / f"report_{name}.json")
        (cc_reports if report.tag == "cc" else motion_reports).append(report)
    fit = fit_baselines(cc_reports)
    fit.write_json(out / "baseline_fit.json")
    rows = motion_report(cc_reports + motion_reports, fit, out_dir=out)
    click.echo(json.dumps({"rows": len(rows),
                           "comparison": str(out / "comparison.csv")}))


# ----------------------------------------------------------------------
@main.command("report")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--reports-dir", type=click.Path(), default=None)
@click.option("--out-dir", default=None)
@cli_errors
def cmd_report(config_path, reports_dir, out_dir):
    """Rebuild the comparison table from saved health-report JSON files."""
    config = RunConfig.load(config_path)
    cfg = config.section("report")
    src = _pick(reports_dir, cfg, "reports_dir", None)
    if src is None:
        raise InputError("report needs --reports-dir or config key "
                         "'reports_dir'")
    src = config.resolve(src)
    if not Path(src).is_dir():
        raise InputError(f"reports directory not found: {src}")
    files = sorted(Path(src).glob("report_*.json"))
    if not files:
        raise InputError(f"no report_*.json files in {src}")
    reports = []
    for path in files:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"report file {path} is not valid JSON: {exc}")
        reports.append(HealthReport.from_dict(data))
    cc = [r for r in reports if r.tag == "cc"]
    fit = fit_baselines(cc)
    out = _out_dir(out_dir, cfg, config)
    rows = motion_report(reports, fit, out_dir=out)
    click.echo(json.dumps({"rows": len(rows),
                           "comparison": str(out / "comparison.csv")}))


if __name__ == "__main__":
    main()
