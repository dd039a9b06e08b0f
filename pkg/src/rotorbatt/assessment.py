"""Replay-based health assessment with constant-current normalization.

A profile is replayed for a number of repetitions, recharging between
repetitions, with degradation carried across cycles. Constant-current
baseline replays spanning the motion profiles' energy range are fitted
with a line per degradation metric; motion metrics are then divided by
the baseline line evaluated at matched energy, so 1.0 reads "as degrading
as a constant current of equal energy".
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import FARADAY
from .degradation import DegradationState
from .errors import (InputError, KineticsError, NormalizationError,
                     SimulationError, StepFailureError)
from .mesh import Mesh, build_mesh
from .parameters import DegradationToggles, ParameterSet
from .profiles import MOTION_TAGS, CurrentProfile
from .solver import CellSimulator, RunStats, SolverOptions
from .state import CellState, initial_state
from .validation import check_int, check_positive

# metric key -> comparison-table column
METRIC_COLUMNS = {
    "lli": "lli_norm",
    "lam": "lam_norm",
    "sei_nom": "sei_nom_norm",
    "sei_crack": "sei_crack_norm",
    "plating": "plating_norm",
}
TABLE_COLUMNS = ("tag", "energy_wh", "lli_norm", "lam_norm",
                 "sei_nom_norm", "sei_crack_norm", "plating_norm")


def cyclable_inventory_moles(params: ParameterSet) -> float:
    """Lithium that can shuttle between the stoichiometry limits, mol.

    Uses the connected solid fraction so the figure stays consistent with
    the solver's conservation bookkeeping.
    """
    return (params.connected_fraction("neg") * params.A_cell * params.L_n
            * params.c_n_max * (params.theta_n_max - params.theta_n_min))


def _mol_to_ah(moles: float) -> float:
    return moles * FARADAY / 3600.0


@dataclass
class RechargePolicy:
    """How the cell returns to the start state between repetitions.

    cc_cv charges at c_rate to v_charge then tapers to taper_c_rate;
    teleport resets the electro-thermal state instantly (keeps degradation),
    for ablating recharge-phase aging.
    """

    mode: str = "cc_cv"
    c_rate: float = 1.0
    taper_c_rate: float = 0.05
    v_charge: float | None = None  # default: the solver's upper cutoff

    def __post_init__(self):
        if self.mode not in ("cc_cv", "teleport"):
            raise InputError("recharge mode must be 'cc_cv' or 'teleport'")
        check_positive(self.c_rate, "c_rate")
        check_positive(self.taper_c_rate, "taper_c_rate")


@dataclass
class HealthReport:
    """Cumulative degradation of one replayed profile."""

    tag: str
    repetitions: int
    truncated_cycles: int
    charge_throughput_ah: float
    energy_consumed_wh: float  # discharge-phase integral of V_pack * I dt
    lli: float
    lam_n: float
    lam_p: float
    loss_sei_nominal_ah: float
    loss_sei_crack_ah: float
    loss_plating_ah: float
    initial_inventory_ah: float
    capacity_fade: float
    temp_max_k: float
    temp_final_k: float

    @property
    def lam(self) -> float:
        return self.lam_n + self.lam_p

    def metric(self, key: str) -> float:
        if key == "lli":
            return self.lli
        if key == "lam":
            return self.lam
        if key == "sei_nom":
            return self.loss_sei_nominal_ah
        if key == "sei_crack":
            return self.loss_sei_crack_ah
        if key == "plating":
            return self.loss_plating_ah
        raise InputError(f"unknown metric {key!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HealthReport":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown report fields: {sorted(unknown)}")
        return cls(**data)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


def measure_capacity(params: ParameterSet, state: CellState,
                     mesh: Mesh, options: SolverOptions) -> float:
    """Dischargeable capacity of the given state, Ah.

    Freezes degradation, recharges CC-CV to the upper cutoff, then
    discharges at 1C to the lower cutoff and integrates the charge.
    """
    frozen = params.copy()
    frozen.degradation.toggles = DegradationToggles.all_off()
    sim = CellSimulator(frozen, mesh, options)
    probe = state.copy()
    q = params.Q_rated
    probe, _ = sim.run_cc(probe, -q, options.v_max)
    probe, _ = sim.run_cv(probe, options.v_max, q / 20.0)
    stats = RunStats()
    probe, stats = sim.run_cc(probe, q, options.v_min, stats=stats)
    return stats.charge_ah


def replay(params: ParameterSet, profile: CurrentProfile, repetitions: int,
           recharge: RechargePolicy | None = None,
           mesh: Mesh | None = None, options: SolverOptions | None = None,
           initial_soc: float = 1.0, tag: str | None = None,
           measure_fade: bool = True) -> HealthReport:
    """Cycle the profile with recharges, accumulating degradation.

    A repetition whose discharge hits the voltage cutoff is truncated,
    counted, and still recharged; a repetition that fails to simulate
    raises with its cycle index.
    """
    check_int(repetitions, "repetitions", minimum=0)
    if len(profile) == 0:
        raise InputError("profile is empty")
    recharge = recharge or RechargePolicy()
    mesh = mesh or build_mesh(params)
    options = options or SolverOptions()
    sim = CellSimulator(params, mesh, options)
    state = initial_state(params, mesh, soc=initial_soc,
                          ocp_n=sim.ocp_n, ocp_p=sim.ocp_p)

    inv_mol = cyclable_inventory_moles(params)
    inv_ah = _mol_to_ah(inv_mol)
    eps0_n, eps0_p = params.eps_am_n, params.eps_am_p

    cap_start = None
    if repetitions > 0 and measure_fade:
        cap_start = measure_capacity(params, state, mesh, options)

    q = params.Q_rated
    v_charge = recharge.v_charge if recharge.v_charge is not None \
        else options.v_max
    discharge = RunStats()
    temp_max = state.T
    truncated_cycles = 0
    for cycle in range(1, repetitions + 1):
        try:
            _, state, discharge = sim.run(state, profile, record=False,
                                          stats=discharge)
            if discharge.truncated:
                truncated_cycles += 1
                discharge.truncated = False  # per-cycle flag, counted above
            temp_max = max(temp_max, state.T)
            if recharge.mode == "teleport":
                fresh = initial_state(params, mesh, soc=initial_soc,
                                      ocp_n=sim.ocp_n, ocp_p=sim.ocp_p)
                fresh.degradation = state.degradation
                fresh.t = state.t
                state = fresh
            else:
                charge_stats = RunStats()
                state, charge_stats = sim.run_cc(
                    state, -recharge.c_rate * q, v_charge, stats=charge_stats)
                state, charge_stats = sim.run_cv(
                    state, v_charge, recharge.taper_c_rate * q,
                    stats=charge_stats)
                temp_max = max(temp_max, charge_stats.temp_max)
        except (SimulationError, StepFailureError, KineticsError) as exc:
            raise SimulationError(
                f"replay failed in cycle {cycle} of {repetitions}: {exc}",
                time_s=state.t) from exc

    deg = state.degradation
    capacity_fade = 0.0
    if repetitions > 0 and measure_fade and cap_start and cap_start > 0:
        cap_end = measure_capacity(params, state, mesh, options)
        capacity_fade = max(0.0, 1.0 - cap_end / cap_start)

    lli = deg.li_lost_total / inv_mol
    report = HealthReport(
        tag=tag or profile.label or "other",
        repetitions=repetitions,
        truncated_cycles=truncated_cycles,
        charge_throughput_ah=discharge.charge_ah,
        energy_consumed_wh=discharge.energy_wh,
        lli=lli,
        lam_n=1.0 - deg.eps_am_n / eps0_n,
        lam_p=1.0 - deg.eps_am_p / eps0_p,
        loss_sei_nominal_ah=_mol_to_ah(deg.li_lost_sei_nom),
        loss_sei_crack_ah=_mol_to_ah(deg.li_lost_sei_crack),
        loss_plating_ah=_mol_to_ah(deg.li_lost_plating),
        initial_inventory_ah=inv_ah,
        capacity_fade=capacity_fade,
        temp_max_k=max(temp_max, discharge.temp_max),
        temp_final_k=state.T,
    )
    if report.tag not in MOTION_TAGS:
        report.tag = "other"
    return report


# ----------------------------------------------------------------------
# baseline fitting and normalization
@dataclass
class BaselineFit:
    """Per-metric linear fits of degradation against consumed energy."""

    energies_wh: np.ndarray
    values: dict                 # metric -> y points
    slope: dict
    intercept: dict
    residual_abs: dict           # max |y - fit|
    residual_rel: dict           # max |y - fit| / fit (inf if fit <= 0)

    def predict(self, metric: str, energy_wh: float) -> float:
        if metric not in self.slope:
            raise InputError(f"metric {metric!r} not covered by the fit")
        return self.slope[metric] * energy_wh + self.intercept[metric]

    def to_dict(self) -> dict:
        return {
            "energies_wh": list(self.energies_wh),
            "values": {k: list(v) for k, v in self.values.items()},
            "slope": dict(self.slope),
            "intercept": dict(self.intercept),
            "residual_abs": dict(self.residual_abs),
            "residual_rel": dict(self.residual_rel),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


def fit_baselines(reports) -> BaselineFit:
    """Least-squares line per metric through the cc baseline reports."""
    reports = list(reports)
    if len(reports) < 2:
        raise InputError("baseline fit needs at least two cc reports")
    for r in reports:
        if r.tag != "cc":
            raise InputError(
                f"baseline reports must carry the cc tag, got {r.tag!r}")
    x = np.array([r.energy_consumed_wh for r in reports], dtype=float)
    span = max(abs(x).max(), 1e-30)
    for i in range(len(x)):
        for k in range(i + 1, len(x)):
            if abs(x[i] - x[k]) <= 1e-12 * span:
                raise InputError(
                    "baseline energies must be distinct, got "
                    f"{x[i]!r} twice")
    values, slope, intercept, res_abs, res_rel = {}, {}, {}, {}, {}
    for metric in METRIC_COLUMNS:
        y = np.array([r.metric(metric) for r in reports], dtype=float)
        m, b = np.polyfit(x, y, 1)
        yhat = m * x + b
        err = np.abs(y - yhat)
        values[metric] = y
        slope[metric] = float(m)
        intercept[metric] = float(b)
        res_abs[metric] = float(err.max())
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(yhat > 0, err / yhat, np.inf)
        res_rel[metric] = float(rel.max()) if np.all(yhat > 0) else math.inf
    order = np.argsort(x)
    return BaselineFit(energies_wh=x[order],
                       values={k: v[order] for k, v in values.items()},
                       slope=slope, intercept=intercept,
                       residual_abs=res_abs, residual_rel=res_rel)


def normalize(report: HealthReport, fit: BaselineFit) -> dict:
    """Metric -> {value, flagged}: value is metric / baseline-line(energy);
    a nonpositive baseline prediction flags the metric and reports it raw."""
    out = {}
    for metric in METRIC_COLUMNS:
        pred = fit.predict(metric, report.energy_consumed_wh)
        try:
            if pred <= 0:
                raise NormalizationError(
                    f"baseline prediction for {metric} is {pred!r} at "
                    f"{report.energy_consumed_wh!r} Wh")
            out[metric] = {"value": report.metric(metric) / pred,
                           "flagged": False}
        except NormalizationError:
            out[metric] = {"value": report.metric(metric), "flagged": True}
    return out


def motion_report(reports, fit: BaselineFit, out_dir=None,
                  basename: str = "comparison"):
    """Comparison rows (sorted by energy) plus optional CSV/JSON/plot files.

    Flagged metrics appear raw in the CSV; the JSON carries the flags.
    """
    reports = list(reports)
    if not reports:
        raise InputError("motion_report needs at least one report")
    rows = []
    for r in reports:
        norm = normalize(r, fit)
        row = {"tag": r.tag, "energy_wh": r.energy_consumed_wh}
        flags = {}
        for metric, col in METRIC_COLUMNS.items():
            row[col] = norm[metric]["value"]
            flags[metric] = norm[metric]["flagged"]
        rows.append((row, flags))
    rows.sort(key=lambda pair: pair[0]["energy_wh"])

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{basename}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            for row, _ in rows:
                writer.writerow([row["tag"]]
                                + [repr(float(row[c]))
                                   for c in TABLE_COLUMNS[1:]])
        doc = [{**row, "flags": flags} for row, flags in rows]
        (out_dir / f"{basename}.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        for metric, col in METRIC_COLUMNS.items():
            with open(out_dir / f"plot_{metric}.csv", "w", newline="",
                      encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["series", "x", "y"])
                for row, _ in rows:
                    writer.writerow([row["tag"],
                                     repr(float(row["energy_wh"])),
                                     repr(float(row[col]))])
    return [row for row, _ in rows]
