"""Parameter estimation against voltage-current data.

The objective is the pooled weighted RMSE between measured and simulated
pack voltages over one or more datasets. Minimization runs a portfolio of
population metaheuristics (differential evolution, particle swarm, a
covariance-adapting evolution strategy) that share one population archive;
a switching rule hands the archive to the next optimizer when the incumbent
stops improving. Deterministic for a fixed seed regardless of worker count:
all random draws happen in the driver, workers only evaluate candidates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from .errors import (CalibrationError, DomainError, InputError,
                     KineticsError, RotorbattError, SimulationError,
                     StepFailureError)
from .mesh import build_mesh
from .parameters import ParameterSet, default_parameters
from .profiles import CurrentProfile, constant_current
from .solver import CellSimulator, SolverOptions, VoltageTrace
from .state import initial_state
from .validation import check_int, check_positive

FAILURE_PENALTY = 1.0e6  # V, large finite score for failed simulations
LOG_SCALE_RATIO = 100.0  # bounds spanning >= this ratio search in log space


# ----------------------------------------------------------------------
# objective pieces
def _residual_sse(measured: VoltageTrace, simulated: VoltageTrace,
                  v_floor_pack: float | None = None):
    """Sum of squared pack-voltage residuals, padding a truncated
    simulation with its cutoff voltage. Returns (sse, n, padded)."""
    n_meas = len(measured)
    n_sim = len(simulated)
    if n_sim > n_meas:
        raise InputError(
            f"simulated trace ({n_sim}) longer than measured ({n_meas})")
    if n_sim < n_meas and not simulated.truncated:
        raise InputError(
            f"trace length mismatch: measured {n_meas}, simulated {n_sim} "
            "and not truncated")
    if n_sim and not np.allclose(measured.times[:n_sim], simulated.times,
                                 rtol=0.0, atol=1e-9):
        raise InputError("measured and simulated timestamps differ")
    resid = measured.pack_voltage[:n_sim] - simulated.pack_voltage
    sse = float(resid @ resid)
    if n_sim < n_meas:
        if v_floor_pack is None:
            if simulated.truncation_voltage is None:
                raise InputError("truncated trace lacks a cutoff voltage")
            v_floor_pack = simulated.truncation_voltage
        tail = measured.pack_voltage[n_sim:] - v_floor_pack
        sse += float(tail @ tail)
    return sse, n_meas, n_sim < n_meas


def rmse(measured: VoltageTrace, simulated: VoltageTrace) -> float:
    """Root-mean-square pack-voltage error; a simulation truncated early by
    the voltage cutoff is extended with that cutoff voltage."""
    v_pad = None
    if simulated.truncated and simulated.truncation_voltage is not None:
        # the cutoff is cell-level; scale it to the pack basis
        ratio = 1.0
        if len(simulated) and simulated.cell_voltage[-1] != 0:
            ratio = simulated.pack_voltage[-1] / simulated.cell_voltage[-1]
        v_pad = simulated.truncation_voltage * ratio
    sse, n, _ = _residual_sse(measured, simulated, v_floor_pack=v_pad)
    return math.sqrt(sse / n)


def generate_rpt(kind: str, params: ParameterSet, rate: float | None = None,
                 n_pulses: int = 20, horizon_margin: float = 1.12
                 ) -> CurrentProfile:
    """Reference performance test profiles sized from the rated capacity.

    cc kinds discharge at 0.1C or 2C for the nominal duration times a margin
    so the run always reaches the cutoff; pulse emits n_pulses repetitions
    of 10 s at 2C followed by 40 s of rest.
    """
    q = params.Q_rated
    if kind == "cc_0p1c":
        amps = 0.1 * q
        duration = horizon_margin * 10.0 * 3600.0
        prof = constant_current(amps, duration, rate or 0.05)
    elif kind == "cc_2c":
        amps = 2.0 * q
        duration = horizon_margin * 0.5 * 3600.0
        prof = constant_current(amps, duration, rate or 0.5)
    elif kind == "pulse":
        check_int(n_pulses, "n_pulses", minimum=1)
        r = rate or 1.0
        on = np.full(int(round(10.0 * r)), 2.0 * q)
        off = np.zeros(int(round(40.0 * r)))
        samples = np.tile(np.concatenate([on, off]), n_pulses)
        prof = CurrentProfile(samples=samples, sample_rate=r, label="other",
                              source={"kind": "pulse", "n_pulses": n_pulses})
    else:
        raise InputError(f"unknown RPT kind {kind!r}")
    prof.source["kind"] = kind
    return prof


# ----------------------------------------------------------------------
# problem / result containers
@dataclass
class CalibrationDataset:
    """One (stimulus, measurement) pair with its pooling weight."""

    profile: CurrentProfile
    measured: VoltageTrace
    weight: float = 1.0
    initial_soc: float = 1.0
    voltage: str = "pack"  # which basis the measured file carried

    def __post_init__(self):
        check_positive(self.weight, "weight")
        if not 0.0 <= self.initial_soc <= 1.0:
            raise InputError("initial_soc must lie in [0, 1]")
        if self.voltage not in ("pack", "cell"):
            raise InputError("voltage basis must be 'pack' or 'cell'")
        if len(self.measured) != len(self.profile):
            raise InputError(
                "measured trace and profile must share sample times")

    def normalized(self, n_series: int) -> "CalibrationDataset":
        """Return a copy whose measured trace has consistent cell and pack
        columns regardless of which basis the file carried."""
        m = self.measured
        if self.voltage == "cell":
            cell = m.cell_voltage
        else:
            cell = m.pack_voltage / n_series
        fixed = VoltageTrace(
            times=m.times, applied_current=m.applied_current,
            cell_voltage=cell, pack_voltage=n_series * cell,
            temperature=m.temperature, truncated=m.truncated,
            truncation_voltage=m.truncation_voltage)
        return CalibrationDataset(self.profile, fixed, self.weight,
                                  self.initial_soc, "pack")


@dataclass
class CalibrationProblem:
    datasets: list
    free_parameters: dict          # name -> (lower, upper)
    fixed_parameters: ParameterSet
    budget: int = 2000
    seed: int = 0
    population: int = 32
    optimizers: tuple = ("de", "pso", "cma")
    switch_window: int = 5
    switch_delta: float = 1e-3
    stagnation_window: int = 20
    stagnation_delta: float = 1e-5
    n_jobs: int = 1
    mesh_shape: dict = field(default_factory=dict)
    options: SolverOptions | None = None

    def __post_init__(self):
        if not self.datasets:
            raise InputError("calibration needs at least one dataset")
        if not self.free_parameters:
            raise InputError("calibration needs at least one free parameter")
        probe = self.fixed_parameters.to_dict()
        for name, bounds in self.free_parameters.items():
            if name not in probe or name == "degradation":
                raise InputError(f"unknown free parameter {name!r}")
            lo, hi = float(bounds[0]), float(bounds[1])
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InputError(
                    f"free parameter {name!r} needs finite bounds with "
                    "lower < upper")
        check_int(self.budget, "budget", minimum=1)
        check_int(self.population, "population", minimum=4)
        if self.budget < self.population:
            raise InputError(
                f"budget {self.budget} is below the population size "
                f"{self.population}")
        if not self.optimizers:
            raise InputError("optimizer portfolio is empty")
        for opt in self.optimizers:
            if opt not in ("de", "pso", "cma"):
                raise InputError(f"unknown optimizer {opt!r}")


@dataclass
class CalibrationResult:
    best_parameters: ParameterSet
    best_rmse: float
    evaluation_count: int
    convergence_history: np.ndarray   # (n_eval, 2): index, best-so-far
    per_dataset_rmse: list
    truncated_evaluations: int = 0
    stopped_on: str = "budget"
    switch_log: list = field(default_factory=list)

    def write_json(self, path) -> None:
        doc = {
            "best_parameters": self.best_parameters.to_dict(),
            "best_rmse_v": self.best_rmse,
            "evaluation_count": self.evaluation_count,
            "per_dataset_rmse_v": list(self.per_dataset_rmse),
            "truncated_evaluations": self.truncated_evaluations,
            "stopped_on": self.stopped_on,
            "switch_log": self.switch_log,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n",
                              encoding="utf-8")

    def write_convergence_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["evaluation", "best_rmse_v"])
            for idx, val in self.convergence_history:
                writer.writerow([int(idx), repr(float(val))])


# ----------------------------------------------------------------------
# search space
class _SearchSpace:
    """Maps the unit cube to native parameter values, log-scaling axes
    whose bounds span at least LOG_SCALE_RATIO."""

    def __init__(self, free: dict):
        self.names = sorted(free)
        self.lo = np.array([float(free[n][0]) for n in self.names])
        self.hi = np.array([float(free[n][1]) for n in self.names])
        self.log = (self.lo > 0) & (self.hi / np.where(self.lo > 0, self.lo, 1)
                                    >= LOG_SCALE_RATIO)
        self.dim = len(self.names)

    def to_native(self, z: np.ndarray) -> dict:
        z = np.clip(z, 0.0, 1.0)
        lin = self.lo + z * (self.hi - self.lo)
        with np.errstate(divide="ignore"):
            geo = np.exp(np.log(self.lo, where=self.log,
                                out=np.zeros_like(self.lo))
                         + z * (np.log(self.hi, where=self.log,
                                       out=np.zeros_like(self.hi))
                                - np.log(self.lo, where=self.log,
                                         out=np.zeros_like(self.lo))))
        vals = np.where(self.log, geo, lin)
        return dict(zip(self.names, vals))


# ----------------------------------------------------------------------
# evaluation context (picklable; workers only call evaluate)
class _EvalContext:
    def __init__(self, problem: CalibrationProblem):
        self.space = _SearchSpace(problem.free_parameters)
        self.base = problem.fixed_parameters
        n_series = self.base.n_series
        self.datasets = [d.normalized(n_series) for d in problem.datasets]
        self.mesh = build_mesh(self.base, **problem.mesh_shape)
        self.options = problem.options or SolverOptions()

    def make_params(self, z: np.ndarray) -> ParameterSet:
        return self.base.replace(**self.space.to_native(z))

    def evaluate(self, z: np.ndarray):
        """Pooled weighted RMSE for one candidate.

        Returns (score, per_dataset_rmse, any_truncated); failures map to
        the finite penalty so selection can continue.
        """
        try:
            params = self.make_params(z)
            params.validate()
        except RotorbattError:
            return FAILURE_PENALTY, None, False
        try:
            sim = CellSimulator(params, self.mesh, self.options)
            n_series = params.n_series
            n_tot = 0.0
            w_sse = 0.0
            per = []
            padded_any = False
            for ds in self.datasets:
                state = initial_state(params, self.mesh, soc=ds.initial_soc,
                                      ocp_n=sim.ocp_n, ocp_p=sim.ocp_p)
                trace, _, _ = sim.run(state, ds.profile)
                v_pad = None
                if trace.truncated and trace.truncation_voltage is not None:
                    v_pad = n_series * trace.truncation_voltage
                sse, n, padded = _residual_sse(ds.measured, trace,
                                               v_floor_pack=v_pad)
                per.append(math.sqrt(sse / n))
                w_sse += ds.weight * sse
                n_tot += ds.weight * n
                padded_any = padded_any or padded
            return math.sqrt(w_sse / n_tot), per, padded_any
        except (SimulationError, StepFailureError, KineticsError,
                DomainError, InputError):
            return FAILURE_PENALTY, None, False


def _eval_batch(ctx: _EvalContext, zs: np.ndarray, n_jobs: int):
    if n_jobs == 1:
        return [ctx.evaluate(z) for z in zs]
    return Parallel(n_jobs=n_jobs)(delayed(ctx.evaluate)(z) for z in zs)


# ----------------------------------------------------------------------
# optimizers over a shared archive in the unit cube
class _DifferentialEvolution:
    """rand/1/bin with greedy slot selection."""

    def __init__(self, popsize: int, dim: int, f: float = 0.7,
                 cr: float = 0.9):
        self.popsize = popsize
        self.dim = dim
        self.f = f
        self.cr = cr

    def reseed(self, archive_x, archive_f, rng):
        pass  # stateless

    def propose(self, archive_x, archive_f, rng):
        n = self.popsize
        cand = np.empty_like(archive_x)
        for i in range(n):
            others = [k for k in range(n) if k != i]
            r1, r2, r3 = rng.choice(others, size=3, replace=False)
            mutant = archive_x[r1] + self.f * (archive_x[r2] - archive_x[r3])
            cross = rng.random(self.dim) < self.cr
            cross[rng.integers(self.dim)] = True
            cand[i] = np.where(cross, mutant, archive_x[i])
        return np.clip(cand, 0.0, 1.0)

    def update(self, archive_x, archive_f, cand_x, cand_f):
        better = cand_f <= archive_f
        archive_x[better] = cand_x[better]
        archive_f[better] = cand_f[better]
        return archive_x, archive_f


class _ParticleSwarm:
    """Global-best swarm; the archive holds current positions."""

    def __init__(self, popsize: int, dim: int, w: float = 0.72,
                 c1: float = 1.49, c2: float = 1.49):
        self.popsize = popsize
        self.dim = dim
        self.w = w
        self.c1 = c1
        self.c2 = c2
        self.v = None
        self.pbest_x = None
        self.pbest_f = None

    def reseed(self, archive_x, archive_f, rng):
        self.v = np.zeros_like(archive_x)
        self.pbest_x = archive_x.copy()
        self.pbest_f = archive_f.copy()

    def propose(self, archive_x, archive_f, rng):
        g = self.pbest_x[int(np.argmin(self.pbest_f))]
        r1 = rng.random(archive_x.shape)
        r2 = rng.random(archive_x.shape)
        self.v = (self.w * self.v
                  + self.c1 * r1 * (self.pbest_x - archive_x)
                  + self.c2 * r2 * (g - archive_x))
        np.clip(self.v, -0.5, 0.5, out=self.v)
        return np.clip(archive_x + self.v, 0.0, 1.0)

    def update(self, archive_x, archive_f, cand_x, cand_f):
        better = cand_f <= self.pbest_f
        self.pbest_x[better] = cand_x[better]
        self.pbest_f[better] = cand_f[better]
        return cand_x.copy(), cand_f.copy()


class _CmaEs:
    """(mu/mu_w, lambda) covariance-matrix-adapting evolution strategy."""

    def __init__(self, popsize: int, dim: int):
        self.popsize = popsize
        self.dim = dim

    def reseed(self, archive_x, archive_f, rng):
        lam, d = self.popsize, self.dim
        mu = lam // 2
        w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.w = w / w.sum()
        self.mu = mu
        self.mu_eff = 1.0 / np.sum(self.w ** 2)
        self.c_sigma = (self.mu_eff + 2) / (d + self.mu_eff + 5)
        self.d_sigma = (1 + 2 * max(0.0, math.sqrt((self.mu_eff - 1)
                                                   / (d + 1)) - 1)
                        + self.c_sigma)
        self.c_c = (4 + self.mu_eff / d) / (d + 4 + 2 * self.mu_eff / d)
        self.c_1 = 2 / ((d + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(1 - self.c_1,
                        2 * (self.mu_eff - 2 + 1 / self.mu_eff)
                        / ((d + 2) ** 2 + self.mu_eff))
        self.chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))
        order = np.argsort(archive_f)
        elect = archive_x[order[:mu]]
        self.m = self.w @ elect
        self.sigma = float(np.clip(archive_x.std(axis=0).mean(), 1e-3, 0.3))
        self.C = np.eye(d)
        self.p_sigma = np.zeros(d)
        self.p_c = np.zeros(d)
        self.gen = 0

    def propose(self, archive_x, archive_f, rng):
        d = self.dim
        vals, vecs = np.linalg.eigh(self.C)
        vals = np.maximum(vals, 1e-14)
        self._B = vecs
        self._D = np.sqrt(vals)
        z = rng.standard_normal((self.popsize, d))
        y = z @ (vecs * self._D).T
        return np.clip(self.m + self.sigma * y, 0.0, 1.0)

    def update(self, archive_x, archive_f, cand_x, cand_f):
        d = self.dim
        order = np.argsort(cand_f)
        elect = cand_x[order[:self.mu]]
        y_w = (self.w @ elect - self.m) / self.sigma
        m_new = self.m + self.sigma * y_w
        inv_sqrt = (self._B / self._D) @ self._B.T
        self.gen += 1
        self.p_sigma = ((1 - self.c_sigma) * self.p_sigma
                        + math.sqrt(self.c_sigma * (2 - self.c_sigma)
                                    * self.mu_eff) * (inv_sqrt @ y_w))
        denom = math.sqrt(1 - (1 - self.c_sigma) ** (2 * self.gen))
        h_sigma = (np.linalg.norm(self.p_sigma) / denom
                   < (1.4 + 2 / (d + 1)) * self.chi_n)
        self.p_c = ((1 - self.c_c) * self.p_c
                    + (math.sqrt(self.c_c * (2 - self.c_c) * self.mu_eff)
                       * y_w if h_sigma else 0.0))
        ys = (elect - self.m) / self.sigma
        rank_mu = (self.w[:, None] * ys).T @ ys
        delta = (1 - h_sigma) * self.c_c * (2 - self.c_c)
        self.C = ((1 - self.c_1 - self.c_mu) * self.C
                  + self.c_1 * (np.outer(self.p_c, self.p_c)
                                + delta * self.C)
                  + self.c_mu * rank_mu)
        self.C = 0.5 * (self.C + self.C.T)
        self.sigma *= math.exp((self.c_sigma / self.d_sigma)
                               * (np.linalg.norm(self.p_sigma)
                                  / self.chi_n - 1))
        self.sigma = float(np.clip(self.sigma, 1e-8, 0.5))
        self.m = m_new
        return cand_x.copy(), cand_f.copy()


_OPTIMIZER_TYPES = {
    "de": _DifferentialEvolution,
    "pso": _ParticleSwarm,
    "cma": _CmaEs,
}


# ----------------------------------------------------------------------
# switching rule
def switch_strategy(best_per_generation, active: int, n_optimizers: int,
                    window: int = 5, delta: float = 1e-3) -> int:
    """Next optimizer id: rotate away from the incumbent when the relative
    best-so-far improvement over the last `window` generations drops below
    `delta`; insufficient history keeps the incumbent."""
    check_int(n_optimizers, "n_optimizers", minimum=1)
    if len(best_per_generation) <= window:
        return active
    prev = best_per_generation[-window - 1]
    cur = best_per_generation[-1]
    rel = (prev - cur) / max(abs(prev), 1e-300)
    if rel < delta:
        return (active + 1) % n_optimizers
    return active


class _SwitchController:
    """Applies switch_strategy but never more often than once per window."""

    def __init__(self, n_optimizers: int, window: int, delta: float):
        self.n = n_optimizers
        self.window = window
        self.delta = delta
        self.active = 0
        self.since_switch = 0
        self.log = []

    def update(self, best_per_generation, generation: int) -> int:
        self.since_switch += 1
        if self.n == 1 or self.since_switch < self.window:
            return self.active
        nxt = switch_strategy(best_per_generation, self.active, self.n,
                              self.window, self.delta)
        if nxt != self.active:
            self.log.append({"generation": generation,
                             "from": self.active, "to": nxt})
            self.active = nxt
            self.since_switch = 0
        return self.active


# ----------------------------------------------------------------------
# driver
def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Minimize the pooled RMSE; returns the best candidate found within the
    evaluation budget (or earlier on stagnation)."""
    ctx = _EvalContext(problem)
    rng = np.random.default_rng(problem.seed)
    pop = problem.population
    dim = ctx.space.dim

    history = []
    eval_count = 0
    best_f = math.inf
    best_z = None
    best_per = None
    truncated_evals = 0

    def record(results, zs):
        nonlocal eval_count, best_f, best_z, best_per, truncated_evals
        scores = np.empty(len(results))
        for k, (score, per, padded) in enumerate(results):
            eval_count += 1
            scores[k] = score
            if padded:
                truncated_evals += 1
            if score < best_f:
                best_f = score
                best_z = zs[k].copy()
                best_per = per
            history.append((eval_count, best_f))
        if np.all(scores >= FAILURE_PENALTY):
            raise CalibrationError(
                "every candidate in a generation failed to simulate")
        return scores

    z0 = rng.random((pop, dim))
    arch_f = record(_eval_batch(ctx, z0, problem.n_jobs), z0)
    arch_x = z0

    controller = _SwitchController(len(problem.optimizers),
                                   problem.switch_window,
                                   problem.switch_delta)
    instances = {}
    active_id = problem.optimizers[controller.active]
    gen_best = [best_f]
    generation = 1
    stopped_on = "budget"
    while eval_count < problem.budget:
        if active_id not in instances:
            inst = _OPTIMIZER_TYPES[active_id](pop, dim)
            instances[active_id] = inst
            inst.reseed(arch_x, arch_f, rng)
        opt = instances[active_id]
        cand = opt.propose(arch_x, arch_f, rng)
        remaining = problem.budget - eval_count
        if remaining < pop:
            # final partial generation: scored for the history, but the
            # archive update rules assume full generations
            part = cand[:remaining]
            record(_eval_batch(ctx, part, problem.n_jobs), part)
            break
        cand_f = record(_eval_batch(ctx, cand, problem.n_jobs), cand)
        arch_x, arch_f = opt.update(arch_x, arch_f, cand, cand_f)
        generation += 1
        gen_best.append(best_f)
        sw = problem.stagnation_window
        if len(gen_best) > sw:
            prev = gen_best[-sw - 1]
            if (prev - best_f) / max(abs(prev), 1e-300) <= \
                    problem.stagnation_delta:
                stopped_on = "stagnation"
                break
        prev_active = controller.active
        controller.update(gen_best, generation)
        if controller.active != prev_active:
            active_id = problem.optimizers[controller.active]
            if active_id in instances:
                instances[active_id].reseed(arch_x, arch_f, rng)

    if best_z is None:
        raise CalibrationError("no candidate was ever evaluated")
    best_params = ctx.make_params(best_z)
    if best_per is None:
        best_per = []
    return CalibrationResult(
        best_parameters=best_params,
        best_rmse=best_f,
        evaluation_count=eval_count,
        convergence_history=np.array(history, dtype=float),
        per_dataset_rmse=best_per,
        truncated_evaluations=truncated_evals,
        stopped_on=stopped_on,
        switch_log=controller.log,
    )


# ----------------------------------------------------------------------
# estimator wrapper
class PackCalibrator(BaseEstimator):
    """Estimator facade: fit() calibrates free parameters on datasets,
    predict() simulates profiles with the fitted parameter set."""

    def __init__(self, free_parameters=None, base_parameters=None,
                 budget: int = 2000, seed: int = 0, population: int = 32,
                 n_jobs: int = 1, mesh_shape=None, options=None):
        self.free_parameters = free_parameters
        self.base_parameters = base_parameters
        self.budget = budget
        self.seed = seed
        self.population = population
        self.n_jobs = n_jobs
        self.mesh_shape = mesh_shape
        self.options = options

    def fit(self, X, y=None):
        """X: list of CalibrationDataset."""
        base = self.base_parameters or default_parameters()
        problem = CalibrationProblem(
            datasets=list(X),
            free_parameters=dict(self.free_parameters or {}),
            fixed_parameters=base,
            budget=self.budget,
            seed=self.seed,
            population=self.population,
            n_jobs=self.n_jobs,
            mesh_shape=dict(self.mesh_shape or {}),
            options=self.options,
        )
        self.result_ = calibrate(problem)
        self.best_parameters_ = self.result_.best_parameters
        return self

    def predict(self, X, initial_soc: float = 1.0):
        """Simulate profile(s) with the fitted parameters."""
        if not hasattr(self, "best_parameters_"):
            raise InputError("PackCalibrator.predict called before fit")
        params = self.best_parameters_
        mesh = build_mesh(params, **dict(self.mesh_shape or {}))
        options = self.options or SolverOptions()
        single = isinstance(X, CurrentProfile)
        profiles = [X] if single else list(X)
        out = []
        for prof in profiles:
            sim = CellSimulator(params, mesh, options)
            state = initial_state(params, mesh, soc=initial_soc,
                                  ocp_n=sim.ocp_n, ocp_p=sim.ocp_p)
            trace, _, _ = sim.run(state, prof)
            out.append(trace)
        return out[0] if single else out
