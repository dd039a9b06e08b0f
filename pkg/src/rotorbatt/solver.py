"""Implicit finite-volume solver for the coupled cell equations.

One time step solves the fully coupled nonlinear system (solid diffusion in
every particle, electrolyte diffusion/migration, solid and electrolyte
charge conservation, interfacial kinetics, lumped thermal balance) with a
damped Newton iteration on an analytic sparse Jacobian.

Unknown layout, one block per electrode node (width N_r + 4):

    [c_s shells (N_r) | j | phi_s | c_e | phi_e]

followed by [c_e | phi_e] per separator node, then the lumped temperature T
and the applied current I. Keeping I as an unknown with a mode row
(galvanostatic: I - I_target = 0; potentiostatic: V_cell - V_target = 0)
lets constant-current and constant-voltage stepping share one Jacobian
structure. The solid potential at the first negative-electrode node is
pinned to zero (gauge); the displaced charge equation is implied by the sum
of the remaining ones.

Sign conventions: discharge current positive; interfacial flux j positive
for delithiation.
"""

from __future__ import annotations

import csv as _csv
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .constants import FARADAY, GAS_CONSTANT
from .degradation import (StepFields, apply_degradation_step,
                          remove_li_from_anode, surface_stress)
from .errors import (InputError, KineticsError, SimulationError,
                     StepFailureError)
from .kinetics import (STOICH_EPS, STOICH_SLACK, electrolyte_conductivity,
                       electrolyte_conductivity_derivative)
from .mesh import Mesh, build_mesh
from .ocp import OcpCurve, default_curve
from .parameters import ParameterSet
from .state import CellState, initial_state


@dataclass
class SolverOptions:
    tol_newton: float = 1e-8      # scaled residual, inf norm
    polish_tol: float = 1e-11     # extra Newton polish target (conservation)
    max_newton: int = 25
    dt_floor: float = 1e-4        # s
    v_min: float = 2.5            # V per cell
    v_max: float = 4.2            # V per cell
    max_damping_halvings: int = 8
    fast_iters: int = 5           # doubling threshold for adaptive dt
    jump_split: int = 8           # first sub-step fraction after a current jump
    initial_soc: float = 1.0
    ocp_n: OcpCurve | None = None
    ocp_p: OcpCurve | None = None

    def copy(self) -> "SolverOptions":
        return dataclasses.replace(self)


@dataclass
class VoltageTrace:
    """Sampled terminal response.

    Sample ``i`` pairs ``applied_current[i]`` with the solver state after
    holding that current for one sample period starting at ``times[i]``.
    ``pack_voltage`` is ``n_series * cell_voltage`` by the same arithmetic
    that produced ``cell_voltage`` (no independent rounding).
    """

    times: np.ndarray
    applied_current: np.ndarray
    cell_voltage: np.ndarray
    pack_voltage: np.ndarray
    temperature: np.ndarray
    truncated: bool = False
    truncation_voltage: float | None = None  # cell-level cutoff that ended the run

    def __post_init__(self):
        n = len(self.times)
        for name in ("applied_current", "cell_voltage", "pack_voltage",
                     "temperature"):
            if len(getattr(self, name)) != n:
                raise InputError(f"VoltageTrace.{name} length mismatch")

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["t_s", "i_a", "v_cell_v", "v_pack_v", "temp_k"])
            for row in zip(self.times, self.applied_current, self.cell_voltage,
                           self.pack_voltage, self.temperature):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "VoltageTrace":
        from .errors import ParseError
        cols = [[], [], [], [], []]
        with open(path, newline="", encoding="utf-8") as fh:
            reader = _csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != \
                    ["t_s", "i_a", "v_cell_v", "v_pack_v", "temp_k"]:
                raise ParseError(
                    f"{path}: expected header t_s,i_a,v_cell_v,v_pack_v,temp_k",
                    row=1)
            for idx, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != 5:
                    raise ParseError(f"{path}: expected 5 columns", row=idx)
                try:
                    vals = [float(tok) for tok in rec]
                except ValueError:
                    raise ParseError(f"{path}: non-numeric value", row=idx)
                for c, v in zip(cols, vals):
                    c.append(v)
        if not cols[0]:
            raise ParseError(f"{path}: no data rows")
        return cls(*[np.array(c) for c in cols])


@dataclass
class RunStats:
    """Per-run accumulators integrated over accepted sub-steps."""

    charge_ah: float = 0.0
    energy_wh: float = 0.0    # discharge positive, exact sum of V_pack*I*dt
    steps: int = 0
    newton_iters: int = 0
    temp_max: float = 0.0
    truncated: bool = False


class _Pattern:
    """Fixed COO sparsity pattern with named value slices."""

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.slices: dict[str, slice] = {}
        self._n = 0

    def add(self, name: str, rows, cols) -> None:
        rows = np.asarray(rows, dtype=np.int32).ravel()
        cols = np.asarray(cols, dtype=np.int32).ravel()
        if rows.size != cols.size:
            raise ValueError(f"pattern block {name}: size mismatch")
        self.rows.append(rows)
        self.cols.append(cols)
        self.slices[name] = slice(self._n, self._n + rows.size)
        self._n += rows.size

    def finalize(self):
        self.row_idx = np.concatenate(self.rows)
        self.col_idx = np.concatenate(self.cols)
        self.nnz = self._n


class CellSimulator:
    """Owns one cell's parameters, mesh, and stepping machinery.

    Single-threaded by contract: distinct simulations need distinct
    instances (they are cheap to construct relative to a run).
    """

    def __init__(self, params: ParameterSet, mesh: Mesh | None = None,
                 options: SolverOptions | None = None):
        self.params = params.validate()
        self.mesh = mesh if mesh is not None else build_mesh(params)
        self.options = options if options is not None else SolverOptions()
        self.ocp_n = self.options.ocp_n or default_curve("neg")
        self.ocp_p = self.options.ocp_p or default_curve("pos")
        self._build_geometry()
        self._build_indices()
        self._build_pattern()

    # ------------------------------------------------------------------
    # construction
    def _build_geometry(self) -> None:
        p, m = self.params, self.mesh
        self.eps_x = np.concatenate([
            np.full(m.N_n, p.eps_n),
            np.full(m.N_sep, p.eps_sep),
            np.full(m.N_p, p.eps_p),
        ])
        dx = m.dx
        self.d_face = 0.5 * (dx[:-1] + dx[1:])
        d_eff = p.D_e * self.eps_x ** p.bruggeman
        # harmonic interface mean, constant because D_e is concentration-free
        self.D_face = self.d_face / (0.5 * dx[:-1] / d_eff[:-1]
                                     + 0.5 * dx[1:] / d_eff[1:])
        # normalized radial geometry shared by both electrodes
        self.r_alpha = m.r_faces ** 2           # face areas
        self.r_vol = m.shell_vol / 3.0          # shell volumes (factor r^3/3)
        self.dr_c = np.diff(m.r_centers)        # center spacing, normalized
        self.d_surf = 1.0 - m.r_centers[-1]     # outer center to surface

        self.electrodes = {}
        for name in ("neg", "pos"):
            if name == "neg":
                n, dxe, sl = m.N_n, m.dx_n, m.sl_n
                R, D, c_max = p.R_n, p.D_n, p.c_n_max
                i0_ref, a = p.i0_n_ref, p.a_n
                sigma_eff = p.sigma_n * p.eps_am_n
                curve = self.ocp_n
            else:
                n, dxe, sl = m.N_p, m.dx_p, m.sl_p
                R, D, c_max = p.R_p, p.D_p, p.c_p_max
                i0_ref, a = p.i0_p_ref, p.a_p
                sigma_eff = p.sigma_p * p.eps_am_p
                curve = self.ocp_p
            u_fn, du_fn = curve.interpolants()
            q_coef = D / (self.dr_c * R)
            al = self.r_alpha
            Nr = m.N_r
            diag_flux = np.zeros(Nr)
            diag_flux[1:] += al[1:Nr] * q_coef
            diag_flux[:-1] += al[1:Nr] * q_coef
            s_face = sigma_eff / dxe[:-1]
            self.electrodes[name] = {
                "n": n, "dx": dxe, "sl": sl, "R": R, "D": D, "c_max": c_max,
                "i0_ref": i0_ref, "a": a, "sigma_eff": sigma_eff,
                "curve": curve, "L": float(dxe.sum()),
                "u_fn": u_fn, "du_fn": du_fn,
                "th_lo": max(curve.theta_min, STOICH_EPS),
                "th_hi": min(curve.theta_max, 1.0 - STOICH_EPS),
                # radial flux coefficients D/dr at interior faces 1..N_r-1
                "q_coef": q_coef,
                "d_surf": self.d_surf * R,
                # state-independent Jacobian pieces
                "cs_diag_flux": np.tile(diag_flux, (n, 1)),
                "cs_offdiag": np.tile(-al[1:Nr] * q_coef, (n, 1)).ravel(),
                "fs_face_vals": np.concatenate([s_face, -s_face, -s_face, s_face]),
            }
        self.ce_face_coef = self.D_face / self.d_face
        self.ce_face_vals = np.concatenate([
            self.ce_face_coef, -self.ce_face_coef,
            -self.ce_face_coef, self.ce_face_coef])
        # terminal-voltage sensitivity to current: collector half-cell drops
        self._dv_di = -(m.dx_p[-1] / (2 * self.electrodes["pos"]["sigma_eff"])
                        + m.dx_n[0] / (2 * self.electrodes["neg"]["sigma_eff"])
                        ) / p.A_cell

    def _build_indices(self) -> None:
        m = self.mesh
        W = m.N_r + 4
        self.W = W
        off_n = 0
        off_s = m.N_n * W
        off_p = off_s + 2 * m.N_sep
        self.M = off_p + m.N_p * W + 2

        def electrode_idx(off, n):
            base = off + W * np.arange(n)[:, None]
            return {
                "cs": base + np.arange(m.N_r)[None, :],
                "j": base[:, 0] + m.N_r,
                "phis": base[:, 0] + m.N_r + 1,
                "ce": base[:, 0] + m.N_r + 2,
                "phie": base[:, 0] + m.N_r + 3,
            }

        self.ix = {
            "neg": electrode_idx(off_n, m.N_n),
            "pos": electrode_idx(off_p, m.N_p),
        }
        self.ix_ce_sep = off_s + 2 * np.arange(m.N_sep)
        self.ix_phie_sep = self.ix_ce_sep + 1
        self.ix_ce_x = np.concatenate([
            self.ix["neg"]["ce"], self.ix_ce_sep, self.ix["pos"]["ce"]])
        self.ix_phie_x = np.concatenate([
            self.ix["neg"]["phie"], self.ix_phie_sep, self.ix["pos"]["phie"]])
        self.iT = self.M - 2
        self.iI = self.M - 1
        self.gauge_row = int(self.ix["neg"]["phis"][0])
        # x-global j/a columns for electrolyte source terms: electrode nodes only
        self.ix_j_x = {
            "neg": self.ix["neg"]["j"],
            "pos": self.ix["pos"]["j"],
        }

    def _build_pattern(self) -> None:
        m = self.mesh
        pat = _Pattern()
        Nr = m.N_r
        for name in ("neg", "pos"):
            ix = self.ix[name]
            cs, jj = ix["cs"], ix["j"]
            pat.add(f"{name}_cs_diag", cs, cs)
            pat.add(f"{name}_cs_sub", cs[:, 1:], cs[:, :-1])
            pat.add(f"{name}_cs_super", cs[:, :-1], cs[:, 1:])
            pat.add(f"{name}_cs_j", cs[:, -1], jj)
            pat.add(f"{name}_bv_j", jj, jj)
            pat.add(f"{name}_bv_phis", jj, ix["phis"])
            pat.add(f"{name}_bv_phie", jj, ix["phie"])
            pat.add(f"{name}_bv_cout", jj, cs[:, -1])
            pat.add(f"{name}_bv_ce", jj, ix["ce"])
            pat.add(f"{name}_bv_T", jj, np.full_like(jj, self.iT))
            # solid-charge 4-way face scatter
            ph = ix["phis"]
            rf, cf = [], []
            for r_off, c_off in ((0, 0), (0, 1), (1, 0), (1, 1)):
                rf.append(ph[r_off:len(ph) - 1 + r_off])
                cf.append(ph[c_off:len(ph) - 1 + c_off])
            pat.add(f"{name}_fs_face", np.concatenate(rf), np.concatenate(cf))
            pat.add(f"{name}_fs_j", ph, ix["j"])
            bnd = ph[0] if name == "neg" else ph[-1]
            pat.add(f"{name}_fs_I", [bnd], [self.iI])
        pat.add("gauge", [self.gauge_row], [self.gauge_row])

        ce, fe = self.ix_ce_x, self.ix_phie_x
        pat.add("ce_diag", ce, ce)
        for label, rows_ix, cols_ix in (
                ("ce_face", ce, ce), ("fe_face_phi", fe, fe),
                ("fe_face_ce", fe, ce)):
            rf, cf = [], []
            for r_off, c_off in ((0, 0), (0, 1), (1, 0), (1, 1)):
                rf.append(rows_ix[r_off:len(rows_ix) - 1 + r_off])
                cf.append(cols_ix[c_off:len(cols_ix) - 1 + c_off])
            pat.add(label, np.concatenate(rf), np.concatenate(cf))
        fe_face_rows = np.concatenate([fe[:-1], fe[1:]])
        pat.add("fe_face_T", fe_face_rows, np.full_like(fe_face_rows, self.iT))
        for name in ("neg", "pos"):
            ix = self.ix[name]
            pat.add(f"{name}_ce_j", ix["ce"], ix["j"])
            pat.add(f"{name}_fe_j", ix["phie"], ix["j"])
        # thermal row
        pat.add("T_T", [self.iT], [self.iT])
        pat.add("T_I", [self.iT], [self.iI])
        pat.add("T_phi", [self.iT, self.iT],
                [self.ix["neg"]["phis"][0], self.ix["pos"]["phis"][-1]])
        pat.add("T_cs_n", np.full(self.ix["neg"]["cs"].size, self.iT),
                self.ix["neg"]["cs"])
        pat.add("T_cs_p", np.full(self.ix["pos"]["cs"].size, self.iT),
                self.ix["pos"]["cs"])
        # mode row
        pat.add("mode_I", [self.iI], [self.iI])
        pat.add("mode_phi", [self.iI, self.iI],
                [self.ix["neg"]["phis"][0], self.ix["pos"]["phis"][-1]])
        pat.finalize()
        self.pat = pat
        # mask that kills contributions scattered onto the gauge row
        self.gauge_mask = (pat.row_idx != self.gauge_row).astype(float)
        self.gauge_mask[pat.slices["gauge"]] = 1.0
        # dense LU beats the sparse factorization for small systems
        self._dense = self.M <= 320
        self._flat_idx = pat.row_idx.astype(np.int64) * self.M + pat.col_idx

    # ------------------------------------------------------------------
    # state <-> vector
    def pack(self, state: CellState) -> np.ndarray:
        u = np.zeros(self.M)
        for name, cs, phis, j in (("neg", state.c_s_n, state.phi_s_n, state.j_n),
                                  ("pos", state.c_s_p, state.phi_s_p, state.j_p)):
            ix = self.ix[name]
            u[ix["cs"]] = cs
            u[ix["phis"]] = phis
            u[ix["j"]] = j
        u[self.ix_ce_x] = state.c_e
        u[self.ix_phie_x] = state.phi_e
        u[self.iT] = state.T
        u[self.iI] = state.I_app
        return u

    def unpack(self, u: np.ndarray, template: CellState, t: float) -> CellState:
        ixn, ixp = self.ix["neg"], self.ix["pos"]
        return CellState(
            c_s_n=u[ixn["cs"]].copy(), c_s_p=u[ixp["cs"]].copy(),
            c_e=u[self.ix_ce_x].copy(),
            phi_s_n=u[ixn["phis"]].copy(), phi_s_p=u[ixp["phis"]].copy(),
            phi_e=u[self.ix_phie_x].copy(),
            j_n=u[ixn["j"]].copy(), j_p=u[ixp["j"]].copy(),
            T=float(u[self.iT]), t=t, I_app=float(u[self.iI]),
            degradation=template.degradation.copy(),
        )

    # ------------------------------------------------------------------
    # per-step context
    def _prepare_step(self, state: CellState, mode: str, target: float,
                      dt: float) -> None:
        p = self.params
        deg = state.degradation
        self._dt = dt
        self._mode = mode
        self._target = target
        self._u_old = self.pack(state)
        self._T_old = state.T
        d = p.degradation
        self._rfilm = {
            "neg": p.R_SEI + max(0.0, deg.L_sei_nom - d.L_sei_init) / d.kappa_sei,
            "pos": 0.0,
        }
        self._a_eff = {
            "neg": p.a_n * deg.eps_am_n / p.eps_am_n,
            "pos": p.a_p * deg.eps_am_p / p.eps_am_p,
        }
        i_1c = p.Q_rated
        i_ref = max(abs(target) if mode == "galv" else abs(state.I_app), i_1c)
        self._i_scale = i_ref / p.A_cell
        self._row_scale = self._build_row_scale()
        self._inv_scale = self.gauge_mask / self._row_scale[self.pat.row_idx]
        self._fill_constant_jac(dt)

    def _fill_constant_jac(self, dt: float) -> None:
        """Jacobian entries fixed for the whole step (scaled, gauge-masked).

        Iteration-dependent slices are overwritten by every assembly, so the
        stale content left here is never read.
        """
        p, m = self.params, self.mesh
        sl = self.pat.slices
        vals = np.empty(self.pat.nnz)
        for name in ("neg", "pos"):
            e = self.electrodes[name]
            a_eff = self._a_eff[name]
            n = e["n"]
            vals[sl[f"{name}_cs_diag"]] = (e["cs_diag_flux"]
                                           + e["R"] * self.r_vol / dt).ravel()
            vals[sl[f"{name}_cs_sub"]] = e["cs_offdiag"]
            vals[sl[f"{name}_cs_super"]] = e["cs_offdiag"]
            vals[sl[f"{name}_cs_j"]] = 1.0
            vals[sl[f"{name}_fs_face"]] = e["fs_face_vals"]
            vals[sl[f"{name}_fs_j"]] = a_eff * FARADAY * e["dx"]
            vals[sl[f"{name}_fs_I"]] = (1.0 if name == "pos" else -1.0) / p.A_cell
            vals[sl[f"{name}_ce_j"]] = -(1 - p.t_plus) * a_eff * e["dx"]
            vals[sl[f"{name}_fe_j"]] = -a_eff * FARADAY * e["dx"]
        vals[sl["gauge"]] = 1.0
        vals[sl["ce_diag"]] = self.eps_x * m.dx / dt
        vals[sl["ce_face"]] = self.ce_face_vals
        vals[sl["T_T"]] = p.thermal_mass / dt + p.h_conv_area
        if self._mode == "galv":
            vals[sl["mode_I"]] = 1.0
            vals[sl["mode_phi"]] = 0.0
        else:
            vals[sl["mode_I"]] = self._dv_di
            vals[sl["mode_phi"]] = np.array([-1.0, 1.0])
        self._vals0 = vals * self._inv_scale

    def _build_row_scale(self) -> np.ndarray:
        p, m = self.params, self.mesh
        dt = self._dt
        s = np.ones(self.M)
        for name in ("neg", "pos"):
            e = self.electrodes[name]
            ix = self.ix[name]
            j_scale = e["i0_ref"] / FARADAY + self._i_scale / (
                self._a_eff[name] * FARADAY * e["L"])
            s[ix["cs"]] = (e["c_max"] * e["R"] * self.r_vol / dt
                           + e["i0_ref"] / FARADAY)[None, :]
            s[ix["j"]] = j_scale
            s[ix["phis"]] = self._i_scale
        s[self.ix_phie_x] = self._i_scale
        s[self.ix_ce_x] = (self.eps_x * m.dx * p.c_e_init / dt
                           + self._i_scale * (1 - p.t_plus) / FARADAY)
        s[self.gauge_row] = 1.0
        s[self.iT] = p.thermal_mass / dt + p.h_conv_area
        s[self.iI] = max(abs(self._target), p.Q_rated) if self._mode == "galv" else 1.0
        return s

    # ------------------------------------------------------------------
    # assembly
    def _assemble(self, u: np.ndarray, want_jac: bool):
        p, m = self.params, self.mesh
        dt, u_old = self._dt, self._u_old
        Nr = m.N_r
        r = np.zeros(self.M)
        sl = self.pat.slices
        if want_jac:
            vals = self._vals0.copy()
            isc = self._inv_scale

            def put(name, arr):
                s_ = sl[name]
                vals[s_] = arr
                vals[s_] *= isc[s_]
        else:
            vals = None

        ce_x = u[self.ix_ce_x]
        fe_x = u[self.ix_phie_x]
        T = float(u[self.iT])
        I = float(u[self.iI])
        i_app = I / p.A_cell
        if ce_x.min() <= 0.0:
            raise KineticsError("electrolyte concentration reached zero")
        if not 150.0 < T < 600.0:
            raise KineticsError(f"temperature {T:.1f} K outside sane bounds")

        fT = FARADAY / (GAS_CONSTANT * T)
        extras = {"T": T, "I": I}

        # ---- electrodes: solid diffusion, kinetics, solid charge
        dU_bulk = {}
        for name in ("neg", "pos"):
            e = self.electrodes[name]
            ix = self.ix[name]
            n = e["n"]
            cs = u[ix["cs"]]
            cs_old = u_old[ix["cs"]]
            j = u[ix["j"]]
            phis = u[ix["phis"]]
            phie = u[ix["phie"]]
            ce = u[ix["ce"]]
            R_e, D = e["R"], e["D"]
            c_max = e["c_max"]
            a_eff = self._a_eff[name]
            dx = e["dx"]

            # radial diffusion
            q = e["q_coef"] * (cs[:, :-1] - cs[:, 1:])      # outward flux
            af = self.r_alpha[1:Nr] * q                     # area-weighted
            inflow = np.empty_like(cs)
            inflow[:, 0] = -af[:, 0]
            inflow[:, 1:Nr - 1] = af[:, :Nr - 2] - af[:, 1:Nr - 1]
            inflow[:, Nr - 1] = af[:, Nr - 2] - j
            r[ix["cs"]] = R_e * self.r_vol * (cs - cs_old) / dt - inflow

            # kinetics
            c_surf = cs[:, -1] - j * e["d_surf"] / D
            theta = c_surf / c_max
            if theta.min() < -STOICH_SLACK or theta.max() > 1 + STOICH_SLACK:
                raise KineticsError(
                    f"{name} surface stoichiometry left admissible window")
            theta_c = np.clip(theta, e["th_lo"], e["th_hi"])
            tb = float(np.dot(dx, cs @ m.shell_vol) / (e["L"] * c_max))
            tb = min(max(tb, e["th_lo"]), e["th_hi"])
            theta_all = np.append(theta_c, tb)
            U_all = e["u_fn"](theta_all)
            U, U_b = U_all[:-1], float(U_all[-1])
            extras[f"U_bulk_{name}"] = U_b

            rfilm = self._rfilm[name]
            eta = phis - phie - U - FARADAY * j * rfilm
            i0 = e["i0_ref"] * np.sqrt(ce / p.c_e_init) \
                * np.sqrt(theta_c * (1.0 - theta_c))
            with np.errstate(over="ignore"):
                E1 = np.exp(0.5 * fT * eta)
                E2 = np.exp(-0.5 * fT * eta)
            bv = (i0 / FARADAY) * (E1 - E2)
            r[ix["j"]] = j - bv

            # solid charge conservation
            sig = e["sigma_eff"]
            g = -sig * np.diff(phis) / dx[:-1]
            div = np.empty(n)
            div[:-1] = g
            div[-1] = i_app if name == "pos" else 0.0
            div[1:] -= g
            div[0] -= i_app if name == "neg" else 0.0
            r[ix["phis"]] = div + a_eff * FARADAY * j * dx

            if name == "neg":
                extras["eta_plating"] = phis - phie - FARADAY * j * rfilm
                extras["c_surf_n"] = c_surf
            else:
                extras["c_surf_p"] = c_surf

            if want_jac:
                dU_all = e["du_fn"](theta_all)
                dU, dU_b = dU_all[:-1], float(dU_all[-1])
                dU_bulk[name] = dU_b
                bv_eta = (i0 / FARADAY) * 0.5 * fT * (E1 + E2)
                bv_i0 = (E1 - E2) / FARADAY
                dth_dj = -e["d_surf"] / (D * c_max)
                di0_dth = i0 * (0.5 / theta_c - 0.5 / (1.0 - theta_c))
                deta_dj = -dU * dth_dj - FARADAY * rfilm
                put(f"{name}_bv_j", 1.0 - bv_i0 * di0_dth * dth_dj
                    - bv_eta * deta_dj)
                put(f"{name}_bv_phis", -bv_eta)
                put(f"{name}_bv_phie", bv_eta)
                put(f"{name}_bv_cout", -(bv_i0 * di0_dth - bv_eta * dU) / c_max)
                put(f"{name}_bv_ce", -bv_i0 * 0.5 * i0 / ce)
                put(f"{name}_bv_T", (eta / T) * bv_eta)

        # gauge: pin phi_s at the negative collector
        r[self.gauge_row] = u[self.gauge_row]

        # ---- electrolyte mass
        dx_x = m.dx
        ce_old = u_old[self.ix_ce_x]
        Fl = self.D_face * (ce_x[:-1] - ce_x[1:]) / self.d_face
        inflow = np.zeros(m.N_x)
        inflow[:-1] -= Fl
        inflow[1:] += Fl
        src = np.zeros(m.N_x)
        src[m.sl_n] = (1 - p.t_plus) * self._a_eff["neg"] * u[self.ix["neg"]["j"]]
        src[m.sl_p] = (1 - p.t_plus) * self._a_eff["pos"] * u[self.ix["pos"]["j"]]
        r[self.ix_ce_x] = (self.eps_x * dx_x * (ce_x - ce_old) / dt
                           - inflow - src * dx_x)

        # ---- electrolyte charge
        kap_node = electrolyte_conductivity(ce_x) * self.eps_x ** p.bruggeman
        h = 0.5 * dx_x
        kf = self.d_face / (h[:-1] / kap_node[:-1] + h[1:] / kap_node[1:])
        kD = 2.0 * kf * GAS_CONSTANT * T * (1 - p.t_plus) / FARADAY
        dphil = np.diff(fe_x)
        dlnc = np.diff(np.log(ce_x))
        ie = (-kf * dphil + kD * dlnc) / self.d_face
        div_e = np.zeros(m.N_x)
        div_e[:-1] += ie
        div_e[1:] -= ie
        r[self.ix_phie_x] = div_e - src * dx_x * FARADAY / (1 - p.t_plus)

        # ---- thermal
        ocv_bulk = extras["U_bulk_pos"] - extras["U_bulk_neg"]
        phis_n0 = u[self.ix["neg"]["phis"][0]]
        phis_pL = u[self.ix["pos"]["phis"][-1]]
        v_cell = (phis_pL - phis_n0) + I * self._dv_di
        extras["v_cell"] = v_cell
        extras["ocv_bulk"] = ocv_bulk
        r[self.iT] = (p.thermal_mass * (T - self._T_old) / dt
                      + p.h_conv_area * (T - p.T_amb)
                      - I * (ocv_bulk - v_cell))

        # ---- mode
        if self._mode == "galv":
            r[self.iI] = I - self._target
        else:
            r[self.iI] = v_cell - self._target

        if want_jac:
            pf = kf / self.d_face
            put("fe_face_phi", np.concatenate([pf, -pf, -pf, pf]))
            # c_e enters through the ln c term and kappa(c) (chain rule)
            dkap = (electrolyte_conductivity_derivative(ce_x)
                    * self.eps_x ** p.bruggeman)
            die_dkf = ie / kf          # ie is linear in kf (kD scales with kf)
            dkf_dkL = kf ** 2 * h[:-1] / (self.d_face * kap_node[:-1] ** 2)
            dkf_dkR = kf ** 2 * h[1:] / (self.d_face * kap_node[1:] ** 2)
            die_dcL = (-kD / (self.d_face * ce_x[:-1])
                       + die_dkf * dkf_dkL * dkap[:-1])
            die_dcR = (kD / (self.d_face * ce_x[1:])
                       + die_dkf * dkf_dkR * dkap[1:])
            put("fe_face_ce", np.concatenate(
                [die_dcL, die_dcR, -die_dcL, -die_dcR]))
            die_dT = kD * dlnc / (self.d_face * T)
            put("fe_face_T", np.concatenate([die_dT, -die_dT]))
            put("T_I", -(ocv_bulk - v_cell) + I * self._dv_di)
            put("T_phi", np.array([-I, I]))
            for name, key in (("neg", "T_cs_n"), ("pos", "T_cs_p")):
                e = self.electrodes[name]
                w = (e["dx"][:, None] * m.shell_vol[None, :]
                     / (e["L"] * e["c_max"]))
                sign = -1.0 if name == "neg" else 1.0
                # d(ocv)/d(c_s): pos adds U_p', neg subtracts U_n'
                put(key, (-I * sign * dU_bulk[name] * w).ravel())

        r /= self._row_scale
        if not np.all(np.isfinite(r)):
            raise KineticsError("non-finite residual")
        return r, vals, extras

    # ------------------------------------------------------------------
    # Newton
    def _factorize(self, vals):
        """Factor the Jacobian; returns a solve(b) callable."""
        if self._dense:
            J = np.bincount(self._flat_idx, weights=vals,
                            minlength=self.M * self.M).reshape(self.M, self.M)
            lu_piv = lu_factor(J, check_finite=False)
            return lambda b: lu_solve(lu_piv, b, check_finite=False)
        J = csc_matrix((vals, (self.pat.row_idx, self.pat.col_idx)),
                       shape=(self.M, self.M))
        return splu(J).solve

    def _newton(self):
        opts = self.options
        u = self._u_old.copy()
        if self._mode == "galv":
            u[self.iI] = self._target
        r, _, extras = self._assemble(u, want_jac=False)
        rn = float(np.max(np.abs(r)))
        iters = 0
        solve = None
        while rn >= opts.tol_newton:
            if iters >= opts.max_newton:
                raise StepFailureError(
                    f"Newton did not converge in {opts.max_newton} iterations",
                    residual_norm=rn)
            _, vals, _ = self._assemble(u, want_jac=True)
            try:
                solve = self._factorize(vals)
                du = solve(-r)
            except RuntimeError as exc:
                raise StepFailureError(f"linear solve failed: {exc}",
                                       residual_norm=rn)
            if not np.all(np.isfinite(du)):
                raise StepFailureError("singular Jacobian", residual_norm=rn)
            lam = 1.0
            accepted = False
            for _ in range(opts.max_damping_halvings + 1):
                try:
                    r_new, _, extras_new = self._assemble(u + lam * du,
                                                          want_jac=False)
                except KineticsError:
                    lam *= 0.5
                    continue
                rn_new = float(np.max(np.abs(r_new)))
                if rn_new < rn or rn_new < opts.tol_newton:
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                raise StepFailureError(
                    "Newton line search stalled", residual_norm=rn)
            u = u + lam * du
            r, rn, extras = r_new, rn_new, extras_new
            iters += 1
        # polish with the last factorization: a couple of cheap extra
        # corrections push the residual low enough that conservation drift
        # cannot accumulate over long runs
        if solve is not None:
            for _ in range(2):
                if rn <= opts.polish_tol:
                    break
                try:
                    u_try = u + solve(-r)
                    r_try, _, extras_try = self._assemble(u_try, want_jac=False)
                except KineticsError:
                    break
                rn_try = float(np.max(np.abs(r_try)))
                if not rn_try < rn:
                    break
                u, r, rn, extras = u_try, r_try, rn_try, extras_try
        return u, extras, iters

    # ------------------------------------------------------------------
    # public stepping
    def step(self, state: CellState, I_app: float, dt: float) -> CellState:
        """One implicit galvanostatic step of length dt, with degradation."""
        return self._step_mode(state, "galv", float(I_app), dt)

    def step_cv(self, state: CellState, v_cell: float, dt: float) -> CellState:
        """One implicit potentiostatic step holding the cell voltage."""
        return self._step_mode(state, "cv", float(v_cell), dt)

    def _step_mode(self, state: CellState, mode: str, target: float,
                   dt: float) -> CellState:
        if dt <= 0:
            raise InputError(f"dt must be > 0, got {dt}")
        self._prepare_step(state, mode, target, dt)
        u, extras, iters = self._newton()
        new = self.unpack(u, state, state.t + dt)
        self._last_extras = extras
        self._last_iters = iters
        d = self.params.degradation.toggles
        if d.sei_nominal or d.sei_crack or d.plating or d.cracking or d.lam:
            self._apply_degradation(new, extras, dt)
        return new

    def _apply_degradation(self, state: CellState, extras: dict,
                           dt: float) -> None:
        p, m = self.params, self.mesh
        dx_n, dx_p = m.dx_n, m.dx_p
        sig_n = surface_stress_field(state.c_s_n, extras["c_surf_n"], p, "neg",
                                     m.shell_vol)
        sig_p = surface_stress_field(state.c_s_p, extras["c_surf_p"], p, "pos",
                                     m.shell_vol)
        sigma_n = float(np.dot(dx_n, sig_n) / dx_n.sum())
        sigma_p = float(np.dot(dx_p, sig_p) / dx_p.sum())
        eta_pl = float(np.dot(dx_n, extras["eta_plating"]) / dx_n.sum())
        fields = StepFields(
            T=extras["T"], eta_plating=eta_pl,
            sigma_crack=sigma_n if p.degradation.crack_electrode == "neg"
            else sigma_p,
            sigma_n=sigma_n, sigma_p=sigma_p,
        )
        li = apply_degradation_step(state.degradation, p, fields, dt)
        f_conn = (p.connected_fraction("neg")
                  * state.degradation.eps_am_n / p.eps_am_n)
        remove_li_from_anode(state.c_s_n, li, p, m, f_conn)

    # ------------------------------------------------------------------
    # profile integration
    def run(self, state: CellState, profile, record: bool = True,
            stats: RunStats | None = None):
        """Integrate a CurrentProfile from the given state.

        Returns (VoltageTrace, final CellState, RunStats). The trace is
        truncated (and the returned state frozen at the truncation point)
        when the cell voltage leaves the configured cutoff window.
        """
        opts = self.options
        n = len(profile.samples)
        dt_sample = 1.0 / profile.sample_rate
        if stats is None:
            stats = RunStats()
        out_v = np.empty(n)
        out_T = np.empty(n)
        emitted = 0
        truncated = False
        cutoff_v = None
        h = dt_sample
        fast_streak = 0
        prev_i = state.I_app
        jump_tol = 2.0 * self.params.Q_rated  # split only on large steps
        for k in range(n):
            I = float(profile.samples[k])
            if abs(I - prev_i) > jump_tol:
                h = min(h, dt_sample / opts.jump_split)
                fast_streak = 0
            prev_i = I
            remaining = dt_sample
            cut_mid = False
            while remaining > 1e-12:
                h_try = min(h, remaining)
                try:
                    new = self.step(state, I, h_try)
                except (StepFailureError, KineticsError) as exc:
                    h = h_try * 0.5
                    fast_streak = 0
                    if h < opts.dt_floor:
                        raise SimulationError(
                            f"step failed at t = {state.t:.3f} s "
                            f"with dt at floor: {exc}",
                            time_s=state.t)
                    continue
                state = new
                remaining -= h_try
                stats.steps += 1
                stats.newton_iters += self._last_iters
                v_cell = self._last_extras["v_cell"]
                v_pack = self.params.n_series * v_cell
                stats.charge_ah += I * h_try / 3600.0
                stats.energy_wh += v_pack * I * h_try / 3600.0
                stats.temp_max = max(stats.temp_max, state.T)
                if self._last_iters <= opts.fast_iters:
                    fast_streak += 1
                    if fast_streak >= 3 and h < dt_sample:
                        h = min(h * 2.0, dt_sample)
                        fast_streak = 0
                else:
                    fast_streak = 0
                if v_cell < opts.v_min or v_cell > opts.v_max:
                    truncated = True
                    cutoff_v = opts.v_min if v_cell < opts.v_min else opts.v_max
                    cut_mid = remaining > 1e-12
                    break
            if truncated and cut_mid:
                break  # partial sample dropped
            out_v[emitted] = self._last_extras["v_cell"]
            out_T[emitted] = state.T
            emitted += 1
            if truncated:
                break
        stats.truncated = stats.truncated or truncated
        times = np.arange(n) / profile.sample_rate
        trace = VoltageTrace(
            times=times[:emitted],
            applied_current=np.asarray(profile.samples[:emitted], dtype=float),
            cell_voltage=out_v[:emitted].copy(),
            pack_voltage=self.params.n_series * out_v[:emitted],
            temperature=out_T[:emitted].copy(),
            truncated=truncated,
            truncation_voltage=cutoff_v,
        ) if record else None
        return trace, state, stats

    def run_cc(self, state: CellState, I_app: float, v_stop: float,
               dt_max: float = 10.0, t_max: float = 4e4,
               stats: RunStats | None = None):
        """Constant current until the cell voltage crosses v_stop.

        Charging uses negative I_app; v_stop is approached from below for
        charge and from above for discharge.
        """
        if stats is None:
            stats = RunStats()
        charging = I_app < 0
        h = min(1.0, dt_max)
        t0 = state.t
        while state.t - t0 < t_max:
            try:
                new = self.step(state, I_app, h)
            except (StepFailureError, KineticsError):
                h *= 0.5
                if h < self.options.dt_floor:
                    raise SimulationError(
                        f"constant-current hold failed at t = {state.t:.3f} s",
                        time_s=state.t)
                continue
            state = new
            stats.steps += 1
            v = self._last_extras["v_cell"]
            v_pack = self.params.n_series * v
            stats.charge_ah += I_app * h / 3600.0
            stats.energy_wh += v_pack * I_app * h / 3600.0
            stats.temp_max = max(stats.temp_max, state.T)
            if self._last_iters <= self.options.fast_iters:
                h = min(h * 2.0, dt_max)
            if (charging and v >= v_stop) or (not charging and v <= v_stop):
                return state, stats
            if abs(v - v_stop) < 0.03:
                h = min(h, 2.0)  # limit overshoot near the target voltage
        raise SimulationError(
            f"constant-current hold did not reach {v_stop} V in {t_max} s",
            time_s=state.t)

    def run_cv(self, state: CellState, v_hold: float, i_stop: float,
               dt_max: float = 30.0, t_max: float = 4e4,
               stats: RunStats | None = None):
        """Hold the cell voltage until |I| falls below i_stop (taper)."""
        if stats is None:
            stats = RunStats()
        h = 1.0
        t0 = state.t
        while state.t - t0 < t_max:
            try:
                new = self.step_cv(state, v_hold, h)
            except (StepFailureError, KineticsError):
                h *= 0.5
                if h < self.options.dt_floor:
                    raise SimulationError(
                        f"voltage hold failed at t = {state.t:.3f} s",
                        time_s=state.t)
                continue
            state = new
            stats.steps += 1
            I = state.I_app
            v_pack = self.params.n_series * v_hold
            stats.charge_ah += I * h / 3600.0
            stats.energy_wh += v_pack * I * h / 3600.0
            stats.temp_max = max(stats.temp_max, state.T)
            if self._last_iters <= self.options.fast_iters:
                h = min(h * 2.0, dt_max)
            if abs(I) <= i_stop:
                return state, stats
        raise SimulationError(
            f"voltage hold did not taper below {i_stop} A in {t_max} s",
            time_s=state.t)

    def voltage(self, state: CellState) -> float:
        """Terminal cell voltage implied by a (converged) state."""
        p = self.params
        i_app = state.I_app / p.A_cell
        phi_n = state.phi_s_n[0] + i_app * self.mesh.dx_n[0] / (
            2 * self.electrodes["neg"]["sigma_eff"])
        phi_p = state.phi_s_p[-1] - i_app * self.mesh.dx_p[-1] / (
            2 * self.electrodes["pos"]["sigma_eff"])
        return float(phi_p - phi_n)


def surface_stress_field(c_s: np.ndarray, c_surf: np.ndarray,
                         params: ParameterSet, electrode: str,
                         shell_vol: np.ndarray) -> np.ndarray:
    """Per-node surface stress from radial profiles plus extrapolated c_surf."""
    return np.array([
        surface_stress(c_s[i], params, electrode, shell_volumes=shell_vol,
                       c_surf=float(c_surf[i]))
        for i in range(c_s.shape[0])
    ])


# ----------------------------------------------------------------------
# operation-level wrappers
def step(state: CellState, params: ParameterSet, mesh: Mesh, I_app: float,
         dt: float, options: SolverOptions | None = None) -> CellState:
    """Advance the cell by one implicit step at the given applied current."""
    state.check_invariants(params)
    return CellSimulator(params, mesh, options).step(state, I_app, dt)


def simulate(params: ParameterSet, mesh: Mesh, profile,
             options: SolverOptions | None = None) -> VoltageTrace:
    """Integrate a current profile from a fresh state; one trace sample per
    profile sample; truncates at the voltage cutoffs."""
    if len(profile.samples) == 0:
        raise InputError("profile is empty")
    options = options or SolverOptions()
    sim = CellSimulator(params, mesh, options)
    state = initial_state(params, mesh, soc=options.initial_soc,
                          ocp_n=sim.ocp_n, ocp_p=sim.ocp_p)
    trace, _, _ = sim.run(state, profile)
    return trace
