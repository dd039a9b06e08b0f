"""Degradation sub-models coupled weakly to the electrochemical step.

Five mechanisms, each independently switchable:

- SEI growth on the nominal electrode surface (solvent-diffusion-limited
  kinetics, Arrhenius in temperature, accelerated at low anode potential).
- SEI growth on crack surfaces: same kinetics, separate mean thickness;
  freshly created crack area enters at zero thickness, which dilutes the
  mean and keeps the fresh surface fast-growing.
- Lithium plating: Butler-Volmer side reaction, active only while the anode
  interfacial potential vs Li/Li+ is negative.
- Particle fatigue cracking: Paris law driven by surface-stress half-cycles
  detected by sign-reversal counting with a hysteresis band.
- Loss of active material above a tensile stress threshold.

All mechanisms use electrode-mean driving fields from the end of each
accepted solver sub-step (mean-field weak coupling); cumulative lithium
losses are tracked per mechanism so LLI decomposes exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .constants import FARADAY, GAS_CONSTANT
from .errors import InputError, SimulationError
from .parameters import ParameterSet


@dataclass
class DegradationState:
    L_sei_nom: float    # m, SEI thickness on the nominal surface
    L_sei_crack: float  # m, mean SEI thickness over crack surface
    a_crack: float      # 1/m, crack surface area per electrode volume
    l_crack: float      # m, representative crack length
    q_plated: float     # mol/m^3 of electrode, plated lithium
    eps_am_p: float     # active-material volume fractions (shrink under LAM)
    eps_am_n: float
    li_lost_sei_nom: float = 0.0    # mol, cumulative per mechanism
    li_lost_sei_crack: float = 0.0
    li_lost_plating: float = 0.0
    n_half_cycles: int = 0          # counted stress reversals
    # reversal-detector memory: excursion origin, running extremum, direction
    sigma_start: float = 0.0
    sigma_ref: float = 0.0
    sigma_dir: int = 0

    @classmethod
    def fresh(cls, params: ParameterSet) -> "DegradationState":
        return cls(
            L_sei_nom=params.degradation.L_sei_init,
            L_sei_crack=0.0,
            a_crack=0.0,
            l_crack=0.0,
            q_plated=0.0,
            eps_am_p=params.eps_am_p,
            eps_am_n=params.eps_am_n,
        )

    def copy(self) -> "DegradationState":
        return dataclasses.replace(self)

    @property
    def li_lost_total(self) -> float:
        return self.li_lost_sei_nom + self.li_lost_sei_crack + self.li_lost_plating

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationState":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown degradation state fields: {sorted(unknown)}")
        return cls(**data)


def _crack_area_scale(params: ParameterSet) -> tuple[float, float]:
    """(A_cell * L_elec, nominal a) for the crack-bearing electrode."""
    if params.degradation.crack_electrode == "pos":
        return params.A_cell * params.L_p, params.a_p
    return params.A_cell * params.L_n, params.a_n


def sei_growth_step(state: DegradationState, params: ParameterSet, T: float,
                    local_overpotential: float, surface: str,
                    dt: float) -> tuple[float, float]:
    """One SEI increment on the given surface.

    ``local_overpotential`` is the side-reaction driving force
    eta_sei = phi_s - phi_e - F*j*R_film - U_sei (negative drives growth).
    Returns (thickness increment, moles of Li consumed).
    """
    d = params.degradation
    if surface == "nominal":
        if not d.toggles.sei_nominal:
            return 0.0, 0.0
        L = state.L_sei_nom
        area = (params.a_n * state.eps_am_n / params.eps_am_n
                * params.A_cell * params.L_n)
    elif surface == "crack":
        if not d.toggles.sei_crack:
            return 0.0, 0.0
        L = state.L_sei_crack
        vol, _ = _crack_area_scale(params)
        area = state.a_crack * vol
    else:
        raise InputError(f"unknown SEI surface {surface!r}")
    rate = (d.k_sei
            * np.exp(-d.E_a_sei / (GAS_CONSTANT * T))
            * np.exp(-d.alpha_sei * FARADAY * local_overpotential / (GAS_CONSTANT * T))
            / (1.0 + L / d.L_diff_sei))
    dL = float(rate) * dt
    dli = dL * area * d.rho_sei / d.M_sei
    return dL, dli


def plating_step(state: DegradationState, params: ParameterSet,
                 anode_overpotential_vs_li: float, T: float,
                 dt: float) -> float:
    """Plated-lithium increment, mol/m^3 of electrode; 0 unless potential < 0."""
    d = params.degradation
    if not d.toggles.plating or anode_overpotential_vs_li >= 0.0:
        return 0.0
    f = FARADAY / (GAS_CONSTANT * T)
    eta = anode_overpotential_vs_li
    rate = (d.i0_plating / FARADAY) * (np.exp(-0.5 * f * eta) - np.exp(0.5 * f * eta))
    a_eff = params.a_n * state.eps_am_n / params.eps_am_n
    return float(rate) * a_eff * dt


def surface_stress(c_s_profile, params: ParameterSet, electrode: str,
                   shell_volumes=None, c_surf: float | None = None) -> float:
    """Tangential stress at the particle surface, Pa.

    sigma_t = Omega*E/(3*(1-nu)) * (c_mean - c_surf): tensile (+) when the
    surface is depleted relative to the bulk (delithiation). ``shell_volumes``
    are relative radial volume weights (uniform-volume shells assumed if
    omitted); ``c_surf`` defaults to the outermost shell value.
    """
    c = np.asarray(c_s_profile, dtype=float)
    if c.ndim != 1 or c.size < 1:
        raise InputError("c_s_profile must be a 1-D radial profile")
    if shell_volumes is None:
        w = np.full(c.size, 1.0 / c.size)
    else:
        w = np.asarray(shell_volumes, dtype=float)
        w = w / w.sum()
    c_mean = float(np.dot(w, c))
    if c_surf is None:
        c_surf = float(c[-1])
    if electrode == "neg":
        omega, E, nu = params.V_n, params.E_n, params.nu_n
    elif electrode == "pos":
        omega, E, nu = params.V_p, params.E_p, params.nu_p
    else:
        raise InputError(f"unknown electrode {electrode!r}")
    return omega * E / (3.0 * (1.0 - nu)) * (c_mean - c_surf)


def crack_growth_step(state: DegradationState, stress_amplitude: float,
                      params: ParameterSet, dt: float) -> tuple[float, float]:
    """Paris-law growth for one detected half-cycle of the given amplitude.

    Returns (crack length increment, crack area-density increment). A full
    cycle is two half-cycles, each contributing half of
    k_cr * sigma_amp^m_cr.
    """
    d = params.degradation
    if not d.toggles.cracking or stress_amplitude <= 0.0:
        return 0.0, 0.0
    dl = 0.5 * d.k_crack * stress_amplitude ** d.m_crack
    da = 2.0 * d.rho_crack * d.w_crack * dl  # both crack faces
    return dl, da


def lam_step(state: DegradationState, stress: float, params: ParameterSet,
             dt: float) -> float:
    """Active-material loss increment (negative or zero) for one electrode."""
    d = params.degradation
    if not d.toggles.lam or stress <= d.sigma_crit:
        return 0.0
    return -d.beta_lam * ((stress - d.sigma_crit) / d.sigma_crit) ** d.m_lam * dt


def compute_lli(state, initial_inventory: float) -> float:
    """Fraction of the initial cyclable inventory consumed by side reactions."""
    if initial_inventory <= 0:
        raise InputError(f"initial_inventory must be > 0, got {initial_inventory}")
    deg = getattr(state, "degradation", state)
    return deg.li_lost_total / initial_inventory


def compute_lam(state, initial_eps_am_n: float,
                initial_eps_am_p: float) -> dict[str, float]:
    """LAM fraction per electrode: 1 - eps_am/initial."""
    deg = getattr(state, "degradation", state)
    if initial_eps_am_n <= 0 or initial_eps_am_p <= 0:
        raise InputError("initial active-material fractions must be > 0")
    return {
        "neg": 1.0 - deg.eps_am_n / initial_eps_am_n,
        "pos": 1.0 - deg.eps_am_p / initial_eps_am_p,
    }


@dataclass
class StepFields:
    """End-of-step driving fields handed to the degradation update."""

    T: float                  # K
    eta_plating: float        # V, mean anode interfacial potential vs Li/Li+
    sigma_crack: float        # Pa, mean surface stress on the crack electrode
    sigma_n: float            # Pa
    sigma_p: float            # Pa


def _detect_reversals(state: DegradationState, sigma: float,
                      band: float) -> list[float]:
    """Feed one stress sample to the reversal detector.

    A half-cycle spans from the origin of the current excursion to its
    extremum; it is emitted (as amplitude = range/2) once the signal retreats
    from the extremum by more than the hysteresis band. Movement within the
    band is ignored as jitter.
    """
    if state.sigma_dir == 0:
        if abs(sigma - state.sigma_start) > band:
            state.sigma_dir = 1 if sigma > state.sigma_start else -1
            state.sigma_ref = sigma
        return []
    if (sigma - state.sigma_ref) * state.sigma_dir >= 0:
        state.sigma_ref = sigma  # excursion continues
        return []
    if (state.sigma_ref - sigma) * state.sigma_dir > band:
        amp = abs(state.sigma_ref - state.sigma_start) / 2.0
        state.sigma_start = state.sigma_ref
        state.sigma_ref = sigma
        state.sigma_dir = -state.sigma_dir
        return [amp]
    return []


def apply_degradation_step(deg: DegradationState, params: ParameterSet,
                           fields: StepFields, dt: float) -> float:
    """Advance all enabled mechanisms by one solver sub-step (in place).

    Returns the moles of cyclable lithium to remove from the negative
    electrode's surface shells (side-reaction consumption).
    """
    d = params.degradation
    eta_sei = fields.eta_plating - d.U_sei

    dl_nom, dli_nom = sei_growth_step(deg, params, fields.T, eta_sei,
                                      "nominal", dt)
    dl_cr, dli_cr = sei_growth_step(deg, params, fields.T, eta_sei,
                                    "crack", dt)

    da_total = 0.0
    if d.toggles.cracking:
        band = 0.01 * d.sigma_crit
        for amp in _detect_reversals(deg, fields.sigma_crack, band):
            dl_crack, da = crack_growth_step(deg, amp, params, dt)
            deg.l_crack += dl_crack
            da_total += da
            deg.n_half_cycles += 1

    # grow existing crack SEI, then dilute the mean over the fresh area
    a_old = deg.a_crack
    L_grown = deg.L_sei_crack + dl_cr
    a_new = a_old + da_total
    deg.L_sei_crack = L_grown * a_old / a_new if a_new > 0 else 0.0
    deg.a_crack = a_new
    deg.L_sei_nom += dl_nom

    dq = plating_step(deg, params, fields.eta_plating, fields.T, dt)
    deg.q_plated += dq
    dli_pl = dq * params.A_cell * params.L_n

    if d.toggles.lam:
        deg.eps_am_n = max(0.0, deg.eps_am_n
                           + lam_step(deg, fields.sigma_n, params, dt))
        if d.lam_positive:
            deg.eps_am_p = max(0.0, deg.eps_am_p
                               + lam_step(deg, fields.sigma_p, params, dt))

    deg.li_lost_sei_nom += dli_nom
    deg.li_lost_sei_crack += dli_cr
    deg.li_lost_plating += dli_pl
    return dli_nom + dli_cr + dli_pl


def remove_li_from_anode(c_s_n: np.ndarray, li_moles: float,
                         params: ParameterSet, mesh,
                         connected_fraction: float) -> None:
    """Pull side-reaction lithium out of the outer shells, in place.

    Distributed over nodes by volume share; raises if any node's outer shell
    would be driven below a small positive floor (side-reaction rates that
    strip the surface dry indicate an unphysical parameterization).
    """
    if li_moles == 0.0:
        return
    vol_outer = params.A_cell * mesh.dx_n * connected_fraction * mesh.shell_vol[-1]
    dc = li_moles * (mesh.dx_n / params.L_n) / vol_outer
    floor = 1e-6 * params.c_n_max
    if np.any(c_s_n[:, -1] - dc < floor):
        raise SimulationError(
            "side reactions depleted the anode surface; "
            "degradation rates are too aggressive for this profile")
    c_s_n[:, -1] -= dc
