"""Discretized cell state."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .degradation import DegradationState
from .errors import InputError
from .mesh import Mesh
from .ocp import OcpCurve, default_curve
from .parameters import ParameterSet


@dataclass
class CellState:
    c_s_n: np.ndarray   # (N_n, N_r) mol/m^3, solid concentration per shell
    c_s_p: np.ndarray   # (N_p, N_r)
    c_e: np.ndarray     # (N_x,) mol/m^3
    phi_s_n: np.ndarray  # (N_n,) V
    phi_s_p: np.ndarray  # (N_p,) V
    phi_e: np.ndarray   # (N_x,) V
    j_n: np.ndarray     # (N_n,) mol/(m^2 s), interfacial flux (warm start)
    j_p: np.ndarray     # (N_p,)
    T: float            # K
    t: float            # s
    I_app: float        # A, last applied pack current (warm start)
    degradation: DegradationState

    def copy(self) -> "CellState":
        return CellState(
            c_s_n=self.c_s_n.copy(), c_s_p=self.c_s_p.copy(),
            c_e=self.c_e.copy(),
            phi_s_n=self.phi_s_n.copy(), phi_s_p=self.phi_s_p.copy(),
            phi_e=self.phi_e.copy(),
            j_n=self.j_n.copy(), j_p=self.j_p.copy(),
            T=self.T, t=self.t, I_app=self.I_app,
            degradation=self.degradation.copy(),
        )

    def check_invariants(self, params: ParameterSet) -> None:
        if np.any(self.c_s_n < 0) or np.any(self.c_s_n > params.c_n_max):
            raise InputError("negative-electrode solid concentration out of [0, c_max]")
        if np.any(self.c_s_p < 0) or np.any(self.c_s_p > params.c_p_max):
            raise InputError("positive-electrode solid concentration out of [0, c_max]")
        if np.any(self.c_e <= 0):
            raise InputError("electrolyte concentration must be positive")
        if not self.T > 0:
            raise InputError("temperature must be positive")


def initial_state(params: ParameterSet, mesh: Mesh, soc: float = 1.0,
                  T: float | None = None,
                  ocp_n: OcpCurve | None = None,
                  ocp_p: OcpCurve | None = None) -> CellState:
    """Equilibrated uniform state at the given state of charge."""
    theta_n = params.stoich_at_soc("neg", soc)
    theta_p = params.stoich_at_soc("pos", soc)
    u_n = (ocp_n or default_curve("neg"))(theta_n)
    u_p = (ocp_p or default_curve("pos"))(theta_p)
    # gauge: phi_s = 0 at the negative collector; equilibrium means eta = 0
    phi_e0 = -u_n
    return CellState(
        c_s_n=np.full((mesh.N_n, mesh.N_r), theta_n * params.c_n_max),
        c_s_p=np.full((mesh.N_p, mesh.N_r), theta_p * params.c_p_max),
        c_e=np.full(mesh.N_x, params.c_e_init),
        phi_s_n=np.zeros(mesh.N_n),
        phi_s_p=np.full(mesh.N_p, u_p + phi_e0),
        phi_e=np.full(mesh.N_x, phi_e0),
        j_n=np.zeros(mesh.N_n),
        j_p=np.zeros(mesh.N_p),
        T=params.T_amb if T is None else float(T),
        t=0.0,
        I_app=0.0,
        degradation=DegradationState.fresh(params),
    )


def li_inventory(state: CellState, params: ParameterSet, mesh: Mesh) -> float:
    """Total lithium, mol: connected solid phase plus electrolyte.

    Solid bookkeeping uses the electrochemically connected volume fraction
    (a*R/3, scaled by surviving active material) so that the quantity is
    exactly conserved by the discrete equations when degradation is off.
    """
    deg = state.degradation
    f_n = params.connected_fraction("neg") * deg.eps_am_n / params.eps_am_n
    f_p = params.connected_fraction("pos") * deg.eps_am_p / params.eps_am_p
    mean_n = state.c_s_n @ mesh.shell_vol
    mean_p = state.c_s_p @ mesh.shell_vol
    solid = (np.dot(mesh.dx_n, mean_n) * f_n + np.dot(mesh.dx_p, mean_p) * f_p)
    eps_x = np.concatenate([
        np.full(mesh.N_n, params.eps_n),
        np.full(mesh.N_sep, params.eps_sep),
        np.full(mesh.N_p, params.eps_p),
    ])
    electrolyte = np.dot(mesh.dx * eps_x, state.c_e)
    return params.A_cell * (solid + electrolyte)


def solid_li_inventory(params: ParameterSet, soc: float = 1.0) -> float:
    """Cyclable solid lithium, mol, of a fresh cell at the given SoC.

    Used as the LLI denominator.
    """
    n = (params.L_n * params.connected_fraction("neg") * params.c_n_max
         * params.stoich_at_soc("neg", soc))
    p = (params.L_p * params.connected_fraction("pos") * params.c_p_max
         * params.stoich_at_soc("pos", soc))
    return params.A_cell * (n + p)


def state_to_dict(state: CellState) -> dict:
    out = {}
    for f in dataclasses.fields(CellState):
        val = getattr(state, f.name)
        if isinstance(val, np.ndarray):
            out[f.name] = val.tolist()
        elif isinstance(val, DegradationState):
            out[f.name] = val.to_dict()
        else:
            out[f.name] = val
    return out
