"""Interfacial kinetics and electrolyte transport closures."""

from __future__ import annotations

import numpy as np

from .constants import FARADAY, GAS_CONSTANT
from .errors import KineticsError

ALPHA_A = 0.5  # anodic symmetry factor, conventional default
ALPHA_C = 0.5

# Surface stoichiometry guard: values are clipped to this window for
# evaluation; excursions beyond it by more than STOICH_SLACK reject the step.
STOICH_EPS = 1e-6
STOICH_SLACK = 0.05


def exchange_current(i0_ref, c_s_surf, c_e, c_max, c_e_ref):
    """i0 = i0_ref * (c_e/c_e_ref)^alpha_a * theta^alpha_c * (1-theta)^alpha_a."""
    theta = np.asarray(c_s_surf, dtype=float) / c_max
    theta = np.clip(theta, STOICH_EPS, 1.0 - STOICH_EPS)
    return (i0_ref * (np.asarray(c_e, dtype=float) / c_e_ref) ** ALPHA_A
            * theta ** ALPHA_C * (1.0 - theta) ** ALPHA_A)


def butler_volmer_flux(i0_ref, c_s_surf, c_e, c_max, overpotential, T,
                       c_e_ref=None):
    """Interfacial molar flux, mol/(m^2 s), positive for delithiation.

    flux = (i0/F) * [exp(a_a F eta / R T) - exp(-a_c F eta / R T)]

    Raises :class:`KineticsError` when the surface stoichiometry or the
    electrolyte concentration is outside the admissible window, signalling
    step rejection to the solver.
    """
    c_s_surf = np.asarray(c_s_surf, dtype=float)
    c_e = np.asarray(c_e, dtype=float)
    if c_e_ref is None:
        c_e_ref = np.mean(c_e) if c_e.ndim else float(c_e)
    theta = c_s_surf / c_max
    if np.any(theta < -STOICH_SLACK) or np.any(theta > 1.0 + STOICH_SLACK):
        raise KineticsError(
            f"surface stoichiometry {float(np.min(theta)):.4f}.."
            f"{float(np.max(theta)):.4f} outside admissible window")
    if np.any(c_e <= 0):
        raise KineticsError("electrolyte concentration reached zero")
    i0 = exchange_current(i0_ref, c_s_surf, c_e, c_max, c_e_ref)
    f = FARADAY / (GAS_CONSTANT * T)
    eta = np.asarray(overpotential, dtype=float)
    out = (i0 / FARADAY) * (np.exp(ALPHA_A * f * eta) - np.exp(-ALPHA_C * f * eta))
    return float(out) if out.ndim == 0 else out


def electrolyte_conductivity(c_e):
    """Bulk ionic conductivity, S/m, cubic fit in c_e (mol/m^3).

    Positive over the whole admissible range, peaks near 1.3 mol/L and
    falls toward high concentration.
    """
    c = np.asarray(c_e, dtype=float) / 1000.0  # mol/L
    return 0.0911 + 1.9101 * c - 1.052 * c ** 2 + 0.1554 * c ** 3


def electrolyte_conductivity_derivative(c_e):
    """d(kappa)/d(c_e), S/m per mol/m^3."""
    c = np.asarray(c_e, dtype=float) / 1000.0
    return (1.9101 - 2.104 * c + 0.4662 * c ** 2) / 1000.0
