"""Cell parameter set: electrochemical, thermal, mechanical, degradation.

The shipped defaults describe a representative high-rate 2.2 Ah / 14.8 V
4S1P pouch pack (thin, porous electrodes able to sustain >10 C discharge).
They are engineering placeholders meant to be calibrated against data, not
measurements of any specific cell.

Serialization is a flat JSON object keyed by the symbol names below (SI
units), with degradation parameters nested under a ``degradation`` key and
sub-model switches under ``degradation.toggles``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import InputError
from .validation import check_in_range, check_int, check_positive


@dataclass
class DegradationToggles:
    """Independent switches for each degradation sub-model."""

    sei_nominal: bool = True
    sei_crack: bool = True
    plating: bool = True
    cracking: bool = True
    lam: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationToggles":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown degradation toggles: {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in data.items()})

    @classmethod
    def all_off(cls) -> "DegradationToggles":
        return cls(False, False, False, False, False)


@dataclass
class DegradationParams:
    """Rate constants and material properties of the degradation sub-models.

    All rate constants are calibration placeholders; none comes from a
    measured cell.
    """

    # SEI growth, solvent-diffusion-limited kinetics
    k_sei: float = 2.0e-4       # m/s, kinetic prefactor
    E_a_sei: float = 5.0e4      # J/mol, activation energy
    alpha_sei: float = 0.1      # cathodic symmetry factor of the side reaction
    U_sei: float = 0.4          # V vs Li/Li+, side-reaction equilibrium potential
    L_diff_sei: float = 2.0e-9  # m, solvent-diffusion damping length
    L_sei_init: float = 5.0e-9  # m, formation-cycle film thickness
    rho_sei: float = 1690.0     # kg/m^3, SEI density
    M_sei: float = 0.162        # kg/mol of consumed Li
    kappa_sei: float = 5.0e-6   # S/m, SEI ionic conductivity (film resistance growth)
    # lithium plating
    i0_plating: float = 1.0e-3  # A/m^2, plating exchange-current density
    # particle fatigue cracking (Paris law per stress half-cycle)
    k_crack: float = 3.0e-23    # m per cycle per Pa^m_crack
    m_crack: float = 2.2        # Paris exponent
    rho_crack: float = 1.2e14   # 1/m^3, crack number density
    w_crack: float = 5.0e-6     # m, crack width (area per unit length, both faces)
    # loss of active material above a stress threshold
    beta_lam: float = 2.0e-6    # 1/s, isolation rate scale
    m_lam: float = 2.0          # threshold-excess exponent
    # threshold sits above the surface stress of steady ~22 A discharge
    # (~36 MPa) and below high-rate transient peaks (>30 A, ~50 MPa)
    sigma_crit: float = 4.0e7   # Pa, tensile stress threshold
    # scope
    crack_electrode: str = "neg"   # electrode carrying the crack/fatigue state
    lam_positive: bool = False     # also apply LAM to the positive electrode
    toggles: DegradationToggles = field(default_factory=DegradationToggles)

    def validate(self) -> "DegradationParams":
        for name in ("E_a_sei", "L_diff_sei", "L_sei_init", "rho_sei", "M_sei",
                     "kappa_sei", "sigma_crit"):
            check_positive(getattr(self, name), f"degradation.{name}")
        for name in ("k_sei", "i0_plating", "k_crack", "rho_crack", "w_crack",
                     "beta_lam"):
            check_positive(getattr(self, name), f"degradation.{name}", strict=False)
        check_in_range(self.alpha_sei, "degradation.alpha_sei", 0.0, 1.0)
        check_positive(self.m_crack, "degradation.m_crack")
        check_positive(self.m_lam, "degradation.m_lam")
        if self.crack_electrode not in ("neg", "pos"):
            raise InputError(
                f"degradation.crack_electrode must be 'neg' or 'pos', "
                f"got {self.crack_electrode!r}")
        return self

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
               if f.name != "toggles"}
        out["toggles"] = self.toggles.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationParams":
        data = dict(data)
        toggles = data.pop("toggles", None)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown degradation parameters: {sorted(unknown)}")
        obj = cls(**data)
        if toggles is not None:
            obj.toggles = DegradationToggles.from_dict(toggles)
        return obj.validate()


# Estimable parameters (bounds make sense for calibration) vs fixed cell
# constants; both live on ParameterSet, the split only matters for docs.
_PARAM_FIELDS = (
    "theta_p_max", "theta_p_min", "theta_n_max", "theta_n_min",
    "R_p", "R_n", "sigma_p", "sigma_n",
    "eps_p", "eps_sep", "eps_n", "eps_f_p", "eps_f_n",
    "a_p", "a_n", "D_e", "D_p", "D_n",
    "c_e_init", "i0_p_ref", "i0_n_ref",
    "R_SEI", "nu_p", "nu_n", "E_p", "E_n", "V_p", "V_n", "V_Li",
    "L_p", "L_sep", "L_n", "A_cell", "c_p_max", "c_n_max",
    "t_plus", "bruggeman", "T_amb", "thermal_mass", "h_conv_area",
    "n_series", "Q_rated",
)


@dataclass
class ParameterSet:
    # stoichiometry windows (dimensionless)
    theta_p_max: float
    theta_p_min: float
    theta_n_max: float
    theta_n_min: float
    # particle radii, m
    R_p: float
    R_n: float
    # solid conductivities, S/m
    sigma_p: float
    sigma_n: float
    # electrolyte porosities / filler fractions
    eps_p: float
    eps_sep: float
    eps_n: float
    eps_f_p: float
    eps_f_n: float
    # specific interfacial areas, 1/m
    a_p: float
    a_n: float
    # diffusivities, m^2/s
    D_e: float
    D_p: float
    D_n: float
    # electrolyte
    c_e_init: float  # mol/m^3
    # reference exchange-current densities, A/m^2 (at c_e = c_e_init)
    i0_p_ref: float
    i0_n_ref: float
    # initial SEI film resistance, ohm m^2
    R_SEI: float
    # mechanics
    nu_p: float
    nu_n: float
    E_p: float   # Pa
    E_n: float   # Pa
    V_p: float   # m^3/mol, partial molar volume
    V_n: float   # m^3/mol
    V_Li: float  # m^3/mol, metallic lithium
    # geometry
    L_p: float      # m
    L_sep: float    # m
    L_n: float      # m
    A_cell: float   # m^2
    c_p_max: float  # mol/m^3
    c_n_max: float  # mol/m^3
    # transport closure
    t_plus: float
    bruggeman: float
    # thermal
    T_amb: float         # K
    thermal_mass: float  # J/K, m*c_th
    h_conv_area: float   # W/K, h_conv*A_surf
    # pack
    n_series: int
    Q_rated: float  # Ah
    degradation: DegradationParams = field(default_factory=DegradationParams)

    # volume fraction of active material implied by porosity + filler
    @property
    def eps_am_p(self) -> float:
        return 1.0 - self.eps_p - self.eps_f_p

    @property
    def eps_am_n(self) -> float:
        return 1.0 - self.eps_n - self.eps_f_n

    def validate(self) -> "ParameterSet":
        for el in ("p", "n"):
            lo = getattr(self, f"theta_{el}_min")
            hi = getattr(self, f"theta_{el}_max")
            check_in_range(lo, f"theta_{el}_min", 0.0, 1.0)
            check_in_range(hi, f"theta_{el}_max", 0.0, 1.0)
            if not lo < hi:
                raise InputError(
                    f"theta_{el}_min must be < theta_{el}_max, got {lo} >= {hi}")
            check_in_range(getattr(self, f"eps_{el}"), f"eps_{el}", 0.0, 1.0,
                           inclusive=False)
            check_in_range(getattr(self, f"eps_f_{el}"), f"eps_f_{el}", 0.0, 1.0)
            if getattr(self, f"eps_am_{el}") <= 0:
                raise InputError(
                    f"eps_{el} + eps_f_{el} must leave room for active material")
            check_in_range(getattr(self, f"nu_{el}"), f"nu_{el}", 0.0, 0.5,
                           inclusive=False)
        check_in_range(self.eps_sep, "eps_sep", 0.0, 1.0, inclusive=False)
        for name in ("R_p", "R_n", "sigma_p", "sigma_n", "a_p", "a_n",
                     "D_e", "D_p", "D_n", "c_e_init", "i0_p_ref", "i0_n_ref",
                     "E_p", "E_n", "V_p", "V_n", "V_Li",
                     "L_p", "L_sep", "L_n", "A_cell", "c_p_max", "c_n_max",
                     "T_amb", "thermal_mass", "h_conv_area", "Q_rated"):
            check_positive(getattr(self, name), name)
        check_positive(self.R_SEI, "R_SEI", strict=False)
        check_in_range(self.t_plus, "t_plus", 0.0, 1.0, inclusive=False)
        check_positive(self.bruggeman, "bruggeman")
        self.n_series = check_int(self.n_series, "n_series", minimum=1)
        self.degradation.validate()
        return self

    # SoC mapping: SoC 1 is the charged stoichiometry of each electrode
    def stoich_at_soc(self, electrode: str, soc: float) -> float:
        check_in_range(soc, "soc", 0.0, 1.0)
        if electrode == "neg":
            return self.theta_n_min + soc * (self.theta_n_max - self.theta_n_min)
        if electrode == "pos":
            return self.theta_p_max - soc * (self.theta_p_max - self.theta_p_min)
        raise InputError(f"unknown electrode {electrode!r}")

    def connected_fraction(self, electrode: str) -> float:
        """Electrochemically connected solid volume fraction a*R/3.

        Equals eps_am when a = 3*eps_am/R (true for the shipped defaults);
        used for all lithium bookkeeping so conservation holds even when a
        and eps are varied independently during calibration.
        """
        if electrode == "neg":
            return self.a_n * self.R_n / 3.0
        if electrode == "pos":
            return self.a_p * self.R_p / 3.0
        raise InputError(f"unknown electrode {electrode!r}")

    def to_dict(self) -> dict:
        out = {}
        for name in _PARAM_FIELDS:
            out[name] = getattr(self, name)
        out["degradation"] = self.degradation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterSet":
        data = dict(data)
        deg = data.pop("degradation", None)
        unknown = set(data) - set(_PARAM_FIELDS)
        if unknown:
            raise InputError(f"unknown parameters: {sorted(unknown)}")
        missing = set(_PARAM_FIELDS) - set(data)
        if missing:
            raise InputError(f"missing parameters: {sorted(missing)}")
        kwargs = {k: (int(v) if k == "n_series" else float(v))
                  for k, v in data.items()}
        obj = cls(**kwargs)
        if deg is not None:
            obj.degradation = DegradationParams.from_dict(deg)
        return obj.validate()

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ParameterSet":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"parameter file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise InputError(f"parameter file {path} must contain a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "ParameterSet":
        return dataclasses.replace(self.copy(), **changes)

    def copy(self) -> "ParameterSet":
        return dataclasses.replace(
            self,
            degradation=dataclasses.replace(
                self.degradation,
                toggles=dataclasses.replace(self.degradation.toggles)),
        )


def default_parameters() -> ParameterSet:
    """Representative 2.2 Ah, 14.8 V nominal, 4S1P high-rate pack."""
    eps_am_p = 1.0 - 0.35 - 0.08
    eps_am_n = 1.0 - 0.38 - 0.05
    R_p = 6.0e-6
    R_n = 3.5e-6
    return ParameterSet(
        theta_p_max=0.93,
        theta_p_min=0.3325,
        theta_n_max=0.88,
        theta_n_min=0.03,
        R_p=R_p,
        R_n=R_n,
        sigma_p=10.0,
        sigma_n=100.0,
        eps_p=0.35,
        eps_sep=0.5,
        eps_n=0.38,
        eps_f_p=0.08,
        eps_f_n=0.05,
        a_p=3.0 * eps_am_p / R_p,
        a_n=3.0 * eps_am_n / R_n,
        D_e=3.2e-10,
        D_p=8.0e-14,
        D_n=5.0e-14,
        c_e_init=1000.0,
        i0_p_ref=10.0,
        i0_n_ref=12.0,
        R_SEI=8.0e-4,
        nu_p=0.25,
        nu_n=0.3,
        E_p=1.2e11,
        E_n=1.5e10,
        V_p=1.2e-6,
        V_n=3.5e-6,
        V_Li=1.3e-5,
        L_p=3.6e-5,
        L_sep=2.0e-5,
        L_n=4.0e-5,
        A_cell=0.1366,
        c_p_max=49000.0,
        c_n_max=31000.0,
        t_plus=0.363,
        bruggeman=1.5,
        T_amb=298.15,
        thermal_mass=60.0,
        h_conv_area=0.35,
        n_series=4,
        Q_rated=2.2,
    ).validate()
