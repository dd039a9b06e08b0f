"""Open-circuit potential curves.

Bundled half-cell OCP tables for a graphite negative electrode and an
NMC-type positive electrode, both vs Li/Li+, tabulated over the full
stoichiometry range [0, 1] and strictly decreasing. Interpolation is
monotone cubic (PCHIP), so the interpolants inherit strict monotonicity
from the tables. User tables can override either curve via 2-column CSV
(stoichiometry, volts); a single-row table degenerates to a constant.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, ParseError

# Representative graphite half-cell OCP vs Li/Li+ (V), steep below ~5% lithiation,
# staged plateaus above.
_NEG_TABLE = np.array([
    (0.000, 1.286834),
    (0.004, 0.855988),
    (0.008, 0.696693),
    (0.012, 0.619214),
    (0.018, 0.546220),
    (0.025, 0.481038),
    (0.035, 0.406235),
    (0.050, 0.325674),
    (0.070, 0.261680),
    (0.090, 0.227480),
    (0.110, 0.208303),
    (0.140, 0.190900),
    (0.170, 0.177366),
    (0.200, 0.164454),
    (0.240, 0.148830),
    (0.280, 0.137111),
    (0.330, 0.128439),
    (0.380, 0.124124),
    (0.430, 0.121477),
    (0.480, 0.118139),
    (0.530, 0.111741),
    (0.580, 0.102121),
    (0.630, 0.093693),
    (0.680, 0.089230),
    (0.730, 0.087383),
    (0.780, 0.086382),
    (0.830, 0.084862),
    (0.880, 0.080575),
    (0.920, 0.071377),
    (0.950, 0.056923),
    (0.970, 0.041176),
    (0.985, 0.025001),
    (1.000, 0.004431),
])

# Representative layered-oxide (NMC-type) half-cell OCP vs Li/Li+ (V).
_POS_TABLE = np.array([
    (0.00, 4.600),
    (0.05, 4.545),
    (0.10, 4.490),
    (0.15, 4.435),
    (0.20, 4.380),
    (0.25, 4.327),
    (0.30, 4.275),
    (0.35, 4.180),
    (0.40, 4.080),
    (0.45, 3.995),
    (0.50, 3.925),
    (0.55, 3.870),
    (0.60, 3.825),
    (0.65, 3.790),
    (0.70, 3.760),
    (0.75, 3.730),
    (0.80, 3.700),
    (0.85, 3.665),
    (0.90, 3.615),
    (0.93, 3.560),
    (0.96, 3.460),
    (0.98, 3.340),
    (1.00, 3.060),
])


class OcpCurve:
    """Monotone-cubic interpolant over a tabulated OCP curve.

    Evaluation outside the tabulated stoichiometry range raises
    :class:`DomainError`. A one-row table yields a constant curve valid on
    all of [0, 1].
    """

    def __init__(self, theta: np.ndarray, volts: np.ndarray, name: str = "custom"):
        theta = np.asarray(theta, dtype=float)
        volts = np.asarray(volts, dtype=float)
        if theta.ndim != 1 or theta.shape != volts.shape or theta.size < 1:
            raise DomainError("OCP table must be two equal-length 1-D columns")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(volts))):
            raise DomainError("OCP table contains non-finite values")
        if theta.size > 1 and not np.all(np.diff(theta) > 0):
            raise DomainError("OCP table stoichiometries must be strictly increasing")
        self.name = name
        self.theta_min = float(theta[0]) if theta.size > 1 else 0.0
        self.theta_max = float(theta[-1]) if theta.size > 1 else 1.0
        self._theta = theta
        self._volts = volts
        if theta.size == 1:
            self._interp = None
            self._deriv = None
            self._const = float(volts[0])
        else:
            self._interp = PchipInterpolator(theta, volts, extrapolate=False)
            self._deriv = self._interp.derivative()
            self._const = None

    def _check_domain(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < self.theta_min) or np.any(theta > self.theta_max):
            bad = theta[(theta < self.theta_min) | (theta > self.theta_max)]
            raise DomainError(
                f"stoichiometry {float(np.atleast_1d(bad)[0]):.6g} outside "
                f"[{self.theta_min}, {self.theta_max}] for OCP curve '{self.name}'",
                electrode=self.name,
                value=float(np.atleast_1d(bad)[0]),
            )
        return theta

    def __call__(self, theta):
        theta = self._check_domain(theta)
        if self._const is not None:
            return self._const if np.isscalar(theta) or theta.ndim == 0 \
                else np.full_like(theta, self._const)
        out = self._interp(theta)
        return float(out) if out.ndim == 0 else out

    def derivative(self, theta):
        theta = self._check_domain(theta)
        if self._const is not None:
            return 0.0 if np.isscalar(theta) or theta.ndim == 0 \
                else np.zeros_like(theta)
        out = self._deriv(theta)
        return float(out) if out.ndim == 0 else out

    def interpolants(self):
        """Raw (value, derivative) callables without domain checks.

        For hot loops that clip stoichiometry themselves; everyone else
        should go through __call__ / derivative.
        """
        if self._const is not None:
            c = self._const
            return (lambda th: np.full(np.shape(th), c),
                    lambda th: np.zeros(np.shape(th)))
        return self._interp, self._deriv

    @classmethod
    def from_csv(cls, path, name: str = "custom") -> "OcpCurve":
        theta, volts = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for idx, rec in enumerate(reader, start=1):
                if not rec or (idx == 1 and not _is_number(rec[0])):
                    continue  # blank line or header
                if len(rec) < 2 or not (_is_number(rec[0]) and _is_number(rec[1])):
                    raise ParseError(f"OCP table {path}: malformed row", row=idx)
                theta.append(float(rec[0]))
                volts.append(float(rec[1]))
        if not theta:
            raise ParseError(f"OCP table {path} has no data rows")
        return cls(np.array(theta), np.array(volts), name=name)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def default_curve(electrode: str) -> OcpCurve:
    if electrode == "neg":
        return OcpCurve(_NEG_TABLE[:, 0], _NEG_TABLE[:, 1], name="neg")
    if electrode == "pos":
        return OcpCurve(_POS_TABLE[:, 0], _POS_TABLE[:, 1], name="pos")
    raise DomainError(f"unknown electrode {electrode!r}, expected 'pos' or 'neg'")


_DEFAULTS = {"neg": default_curve("neg"), "pos": default_curve("pos")}


def ocp(electrode: str, stoichiometry, curve: OcpCurve | None = None):
    """Half-cell open-circuit potential vs Li/Li+ at the given stoichiometry."""
    if curve is None:
        if electrode not in _DEFAULTS:
            raise DomainError(f"unknown electrode {electrode!r}, expected 'pos' or 'neg'")
        curve = _DEFAULTS[electrode]
    return curve(stoichiometry)
