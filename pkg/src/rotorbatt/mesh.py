"""Finite-volume discretization of the cell sandwich and the particles.

Along the thickness axis each region (negative electrode, separator,
positive electrode) is split into uniform control volumes. Each
representative particle is split into ``N_r`` spherical shells whose widths
shrink geometrically toward the surface, where concentration boundary
layers live; refining a graded mesh keeps the grading, so Richardson-style
convergence checks remain meaningful.

Radial geometry is stored in normalized coordinates (radius 1); the solver
scales by each electrode's particle radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .validation import check_int, check_positive


@dataclass(eq=False)
class Mesh:
    N_n: int
    N_sep: int
    N_p: int
    N_r: int
    dx_n: np.ndarray      # m, widths of negative-electrode volumes
    dx_sep: np.ndarray    # m
    dx_p: np.ndarray      # m
    r_faces: np.ndarray   # normalized shell face radii, (N_r+1,), 0..1
    r_centers: np.ndarray  # normalized shell centers, (N_r,)
    shell_vol: np.ndarray  # normalized shell volume fractions, sums to 1
    x_centers: np.ndarray = field(init=False)  # m, node centers across the cell
    dx: np.ndarray = field(init=False)         # m, all widths concatenated

    def __post_init__(self):
        self.dx = np.concatenate([self.dx_n, self.dx_sep, self.dx_p])
        faces = np.concatenate([[0.0], np.cumsum(self.dx)])
        self.x_centers = 0.5 * (faces[:-1] + faces[1:])

    @property
    def N_x(self) -> int:
        return self.N_n + self.N_sep + self.N_p

    @property
    def sl_n(self) -> slice:
        return slice(0, self.N_n)

    @property
    def sl_sep(self) -> slice:
        return slice(self.N_n, self.N_n + self.N_sep)

    @property
    def sl_p(self) -> slice:
        return slice(self.N_n + self.N_sep, self.N_x)


def _graded_widths(n: int, ratio: float) -> np.ndarray:
    # widths decrease by `ratio` from center to surface, normalized to sum 1
    w = (1.0 / ratio) ** np.arange(n)
    return w / w.sum()


def build_mesh(params, N_n: int = 8, N_sep: int = 4, N_p: int = 8,
               N_r: int = 10, r_grading: float = 1.5) -> Mesh:
    """Build a mesh for the given :class:`ParameterSet` geometry."""
    for name, val in (("N_n", N_n), ("N_sep", N_sep), ("N_p", N_p), ("N_r", N_r)):
        check_int(val, name, minimum=3)
    check_positive(r_grading, "r_grading")
    if r_grading < 1.0:
        raise InputError(f"r_grading must be >= 1 (finer toward surface), got {r_grading}")

    widths = _graded_widths(N_r, r_grading)
    r_faces = np.concatenate([[0.0], np.cumsum(widths)])
    r_faces[-1] = 1.0
    r_centers = 0.5 * (r_faces[:-1] + r_faces[1:])
    shell_vol = np.diff(r_faces ** 3)

    return Mesh(
        N_n=N_n, N_sep=N_sep, N_p=N_p, N_r=N_r,
        dx_n=np.full(N_n, params.L_n / N_n),
        dx_sep=np.full(N_sep, params.L_sep / N_sep),
        dx_p=np.full(N_p, params.L_p / N_p),
        r_faces=r_faces,
        r_centers=r_centers,
        shell_vol=shell_vol,
    )
