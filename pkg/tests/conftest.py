"""Shared fixtures: coarse meshes and degradation-free parameter sets keep
single-CPU test runtimes sane; physics accuracy is covered by the dedicated
convergence tests, not by the unit fixtures."""

import numpy as np
import pytest

from rotorbatt.mesh import build_mesh
from rotorbatt.parameters import DegradationToggles, default_parameters
from rotorbatt.solver import CellSimulator, SolverOptions

COARSE = dict(N_n=4, N_sep=3, N_p=4, N_r=4)


@pytest.fixture
def params():
    return default_parameters()


@pytest.fixture
def params_nodeg():
    p = default_parameters()
    p.degradation.toggles = DegradationToggles.all_off()
    return p


@pytest.fixture
def coarse_mesh(params):
    return build_mesh(params, **COARSE)


@pytest.fixture
def coarse_sim(params_nodeg):
    mesh = build_mesh(params_nodeg, **COARSE)
    return CellSimulator(params_nodeg, mesh, SolverOptions())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
