import numpy as np
import pytest

from grac.consistency import assemble_system, solve_l1, solve_min_norm
from grac.geometry import (HybridSpace, build_mesh, decompose, domain_layers,
                           effective_volumes)
from grac.lattice import build_reference_config, stencil
from grac.potential import EAMParams, find_F0


def make_space(K, k=2, method="M1", remove_defect=True, hop_radius=2):
    st = stencil(hop_radius)
    N = domain_layers(K, hop_radius)
    cfg = build_reference_config(k, N, remove_defect=remove_defect)
    decomp = decompose(cfg, K, st)
    mesh = build_mesh(decomp)
    return HybridSpace(decomp, mesh), effective_volumes(decomp, mesh, method)


@pytest.fixture(scope="session")
def st2():
    return stencil(2)


@pytest.fixture(scope="session")
def params():
    return EAMParams()


@pytest.fixture(scope="session")
def F0(st2, params):
    return find_F0(st2, params)


class Solved:
    """Consistency system of the perfect lattice at K=3 and both solutions."""

    def __init__(self, method):
        self.space, self.volumes = make_space(3, method=method, remove_defect=False)
        self.system = assemble_system(self.space, self.volumes)
        self.C_l1 = solve_l1(self.system)
        self.C_l2 = solve_min_norm(self.system)


@pytest.fixture(scope="session")
def solved():
    cache = {}

    def get(method):
        if method not in cache:
            cache[method] = Solved(method)
        return cache[method]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
