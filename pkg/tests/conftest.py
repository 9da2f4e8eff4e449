"""Shared fixtures.  Heavy Monte Carlo ensembles are computed once per session."""
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lorentz_union.config import UnionConfiguration, build_example_family, integer_lattice
from lorentz_union.exact import Base
from lorentz_union.stats import LaunchSpec, simulate_fpl_ensemble

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

RHO = 1e-3


@pytest.fixture(scope="session")
def z2():
    return UnionConfiguration(2, [integer_lattice(2)])


@pytest.fixture(scope="session")
def family2():
    return build_example_family(2, 2, Base.radical(2, 2))


@pytest.fixture(scope="session")
def z2_lattice_run(z2):
    """Single lattice, launch from a scatterer, uniform exit parameter."""
    return simulate_fpl_ensemble(z2, LaunchSpec("lattice", RHO, 1e5), 1_000_000, 101)


@pytest.fixture(scope="session")
def z2_generic_run(z2):
    return simulate_fpl_ensemble(z2, LaunchSpec("generic", RHO, 1e6), 100_000, 102)


@pytest.fixture(scope="session")
def family_generic_run(family2):
    return simulate_fpl_ensemble(family2, LaunchSpec("generic", RHO, 1e5), 1_000_000, 103)


@pytest.fixture(scope="session")
def family_lattice_run(family2):
    return simulate_fpl_ensemble(family2, LaunchSpec("lattice_all", RHO, 1e5), 1_000_000, 104)


@pytest.fixture(scope="session")
def union_tables(z2_lattice_run):
    from lorentz_union.laws import SingleLatticeKernel, launch_from_lattice_density
    from lorentz_union.stats import kernel_xi_edges

    H = z2_lattice_run.kernel(kernel_xi_edges(z2_lattice_run.xi_T))
    single = SingleLatticeKernel.from_histogram(H)
    return launch_from_lattice_density(single, [0.5, 0.5])


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        line = f"ACCEPTANCE #{number:<2} {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
