from dataclasses import replace

import numpy as np
import pytest

from eriflow.blocks import construct
from eriflow.compiler import compile_classes
from eriflow.executor import FockContext
from eriflow.molecule import load_molecule

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def water():
    return load_molecule("water")


@pytest.fixture(scope="session")
def h2():
    return load_molecule("h2")


@pytest.fixture(scope="session")
def water_engine(water):
    bplan = construct(water.shells, 4)
    ctx = FockContext(water.shells, bplan)
    plans = compile_classes(bplan.classes)
    return ctx, plans


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_symmetric(n, rng):
    X = rng.standard_normal((n, n))
    return 0.5 * (X + X.T)


def water_cluster_shells(n):
    """Shells of n water monomers on a 3 Bohr-spaced grid (5 shells each)."""
    base = load_molecule("water").shells
    out = []
    for k in range(n):
        shift = np.array([3.0 * (k % 4), 3.0 * (k // 4), 0.0])
        out += [replace(s, center=tuple(np.add(s.center, shift))) for s in base]
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
