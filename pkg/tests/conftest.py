import numpy as np
import pytest

from hicospec.geometry import BernoulliLattice, Window, square


@pytest.fixture
def sq():
    return square(0.5, id="sq")


@pytest.fixture
def lattice_full(sq):
    return BernoulliLattice((sq,), p=1.0)


@pytest.fixture
def lattice_half(sq):
    return BernoulliLattice((sq,), p=0.5)


def cube(edge, dim=2, lo=0.0):
    return Window.cube(edge, dim, [lo + edge / 2] * dim)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{name} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
