import functools

import pytest

from exhaustdet import synth


@functools.lru_cache(maxsize=None)
def simulated(name, seed=0, frames=100):
    return synth.simulate(synth.preset(name, seed=seed, frames=frames))


@pytest.fixture(scope="session")
def idle_seq():
    return simulated("idle")


# one line per acceptance criterion, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
