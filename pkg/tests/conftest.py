import pytest

from memroute.network import DemandTable, Edge, ModeSet, Network, Trip

ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {detail}")


def make_network(edges, origins, destinations, **kw) -> Network:
    """Network from (tail, head, t0, capacity) tuples."""
    nodes = sorted({e[0] for e in edges} | {e[1] for e in edges})
    return Network(nodes, [Edge(*e) for e in edges], origins, destinations, **kw)


def make_demands(pairs, compliant, noncompliant=None) -> DemandTable:
    trips = [Trip(n, o, d) for n, (o, d) in enumerate(pairs)]
    if noncompliant is None:
        noncompliant = [[0.0] * len(trips) for _ in range(3)]
    return DemandTable(trips, compliant, noncompliant)


ONE_MODE = ModeSet(("car",))
TWO_MODES = ModeSet(("public", "cpv"), public="public", cpv="cpv")


@pytest.fixture(scope="session")
def sample():
    from memroute.scenario import preset

    return preset("sample")


@pytest.fixture(scope="session")
def chatter():
    from memroute.scenario import preset

    return preset("chatter")
