import dataclasses
import threading

import pytest

from swarmlink.node import ExchangeMode, run_monolithic, run_node
from swarmlink.scenario import ScenarioSpec, parse_scenario
from swarmlink.transport import impaired_channel


def make_spec(n0=5, n1=5, steps=100, mode=ExchangeMode.LOCKSTEP, **kw) -> ScenarioSpec:
    base = parse_scenario("paper-iv-a")
    return dataclasses.replace(base, agents_per_node=(n0, n1), step_budget=steps, exchange_mode=mode, **kw)


def run_pair(spec, imp=None):
    """Run both nodes of ``spec`` on an in-process link; returns (logs, errors, links)."""
    a, b = impaired_channel(imp or spec.impairment)
    links = {0: a, 1: b}
    logs, errors = {}, {}

    def go(i):
        try:
            logs[i] = run_node(spec.node_config(i), links[i])
        except Exception as e:  # collected for the caller
            errors[i] = e
        finally:
            links[i].close()

    ts = [threading.Thread(target=go, args=(i,)) for i in (0, 1)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(120)
    return logs, errors, links


def monolithic(spec):
    return run_monolithic(spec.initial_world(), spec.swarm, spec.sim, spec.leader_path, spec.step_budget)


@pytest.fixture
def base_spec():
    return parse_scenario("paper-iv-a")


# one line per acceptance criterion, filled in by test_acceptance and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
