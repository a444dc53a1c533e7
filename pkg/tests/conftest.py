import numpy as np
import pytest


def random_stochastic(rng: np.random.Generator, n: int, density: float = 1.0) -> np.ndarray:
    a = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < density)
    # every row needs some mass
    a[np.arange(n), rng.integers(0, n, n)] += 0.1
    return a / a.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measured detail."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in rep.nodeid or rep.when != "call" and outcome != "error":
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']:>2} {status}: "
                                              f"{props.get('title', '')} | {props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
