import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pmle", max_examples=40, deadline=None)
settings.load_profile("pmle")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_spd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    lam = np.geomspace(1.0, cond, p)
    return (q * lam) @ q.T


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
