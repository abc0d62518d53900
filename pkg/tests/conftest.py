import numpy as np
import pytest

from sosinfer.pool import merge_pools, pool_from_points, SamplePool, ScenarioPool

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    line = f"criterion {criterion:>2}: {status}  {detail}"
    print(line)
    ACCEPTANCE[criterion] = (status, line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k][1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pool(rng, n, m, dim):
    x = rng.normal(size=(n, dim))
    if m == 0:
        return pool_from_points(x)
    y = rng.normal(size=(m, dim))
    return merge_pools(SamplePool(x), ScenarioPool(y, dim))
