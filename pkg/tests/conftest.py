import numpy as np
import pytest

from ntumatch.market import LatentUtilities, Market, SchoolType

ACCEPTANCE_LINES: list[str] = []


def random_market(rng, n, C, public=False, gender=False, tags=None):
    """Market with random shifters, random capacities (some binding, some
    not) and optional non-selecting colleges and single-gender colleges."""
    caps = rng.integers(1, max(2, (3 * n) // (2 * C)) + 1, size=C)
    types = [SchoolType.SELECTIVE_A] * C
    if public:
        types = [SchoolType.PUBLIC if rng.random() < 0.4 else SchoolType.SELECTIVE_A for _ in range(C)]
    kw = {}
    if gender:
        kw["gender"] = rng.choice(np.array(["F", "M"], dtype=object), size=n)
        kw["college_gender"] = tuple(rng.choice([None, None, "F", "M"]) for _ in range(C))
    if public:
        kw["lottery"] = rng.random(n)
    return Market(y=rng.normal(size=(n, C)), w=rng.normal(size=(n, C)), z=rng.normal(size=(n, 2)),
                  capacities=caps, school_types=tuple(types), tags=tags or {}, **kw)


def random_utilities(rng, n, C, scale=1.0):
    return LatentUtilities(scale * rng.normal(size=(n, C + 1)), rng.normal(size=(C, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
