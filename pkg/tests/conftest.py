import numpy as np
import pytest
from hypothesis import settings

from rfimpute.dataset import generate_synthetic, split

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth_small():
    return generate_synthetic(1200, seed=11)


@pytest.fixture(scope="session")
def synth_sets(synth_small):
    return split(synth_small, (0.4, 0.2, 0.2, 0.2), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed as one line per criterion at the end of the run
_VERDICT_KEY = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    store = request.config.stash.setdefault(_VERDICT_KEY, {})

    def record(number: int, ok: bool, detail: str):
        store[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICT_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n not in store:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  no verdict (not run or errored)")
            continue
        ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
