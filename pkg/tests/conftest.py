import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridreg.fields import DisplacementField
from hybridreg.volume import Grid, LabelVolume, Volume

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_volume(rng, dims=(8, 7, 5), spacing=(1.0, 1.0, 1.0)):
    return Volume(Grid(dims, spacing), rng.normal(size=dims).astype(np.float32))


def random_labels(rng, dims=(8, 7, 5), n=4, p_bg=0.5):
    data = rng.integers(1, n + 1, size=dims)
    data[rng.random(dims) < p_bg] = 0
    return LabelVolume(Grid(dims), data)


def random_field(rng, dims=(6, 6, 6), scale=1.0):
    return DisplacementField(Grid(dims), rng.normal(scale=scale, size=(3, *dims)))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: (int(s.split()[1].rstrip("ab")), s)):
            terminalreporter.write_line(line)
