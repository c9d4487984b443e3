import pytest

from harness import BOUNDARIES, crash_trial


@pytest.mark.parametrize("boundary", BOUNDARIES)
@pytest.mark.parametrize("seed", range(5))
def test_crash_at_boundary(tmp_path, seed, boundary):
    crashed, problems = crash_trial(tmp_path, seed, boundary)
    assert crashed
    assert problems == []
