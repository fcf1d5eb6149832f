import numpy as np
import pytest

from pathloss_ml.profile import PathProfile


def random_profile(rng: np.random.Generator, n_min: int = 5, n_max: int = 60) -> PathProfile:
    """Rough random link: random-walk terrain plus blocky clutter."""
    n = int(rng.integers(n_min, n_max + 1))
    spacing = float(rng.uniform(1.0, 50.0))
    dtm = 50.0 + np.cumsum(rng.normal(0.0, 1.5, n))
    clutter = np.where(rng.random(n) < 0.4, rng.uniform(2.0, 25.0, n), 0.0)
    return PathProfile(
        spacing_m=spacing,
        dsm_m=dtm + clutter,
        dtm_m=dtm,
        tx_height_agl_m=float(rng.uniform(17.0, 25.0)),
        rx_height_agl_m=float(rng.uniform(1.5, 25.0)),
        frequency_mhz=float(rng.choice([449.0, 915.0, 1802.0, 2695.0, 3602.0, 5850.0])),
    )


def flat_profile(n=11, spacing=100.0, tx=20.0, rx=2.0, f=3602.0, bumps=None) -> PathProfile:
    dtm = np.zeros(n)
    dsm = np.zeros(n)
    for i, h in (bumps or {}).items():
        dsm[i] = h
    return PathProfile(spacing, dsm, dtm, tx, rx, f)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def _report(number: int, ok: bool, detail: str) -> None:
        results[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number}: {detail}"

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
