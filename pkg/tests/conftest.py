import numpy as np
import pytest

from h2hub.calibration import default_calibration
from h2hub.model import MarketCalibration, MarketState

_CRITERIA: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    _CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])


@pytest.fixture(scope="session")
def base_cal():
    return default_calibration()


def random_calibration(rng: np.random.Generator) -> MarketCalibration:
    """A one-period market drawn around the shipped calibration's magnitudes."""
    u = rng.uniform
    c_green = u(1.5, 5.0, size=2)
    c_blue = u(2.0, 3.0)
    c_grey = u(1.2, 1.9)
    c = np.array([[c_green[0], c_green[1]], [c_blue + u(0, 0.5), c_blue], [c_grey + u(0, 0.5), c_grey]])
    k = np.array(
        [
            [u(10, 120), u(10, 60)],
            [u(0, 80) if rng.random() < 0.5 else 0.0, u(100, 250)],
            [0.0, u(200, 400)],
        ]
    )
    return MarketCalibration(
        horizon=1,
        theta=u(1e-4, 4e-4),
        d0=np.array([u(40, 150), u(250, 450), u(400, 550)]),
        r0=u(0.05, 0.3),
        rl=u(0.0, 0.2),
        gamma=u(2.0, 20.0),
        rho=u(0.1, 1.0),
        lead_time=np.array([2.0, u(3.0, 6.0)]),
        q=u(2.0, 2.8),
        beta_pen=u(0.0, 0.1),
        b=u(0.001, 0.01, size=3),
        s1=u(0.1, 0.3, size=3),
        s2=u(0.0, 0.1, size=3),
        tau=2.0,
        k=k,
        alpha=u(0.1, 0.7),
        c=c,
        delta=u(0.0, 0.2),
        vartheta=u(0.03, 0.1),
    )


def random_state(rng, cal) -> MarketState:
    return MarketState(0, float(rng.uniform(0.05, 0.4)))


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def simple_calibration(**changes) -> MarketCalibration:
    """One-period market with round numbers; keyword arguments replace fields."""
    fields = dict(
        horizon=1,
        theta=0.0002,
        d0=np.array([1000.0, 1000.0, 1000.0]),
        r0=0.10,
        rl=0.10,
        gamma=10.0,
        rho=0.5,
        lead_time=np.array([2.0, 5.0]),
        q=2.25,
        beta_pen=0.05,
        b=np.full(3, 0.005),
        s1=np.array([0.2, 0.2, 0.2]),
        s2=np.array([0.05, 0.05, 0.05]),
        tau=2.0,
        k=np.array([[60.0, 40.0], [0.0, 200.0], [0.0, 300.0]]),
        alpha=0.4,
        c=np.array([[3.0, 3.3], [2.4, 2.16], [1.54, 1.54]]),
        delta=0.05,
        vartheta=0.05,
    )
    fields.update(changes)
    return MarketCalibration(**fields)
