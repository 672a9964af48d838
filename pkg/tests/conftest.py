import numpy as np
import pytest

from spotafl.sysmodel import DeviceRound, Instance, validate_params

# filled by the acceptance module, echoed after the run even when output is captured
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def make_params(n=5, **kw):
    base = dict(n_devices=n, model_dim=4, grad_bound=10.0, sigma_b=1.0, sigma_e=1.0, power_budgets=5.0,
                epsilon=12.0, zeta=0.05, upsilon=1.5)
    base.update(kw)
    return validate_params(base)


def make_instance(p_b, p_e=None, **kw):
    """Instance with unit power so that p_b equals h_b."""
    p_e = p_b if p_e is None else p_e
    params = make_params(len(p_b), power_budgets=1.0, **kw)
    return Instance(tuple(DeviceRound.from_gains(float(b), float(e), 1.0) for b, e in zip(p_b, p_e)), params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
