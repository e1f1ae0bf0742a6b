import time

import numpy as np
import pytest

from hydrogen_cm.grid import GridSpec, build_grid
from hydrogen_cm.hydrogen import BoundStateLabel, eigenstate_coeffs
from hydrogen_cm.laser import LaserPulse, field_amplitude_from_intensity, omega_from_wavelength
from hydrogen_cm.propagator import PropagationPlan, run

DESK = GridSpec(r_max=100.0, N_r=400, N_theta=7, N_phi=7)
SMALL = GridSpec(r_max=30.0, N_r=60, N_theta=5, N_phi=5, absorber_fraction=0.0)


@pytest.fixture(scope="session")
def desk_grid():
    return build_grid(DESK)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(SMALL)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_coeffs(grid, rng, width=4.0):
    """Random compact state: random cubic-in-r profile per lm times a smooth envelope, normalized."""
    x = grid.r / width
    env = grid.sqrt_w * grid.r * np.exp(-x)
    a = rng.standard_normal((grid.n_lm, 4)) + 1j * rng.standard_normal((grid.n_lm, 4))
    C = (a @ np.vstack([x**k for k in range(4)])) * env
    return C / np.linalg.norm(C)


def desk_pulse(wavelength_nm, n_T=3, intensity=1e14):
    return LaserPulse(field_amplitude_from_intensity(intensity), omega_from_wavelength(wavelength_nm), n_T)


def desk_run(grid, pulse, steps_per_cycle=2000, t_out=None, alpha=None, freeze_cm=False):
    """Coupled run from the pulse onset to (n_T + 1) T (or t_out)."""
    T = pulse.T
    t_start = -0.5 * pulse.n_T * T
    t_out = (pulse.n_T + 1) * T if t_out is None else t_out
    dt = T / steps_per_cycle
    n = int(round((t_out - t_start) / dt))
    plan = PropagationPlan(dt=dt, t_start=t_start, t_end=t_start + n * dt)
    C0 = eigenstate_coeffs(BoundStateLabel(1), grid)
    start = time.perf_counter()
    result = run(grid, pulse, plan, C0, alpha=alpha, freeze_cm=freeze_cm)
    result.info["wall_s"] = time.perf_counter() - start
    result.info["pulse"] = pulse
    return result


@pytest.fixture(scope="session")
def run_90nm(desk_grid):
    """Criterion-8 desk run: 90 nm, 1e14 W/cm^2, n_T = 3, dt = T/2000."""
    return desk_run(desk_grid, desk_pulse(90.0))


@pytest.fixture(scope="session")
def run_400nm(desk_grid):
    """Matched run at 400 nm for the frequency-ordering check."""
    return desk_run(desk_grid, desk_pulse(400.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
