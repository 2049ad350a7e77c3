import numpy as np
import pytest

import mfclab as m

AXIS_1D = (-3.0, 3.0, 241)
AXIS_2D = (-3.0, 3.0, 121)  # h = 0.05 so the probe points {-1, 0, 1} are grid nodes


def sized_grid(model, n, axis, t0=0.0, T=1.0, margin=0.25):
    """GridSpec with a CFL-feasible step count for the given model."""
    probe = m.GridSpec(axes=(tuple(axis),) * (n * model.d), time_steps=1, margin=margin)
    steps = m.required_time_steps(model, n, probe, t0, T)
    return m.GridSpec(axes=probe.axes, time_steps=steps, margin=margin)


@pytest.fixture(scope="session")
def lq_model():
    return m.registry_model("LQ-decoupled")


@pytest.fixture(scope="session")
def meanrev_model():
    return m.registry_model("LQ-mean-reverting")


@pytest.fixture(scope="session")
def lq_u1(lq_model):
    """n=1 solve at the acceptance resolution, every slice stored."""
    grid = sized_grid(lq_model, 1, AXIS_1D)
    return m.solve_hjb(lq_model, 1, grid, 0.0, 1.0, max_stored_slices=grid.time_steps + 1)


@pytest.fixture(scope="session")
def lq_u2(lq_model):
    grid = sized_grid(lq_model, 2, AXIS_2D)
    return m.solve_hjb(lq_model, 2, grid, 0.0, 1.0)


@pytest.fixture(scope="session")
def lq_feedback(lq_u1):
    return m.synthesize_feedback(lq_u1)


def lq_exact(x, t=0.0, T=1.0, sigma=1.0, kappa=1.0):
    """Closed form for the decoupled benchmark, from the Riccati ODE by hand:
    P(t) = kappa/(kappa + T - t), r(t) = (sigma^2 kappa / 2) ln(1 + (T-t)/kappa)."""
    x = np.asarray(x, dtype=np.float64)
    P = kappa / (kappa + (T - t))
    r = 0.5 * sigma ** 2 * kappa * np.log(1.0 + (T - t) / kappa)
    return 0.5 * P * x ** 2 + r
