import numpy as np
import pytest

import rbainv as rb


def receiver_grid(lo, hi, n):
    xs = np.linspace(lo, hi, n)
    return np.array([(x, y) for y in xs for x in xs])


@pytest.fixture(scope="session")
def channels31():
    return rb.TimeChannels.logspaced(1e-6, 1e-3, 31)


@pytest.fixture(scope="session")
def problem_1d():
    spec = rb.ProblemSpec(
        dimension=1, extent=(0.0, 1.0), n_cells=(10,), kappa=1.0,
        sigma_background=0.1,
        receivers=np.array([[0.35], [0.65]]),
        source=rb.SourceSpec(kind="delta", position=(0.5,), amplitude=1.0),
    )
    return rb.build_problem(spec)


@pytest.fixture(scope="session")
def small_problem():
    """2-D, N=49, P=128: fast enough for derivative and adjoint tests."""
    spec = rb.ProblemSpec(
        dimension=2, extent=(-60.0, 60.0, -60.0, 60.0), n_cells=(8, 8), kappa=1e5,
        sigma_background=0.1,
        receivers=receiver_grid(-45.0, 45.0, 3),
        source=rb.SourceSpec(kind="box", center=(0.0, 0.0), size=(40.0, 40.0)),
        anomalies=(rb.AnomalySpec(box=(-40, -10, -40, -10), sigma=1.0, name="cond"),),
    )
    return rb.build_problem(spec)


@pytest.fixture(scope="session")
def small_approx(small_problem):
    """16 poles, 7 channels, interval wide enough for perturbed models."""
    channels = rb.TimeChannels.logspaced(1e-6, 1e-3, 7)
    bound = rb.spectral_bound(small_problem, small_problem.reference_model())
    return rb.fit_common_pole(channels, (0.0, 30.0 * bound), 16,
                              rb.FitConfig(n_log=500, n_lin=500))


@pytest.fixture(scope="session")
def acc_problem():
    """N <= 200 geometry: 7x7 receivers at 15 m spacing, source loop analog,
    one conductive and one resistive block."""
    spec = rb.ProblemSpec(
        dimension=2, extent=(-60.0, 60.0, -60.0, 60.0), n_cells=(13, 13), kappa=1e5,
        sigma_background=0.1,
        receivers=receiver_grid(-45.0, 45.0, 7),
        source=rb.SourceSpec(kind="box", center=(0.0, 0.0), size=(40.0, 40.0)),
        anomalies=(rb.AnomalySpec(box=(-40, -10, -40, -10), sigma=1.0, name="cond"),
                   rb.AnomalySpec(box=(10, 40, 10, 40), sigma=0.01, name="res")),
    )
    return rb.build_problem(spec)


@pytest.fixture(scope="session")
def acc_approx(acc_problem, channels31):
    bound = rb.spectral_bound(acc_problem, acc_problem.true_model())
    return rb.fit_common_pole(channels31, (0.0, 1.05 * bound), 21)


@pytest.fixture(scope="session")
def inv_problem():
    """16x16 inversion testbed with both anomaly polarities."""
    spec = rb.ProblemSpec(
        dimension=2, extent=(-60.0, 60.0, -60.0, 60.0), n_cells=(16, 16), kappa=1e5,
        sigma_background=0.1,
        receivers=receiver_grid(-45.0, 45.0, 7),
        source=rb.SourceSpec(kind="box", center=(0.0, 0.0), size=(40.0, 40.0)),
        anomalies=(rb.AnomalySpec(box=(-40, -10, -40, -10), sigma=1.0, name="cond"),
                   rb.AnomalySpec(box=(10, 40, 10, 40), sigma=0.01, name="res")),
    )
    return rb.build_problem(spec)


@pytest.fixture(scope="session")
def inv_approx(inv_problem, channels31):
    bound = rb.spectral_bound(inv_problem, inv_problem.reference_model())
    return rb.fit_common_pole(channels31, (0.0, 30.0 * bound), 21)


def in_box(points, box):
    ok = (points[:, 0] >= box[0]) & (points[:, 0] <= box[1])
    if points.shape[1] == 2:
        ok &= (points[:, 1] >= box[2]) & (points[:, 1] <= box[3])
    return ok
