import numpy as np
import pytest

from secure_cbf import AttackConfig, LtiSystem, NumericConfig, PolyhedralCbf, SensorSubset, run_scenario, sinusoid_nominal, vehicle_system

NOISELESS = NumericConfig(residual_tol=1e-10)


def random_system(rng, n, m, p, sparse=0.0):
    """Random (A, B, C); with ``sparse`` > 0 some entries are zeroed to hit structured cases."""
    A = rng.uniform(-1, 1, (n, n))
    B = rng.uniform(-1, 1, (n, m))
    C = rng.uniform(-1, 1, (p, n))
    if sparse:
        C[rng.random(C.shape) < sparse] = 0.0
        A[rng.random(A.shape) < sparse] = 0.0
    return LtiSystem(A, B, C)


def simulate_outputs(sys, x0, inputs, attack=None):
    """Plain loop: y(k) = C x(k) + attack[k]."""
    x = np.array(x0, dtype=float)
    ys = []
    for k in range(len(inputs) + 1):
        y = sys.C @ x
        if attack is not None:
            y = y + attack[k]
        ys.append(y)
        if k < len(inputs):
            x = sys.A @ x + sys.B @ inputs[k]
    return np.array(ys)


def vehicle_box(gamma=0.05):
    return PolyhedralCbf(np.vstack([np.eye(4), -np.eye(4)]), 4.0 * np.ones(8), gamma)


def vehicle_run(x_fake=(2, 2, 2, 1), noise=0.01, residual_tol=1e-3, horizon=3000, seed=0):
    sys = vehicle_system()
    attack = AttackConfig(SensorSubset([1, 3, 5]), "fake_state", np.array(x_fake, float), noise_std=noise, seed=seed)
    cfg = NumericConfig(residual_tol=residual_tol)
    return run_scenario(sys, vehicle_box(), np.ones(4), attack, sinusoid_nominal(), horizon, 4, 3, cfg, dt=0.01)


@pytest.fixture(scope="session")
def vehicle():
    return vehicle_system()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
