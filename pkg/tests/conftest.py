import numpy as np
import pytest

from nishape import (HamiltonianSystem, ScalarField, StaticNonlinearity,
                     build_linear_example, build_pendulum)


@pytest.fixture(scope="session")
def pendulum():
    """(plant, V) with the default parameters."""
    return build_pendulum()


@pytest.fixture(scope="session")
def linear_cases():
    return {"a": build_linear_example("a"), "b": build_linear_example("b")}


def make_rotation_hamiltonian(omega: float = 1.0, r: float = 1.0) -> HamiltonianSystem:
    """Planar rotation with quadratic energy, scalar output y = x1, and
    isotropic damping r (r = 0 gives the lossless case)."""
    J = np.array([[0.0, omega], [-omega, 0.0]])
    R = r * np.eye(2)
    H = ScalarField(2, lambda x: 0.5 * float(x @ x), lambda x: np.array(x, dtype=float))
    return HamiltonianSystem(2, 1, lambda x: J, lambda x: R, H,
                             lambda x: np.array([x[0]]),
                             grad_C_fn=lambda x: np.array([[1.0, 0.0]]))


def make_linear_gain_feedback(gain: float = -0.5) -> StaticNonlinearity:
    """Scalar feedback phi(y) = gain * y with potential gain * y^2 / 2."""
    F = ScalarField(1, lambda y: 0.5 * gain * float(y[0] ** 2),
                    lambda y: gain * np.asarray(y, dtype=float))
    return StaticNonlinearity(1, lambda y: gain * np.asarray(y, dtype=float), potential=F)
