import numpy as np
import pytest

from osscontrol.plant import PlantMatrices, UncertainPlant, fixed_plant


@pytest.fixture
def two_state_plant() -> PlantMatrices:
    """Stable two-state plant with y = (x1, u); its equilibrium outputs span (1, 1)."""
    return PlantMatrices(
        a=[[-1.0, 0.0], [1.0, -1.0]], b=[[1.0], [-1.0]], bw=[[1.0], [1.0]],
        c=[[1.0, 0.0], [0.0, 0.0]], d=[[0.0], [1.0]], q=np.zeros((2, 1)),
    )


@pytest.fixture
def two_state_family() -> UncertainPlant:
    """Perturbed two-state family: the equilibrium-output direction rotates with delta."""

    def evaluate(delta: np.ndarray) -> PlantMatrices:
        d = float(delta[0])
        return PlantMatrices(
            a=[[-1.0 - d, 0.0], [1.0 + d, -1.0]], b=[[1.0], [-1.0]], bw=[[1.0], [1.0]],
            c=[[1.0, 0.0], [0.0, 0.0]], d=[[0.0], [1.0]], q=np.zeros((2, 1)),
        )

    return UncertainPlant(evaluate=evaluate, delta_dim=1,
                          delta_samples=[[0.0], [0.5], [-0.5]],
                          delta_box=[(-0.5, 0.5)])


@pytest.fixture
def singular_unstable_plant() -> PlantMatrices:
    """Three-state plant with eigenvalues {0, 0, 1}: neither invertible nor stable."""
    return PlantMatrices(
        a=[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        b=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], bw=[[0.0], [1.0], [0.0]],
        c=np.eye(3), d=np.zeros((3, 2)), q=np.zeros((3, 1)),
    )


@pytest.fixture
def nominal_two_state(two_state_plant) -> UncertainPlant:
    return fixed_plant(two_state_plant)
