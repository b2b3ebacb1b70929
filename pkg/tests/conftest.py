import numpy as np
import pytest

from cavernsim.materials import builtin_catalog
from cavernsim.meshgen import CavernDomainSpec, CylinderProfile, generate_cavern_domain, generate_rectangle


@pytest.fixture(scope="session")
def catalog():
    return builtin_catalog()


@pytest.fixture(scope="session")
def halite(catalog):
    return catalog["halite"]


@pytest.fixture
def square():
    """2 x 1 block, 4 x 2 cells, rollers on the left and bottom."""
    return generate_rectangle(2.0, 1.0, 4, 2)


@pytest.fixture(scope="session")
def small_cavern_spec():
    return CavernDomainSpec(
        width=200.0,
        roof_thickness=80.0,
        floor_thickness=80.0,
        profile=CylinderProfile(radius=20.0, height=60.0),
        element_size=20.0,
        refinement=2.0,
        smoothing_iterations=10,
    )


@pytest.fixture(scope="session")
def small_cavern(small_cavern_spec):
    return generate_cavern_domain(small_cavern_spec)


@pytest.fixture
def linear_field():
    """Displacement u = (a x + b y, c x + d y) and its constant strain (a, d, b + c)."""
    a, b, c, d = 1e-3, 2e-4, -5e-4, -2e-3

    def field(nodes):
        u = np.empty(2 * len(nodes))
        u[0::2] = a * nodes[:, 0] + b * nodes[:, 1]
        u[1::2] = c * nodes[:, 0] + d * nodes[:, 1]
        return u

    return field, (a, d, b + c)
