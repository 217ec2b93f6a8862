import numpy as np
import pytest

from symplane.phantom import ELLIPSOID, CAPSULE, PhantomSpec, Shape, generate_phantom


@pytest.fixture(scope="session")
def small_spec():
    """A 48-cube two-bone phantom that keeps estimation tests fast."""
    return PhantomSpec(
        dims=(48, 48, 48),
        shapes=(
            Shape(ELLIPSOID, 40.0, center=(23.5, 24.0, 24.0), size=(16.0, 15.0, 18.0)),
            Shape(ELLIPSOID, 700.0, center=(31.0, 22.0, 24.0), size=(6.0, 5.0, 7.0)),
            Shape(CAPSULE, 1100.0, p0=(28.0, 30.0, 20.0), p1=(34.0, 28.0, 28.0),
                  size=(2.5, 0.0, 0.0)),
        ),
        landmarks=(("A", (31.0, 22.0, 24.0)), ("B", (34.0, 28.0, 28.0))),
    )


@pytest.fixture(scope="session")
def small_phantom(small_spec):
    vol, plane = generate_phantom(small_spec)
    return vol, plane


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
