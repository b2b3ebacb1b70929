import math

import numpy as np
import pytest

from cavernsim.errors import VerificationGateError
from cavernsim.materials import lame_from
from cavernsim.meshgen import generate_rectangle
from cavernsim.verification import (
    ManufacturedField,
    MMSConfig,
    body_force_vector,
    boundary_dofs,
    fitted_order,
    run_mms_convergence,
)


@pytest.fixture(scope="module")
def field():
    return ManufacturedField(1000.0, 0.1, 14e9, 14e9)


def test_body_force_balances_the_stress_divergence(field):
    rng = np.random.default_rng(3)
    x, y = rng.uniform(50.0, 950.0, size=(2, 20))
    h = 1e-3
    dsx = (field.stress(x + h, y) - field.stress(x - h, y)) / (2 * h)
    dsy = (field.stress(x, y + h) - field.stress(x, y - h)) / (2 * h)
    fx = -(dsx[:, 0] + dsy[:, 2])
    fy = -(dsx[:, 2] + dsy[:, 1])
    expected = field.body_force(x, y)
    scale = np.abs(expected).max()
    np.testing.assert_allclose(fx, expected[:, 0], atol=1e-5 * scale)
    np.testing.assert_allclose(fy, expected[:, 1], atol=1e-5 * scale)


def test_field_vanishes_on_the_boundary(field):
    s = np.linspace(0.0, 1000.0, 11)
    for x, y in [(s, 0 * s), (s, 0 * s + 1000.0), (0 * s, s), (0 * s + 1000.0, s)]:
        np.testing.assert_allclose(field.displacement(x, y), 0.0, atol=1e-15)


def test_body_force_vector_total(field):
    mesh = generate_rectangle(1000.0, 1000.0, 16, 16)
    forces = body_force_vector(mesh, field)
    # integral of f over the square: a k^2 L^2 (lam + 3 mu) (2/pi)^2, the cosine term integrates to zero
    k = math.pi / 1000.0
    total = 0.1 * k**2 * (14e9 + 3 * 14e9) * (2 * 1000.0 / math.pi) ** 2
    assert forces[0::2].sum() == pytest.approx(total, rel=1e-2)
    assert forces[0::2].sum() == pytest.approx(forces[1::2].sum(), rel=1e-12)


def test_boundary_dofs_cover_the_perimeter():
    mesh = generate_rectangle(1.0, 1.0, 4, 4)
    assert len(boundary_dofs(mesh)) == 2 * 16


def test_fitted_order():
    h = np.array([4.0, 2.0, 1.0])
    assert fitted_order(h, 3.0 * h**2) == pytest.approx(2.0)
    assert fitted_order(h, np.zeros(3)) == math.inf


@pytest.mark.slow
def test_observed_orders():
    report = run_mms_convergence(MMSConfig(levels=[8, 16, 32]))
    assert report.passed
    assert report.displacement_order >= 1.9
    assert report.strain_order >= 0.9
    assert report.stress_order >= 0.9
    errors = [level.displacement for level in report.levels]
    assert errors == sorted(errors, reverse=True)
    frame = report.to_frame()
    assert list(frame["cells"]) == [8, 16, 32]
    assert frame["displacement_ratio"].iloc[-1] > 3.0
    assert "PASS" in report.format()


def test_zero_amplitude_is_exact():
    report = run_mms_convergence(MMSConfig(levels=[4, 8, 16], amplitude=0.0))
    assert all(level.displacement == 0 and level.stress == 0 for level in report.levels)
    assert report.displacement_order == math.inf
    assert report.passed


def test_gate_failure():
    config = MMSConfig(levels=[4, 8, 16], min_displacement_order=5.0)
    with pytest.raises(VerificationGateError, match="observed orders"):
        run_mms_convergence(config)
    report = run_mms_convergence(config, gate=False)
    assert not report.passed
    assert "FAIL" in report.format()


def test_levels_need_three_entries():
    with pytest.raises(ValueError):
        MMSConfig(levels=[8, 16])


def test_lame_constants_of_halite(catalog):
    lame = lame_from(catalog["halite"].elastic)
    assert lame.lam == pytest.approx(14e9) and lame.mu == pytest.approx(14e9)
