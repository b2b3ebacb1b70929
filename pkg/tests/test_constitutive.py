import math

import numpy as np
import pytest

from cavernsim.constitutive import (
    DamageState,
    StressState,
    creep_increment_backward_euler,
    creep_strain_rate,
    damage_rate,
    deviatoric,
    equivalent_rate,
    failure_time_constant_stress,
    integrate_damage,
    permeability,
    plane_strain_stress,
    time_to_damage,
    von_mises,
)
from cavernsim.errors import DamageSaturatedError
from cavernsim.materials import DamageParams

T_BENCH = 313.15
UNIAXIAL = StressState(0.0, -20e6, 0.0, 0.0)


def test_von_mises_of_simple_states():
    assert von_mises(UNIAXIAL) == pytest.approx(20e6)
    assert von_mises(StressState(0.0, 0.0, 5e6, 0.0)) == pytest.approx(math.sqrt(3.0) * 5e6)
    assert von_mises(StressState(-7e6, -7e6, 0.0, -7e6)) == pytest.approx(0.0)


def test_deviator_is_trace_free():
    s = deviatoric(StressState(-3e6, -11e6, 2e6, -5e6))
    assert s.sxx + s.syy + s.szz == pytest.approx(0.0, abs=1e-6)
    assert s.sxy == 2e6


def test_uniaxial_creep_rate_of_halite(halite):
    rate = creep_strain_rate(UNIAXIAL, halite.creep, T_BENCH)
    expected = 8.10e-27 * math.exp(-51600.0 / (8.314 * T_BENCH)) * (20e6) ** 3.5
    assert equivalent_rate(rate) == pytest.approx(expected, rel=1e-10)
    assert expected == pytest.approx(7.16e-10, rel=1e-2)
    # compression shortens along y
    assert rate.yy < 0 < rate.xx


def test_creep_flow_is_trace_free_and_coaxial(halite):
    stress = StressState(-12e6, -25e6, 4e6, -15e6)
    rate = creep_strain_rate(stress, halite.creep, T_BENCH)
    assert rate.xx + rate.yy + rate.zz == pytest.approx(0.0, abs=1e-12 * abs(rate.yy))
    s = deviatoric(stress)
    ratio = rate.xx / s.sxx
    np.testing.assert_allclose([rate.yy / s.syy, rate.xy / s.sxy, rate.zz / s.szz], ratio, rtol=1e-10)


def test_hydrostatic_stress_does_not_creep(halite):
    rate = creep_strain_rate(StressState(-10e6, -10e6, 0.0, -10e6), halite.creep, T_BENCH)
    assert equivalent_rate(rate) == pytest.approx(0.0)


def test_damage_accelerates_creep(halite):
    intact = equivalent_rate(creep_strain_rate(UNIAXIAL, halite.creep, T_BENCH))
    damaged = equivalent_rate(creep_strain_rate(UNIAXIAL, halite.creep, T_BENCH, DamageState(0.5)))
    assert damaged / intact == pytest.approx(2.0**3.5)


def test_saturated_damage_raises(halite):
    with pytest.raises(DamageSaturatedError):
        creep_strain_rate(UNIAXIAL, halite.creep, T_BENCH, DamageState(1.0))
    with pytest.raises(DamageSaturatedError):
        damage_rate(30.0, DamageState(1.0), halite.damage)


def test_creep_rate_works_elementwise(halite):
    sxx = np.array([0.0, -5e6, -10e6])
    rate = creep_strain_rate(StressState(sxx, np.full(3, -20e6), np.zeros(3), np.zeros(3)), halite.creep, T_BENCH)
    assert rate.xx.shape == (3,)


def test_damage_rate_and_failure_time(halite):
    params = halite.damage
    rate0 = damage_rate(30.0, DamageState(0.0), params)
    assert rate0 == pytest.approx(30.0**2.5 / 4e4)
    assert damage_rate(30.0, DamageState(0.5), params) == pytest.approx(rate0 / 0.5**2.5)
    t_f = failure_time_constant_stress(30.0, params)
    assert t_f == pytest.approx(4e4 / (3.5 * 30.0**2.5))
    assert t_f == pytest.approx(2.32, rel=1e-2)


def test_failure_time_without_stress_is_infinite(halite):
    assert failure_time_constant_stress(0.0, halite.damage) == math.inf


def test_b_inside_the_exponent():
    params = DamageParams(B=20.0, r=2.0, b_inside_exponent=True)
    assert damage_rate(10.0, DamageState(0.0), params) == pytest.approx((10.0 / 20.0) ** 2)


def test_integrated_damage_reaches_failure_at_the_closed_form_time(halite):
    t_f = failure_time_constant_stress(30.0, halite.damage)
    history = integrate_damage(30.0, halite.damage, t_end=2.0 * t_f, dt=t_f / 1000.0)
    assert history.time_to_target == pytest.approx(t_f, rel=5e-3)
    assert history.D[-1] == pytest.approx(1.0)
    assert np.all(np.diff(history.D) >= 0)


def test_integrated_damage_matches_intermediate_levels(halite):
    t_f = failure_time_constant_stress(30.0, halite.damage)
    history = integrate_damage(30.0, halite.damage, t_end=t_f, dt=t_f / 1000.0, target=0.5)
    assert history.time_to_target == pytest.approx(time_to_damage(30.0, halite.damage, 0.5), rel=1e-3)


MU_HALITE = 14e9
DAY = 86400.0


def _end_stress(trial, step):
    return StressState(
        trial.sxx - 2.0 * MU_HALITE * step.xx,
        trial.syy - 2.0 * MU_HALITE * step.yy,
        trial.sxy - 2.0 * MU_HALITE * step.xy,
        trial.szz - 2.0 * MU_HALITE * step.zz,
    )


@pytest.mark.parametrize("days", [0.1, 1.5, 50.0])
def test_backward_euler_increment_is_the_end_of_step_rate(halite, days):
    law = halite.creep
    trial = StressState(-12e6, -30e6, 4e6, -15e6)
    step = creep_increment_backward_euler(trial, MU_HALITE, law.a, law.n, law.Q, T_BENCH, days * DAY)
    rate = creep_strain_rate(_end_stress(trial, step), law, T_BENCH)
    np.testing.assert_allclose(
        [step.xx, step.yy, step.xy, step.zz],
        [rate.xx * days * DAY, rate.yy * days * DAY, rate.xy * days * DAY, rate.zz * days * DAY],
        rtol=1e-9,
    )
    assert step.xx + step.yy + step.zz == pytest.approx(0.0, abs=1e-12 * abs(step.yy))


def test_backward_euler_relaxes_but_never_reverses_the_stress(halite):
    law = halite.creep
    # far longer than the relaxation time at this stress
    step = creep_increment_backward_euler(UNIAXIAL, MU_HALITE, law.a, law.n, law.Q, T_BENCH, 1e5 * DAY)
    q_end = von_mises(_end_stress(UNIAXIAL, step))
    assert 0.0 < q_end < 0.1 * von_mises(UNIAXIAL)
    s = deviatoric(UNIAXIAL)
    assert step.yy / s.syy > 0


def test_backward_euler_without_deviator_or_creep(halite):
    law = halite.creep
    hydrostatic = StressState(-10e6, -10e6, 0.0, -10e6)
    step = creep_increment_backward_euler(hydrostatic, MU_HALITE, law.a, law.n, law.Q, T_BENCH, DAY)
    assert list(step) == [0.0, 0.0, 0.0, 0.0]
    stresses = StressState(np.array([-12e6, -12e6]), np.array([-30e6, -30e6]), np.zeros(2), np.full(2, -15e6))
    step = creep_increment_backward_euler(stresses, MU_HALITE, np.array([law.a, 0.0]), law.n, law.Q, T_BENCH, DAY)
    assert step.yy.shape == (2,)
    assert step.yy[0] < 0 and step.yy[1] == 0.0


def test_backward_euler_with_damage_creeps_more(halite):
    law = halite.creep
    intact = creep_increment_backward_euler(UNIAXIAL, MU_HALITE, law.a, law.n, law.Q, T_BENCH, DAY)
    damaged = creep_increment_backward_euler(UNIAXIAL, MU_HALITE, law.a, law.n, law.Q, T_BENCH, DAY, D=0.3)
    assert damaged.yy < intact.yy < 0
    with pytest.raises(DamageSaturatedError):
        creep_increment_backward_euler(UNIAXIAL, MU_HALITE, law.a, law.n, law.Q, T_BENCH, DAY, D=1.0)


def _closed_form_damage(t, t_f, r):
    return 1.0 - (1.0 - np.asarray(t) / t_f) ** (1.0 / (r + 1.0))


def test_rk4_damage_follows_the_closed_form_away_from_failure(halite):
    # stops at half the failure time, so no step is closed analytically
    t_f = failure_time_constant_stress(30.0, halite.damage)
    history = integrate_damage(30.0, halite.damage, t_end=0.5 * t_f, dt=t_f / 200.0)
    assert history.time_to_target is None
    assert history.t[-1] == pytest.approx(0.5 * t_f)
    np.testing.assert_allclose(history.D, _closed_form_damage(history.t, t_f, halite.damage.r), rtol=1e-6, atol=1e-12)


def test_rk4_damage_error_is_fourth_order(halite):
    t_f = failure_time_constant_stress(30.0, halite.damage)
    r = halite.damage.r
    errors = []
    for steps in (40, 80):
        history = integrate_damage(30.0, halite.damage, t_end=0.75 * t_f, dt=t_f / steps)
        assert history.time_to_target is None
        errors.append(abs(history.D[-1] - _closed_form_damage(history.t[-1], t_f, r)))
    assert 10.0 < errors[0] / errors[1] < 22.0


def test_damage_stays_zero_without_stress(halite):
    history = integrate_damage(0.0, halite.damage, t_end=10.0, dt=1.0)
    assert history.time_to_target is None
    assert np.all(history.D == 0.0)
    assert history.t[-1] == pytest.approx(10.0)


def test_damage_with_time_dependent_stress(halite):
    constant = integrate_damage(30.0, halite.damage, t_end=10.0, dt=0.01)
    ramp = integrate_damage(lambda t: 30.0 * min(1.0, t), halite.damage, t_end=10.0, dt=0.01)
    assert ramp.time_to_target > constant.time_to_target


def test_integrate_damage_rejects_bad_step(halite):
    with pytest.raises(ValueError):
        integrate_damage(30.0, halite.damage, t_end=1.0, dt=0.0)


def test_plane_strain_stress_out_of_plane_component():
    stress = plane_strain_stress(14e9, 14e9, 1e-4, -2e-4, 0.0)
    assert stress.szz == pytest.approx(14e9 * -1e-4)
    assert stress.sxx == pytest.approx(14e9 * -1e-4 + 28e9 * 1e-4)


def test_permeability_law():
    assert permeability(0.0) == 0.0
    assert permeability(0.01) == pytest.approx(2.13e-14)
    np.testing.assert_allclose(permeability(np.array([0.01, 0.02])), [2.13e-14, 8 * 2.13e-14])
    with pytest.raises(ValueError):
        permeability(-1e-3)
