import math

import numpy as np
import pytest

from cavernsim import solver
from cavernsim.constitutive import arrhenius, creep_rate_arrays
from cavernsim.errors import NonConvergenceError
from cavernsim.postprocess import volume_history
from cavernsim.scenarios import build_scene, builtin_scenario, with_integrator
from cavernsim.solver import (
    IntegratorConfig,
    Scene,
    Scheme,
    initial_state,
    run_simulation,
    step_explicit,
    step_implicit,
)

TOP_LOAD = 20e6


def uniaxial(**integrator):
    return with_integrator(builtin_scenario("uniaxial-benchmark"), **integrator)


@pytest.fixture(scope="module")
def uniaxial_scene():
    return build_scene(builtin_scenario("uniaxial-benchmark"))


def test_geostatic_state_is_uniaxial(uniaxial_scene):
    state = initial_state(uniaxial_scene)
    stress = state.fields.stress
    np.testing.assert_allclose(stress.syy, -TOP_LOAD, rtol=1e-8)
    np.testing.assert_allclose(stress.sxx, 0.0, atol=1e-6 * TOP_LOAD)
    np.testing.assert_allclose(stress.szz, -0.25 * TOP_LOAD, rtol=1e-8)
    assert state.t == 0.0 and state.step == 0


def test_explicit_step_uses_the_stress_at_the_start(uniaxial_scene):
    state = initial_state(uniaxial_scene)
    config = IntegratorConfig(scheme=Scheme.EXPLICIT, dt=1.5)
    after = step_explicit(state, uniaxial_scene, config)
    props = uniaxial_scene.props
    rate = creep_rate_arrays(
        state.fields.stress, props.creep_a, props.creep_n, props.creep_Q, uniaxial_scene.temperatures
    )
    np.testing.assert_allclose(after.eps_cr[:, 1], rate.yy * 1.5 * 86400.0, rtol=1e-12)
    np.testing.assert_allclose(after.eps_cr[:, 3], rate.zz * 1.5 * 86400.0, rtol=1e-12)
    assert after.t == 1.5 and after.step == 1


def test_implicit_step_converges_below_tolerance(uniaxial_scene):
    state = initial_state(uniaxial_scene)
    config = IntegratorConfig(dt=1.5)
    after = step_implicit(state, uniaxial_scene, config)
    scale = np.linalg.norm(uniaxial_scene.loads.force_vector(1.5))
    assert after.residuals[-1] < config.residual_tolerance * scale
    assert 1 < after.iterations <= config.max_newton_iterations


def test_no_creep_converges_in_one_iteration():
    scenario = builtin_scenario("uniaxial-benchmark").model_copy(update={"materials": {"halite": {"creep": {"a": 0.0}}}})
    scene = build_scene(scenario)
    artifact = run_simulation(scene, IntegratorConfig(dt=1.5, t_end=6.0))
    assert artifact.iterations == [1, 1, 1, 1]
    first = artifact.snapshots[0].u
    np.testing.assert_allclose(artifact.final_state.u, first, rtol=1e-10)


def test_probe_rows_per_step(uniaxial_scene):
    artifact = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=4.5))
    assert len(artifact.probe_rows) == 4
    times = [row.t_day for row in artifact.probe_rows]
    assert times == pytest.approx([0.0, 1.5, 3.0, 4.5])
    settlement = [row.u_y for row in artifact.probe_rows]
    assert all(b < a for a, b in zip(settlement, settlement[1:]))
    assert artifact.status == "completed"


def test_snapshot_cadence(uniaxial_scene):
    artifact = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=6.0), snapshot_every=2)
    assert [s.t for s in artifact.snapshots] == pytest.approx([0.0, 3.0, 6.0])


def test_steady_plane_strain_creep_matches_the_power_law(uniaxial_scene, halite):
    artifact = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=275.0))
    eps = artifact.final_state.eps_cr
    equivalent = np.sqrt(2.0 / 3.0 * (eps[:, 0] ** 2 + eps[:, 1] ** 2 + eps[:, 3] ** 2 + 0.5 * eps[:, 2] ** 2))
    # sigma_zz relaxes to the in-plane mean, leaving sqrt(3)/2 of the top load as von Mises stress
    steady = math.sqrt(3.0) / 2.0 * TOP_LOAD
    law = halite.creep
    expected = law.a * arrhenius(law.Q, 313.15) * steady**law.n * 275.0 * 86400.0
    np.testing.assert_allclose(equivalent, expected, rtol=0.03)
    np.testing.assert_allclose(artifact.final_state.fields.von_mises, steady, rtol=0.01)


def test_explicit_and_implicit_agree(uniaxial_scene):
    implicit = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=30.0))
    explicit = run_simulation(uniaxial_scene, IntegratorConfig(scheme=Scheme.EXPLICIT, dt=1.5, t_end=30.0))
    u_implicit = implicit.probe_rows[-1].u_y
    u_explicit = explicit.probe_rows[-1].u_y
    assert u_explicit == pytest.approx(u_implicit, rel=0.02)


def test_large_explicit_step_is_flagged(uniaxial_scene):
    artifact = run_simulation(uniaxial_scene, IntegratorConfig(scheme=Scheme.EXPLICIT, dt=50.0, t_end=50.0))
    assert [e["event"] for e in artifact.events] == ["explicit-stability"]


def test_non_convergence_is_reported(uniaxial_scene):
    config = IntegratorConfig(dt=1.5, t_end=3.0, max_newton_iterations=1)
    with pytest.raises(NonConvergenceError) as info:
        run_simulation(uniaxial_scene, config)
    assert info.value.step == 1
    assert len(info.value.residuals) == 2
    assert info.value.reason is None
    assert "did not converge in 1 iterations" in str(info.value)


def test_non_finite_residual_stops_the_iterations(uniaxial_scene, monkeypatch):
    def blow_up(self, trial, D, dt):
        return np.full((trial.stress.sxx.size, 4), np.nan)

    monkeypatch.setattr(solver._Stepper, "creep_increment_implicit", blow_up)
    with pytest.raises(NonConvergenceError) as info:
        step_implicit(initial_state(uniaxial_scene), uniaxial_scene, IntegratorConfig(dt=1.5))
    assert info.value.reason == "non-finite residual"
    assert len(info.value.residuals) == 2


def test_growing_residual_is_reported_as_divergence(uniaxial_scene, monkeypatch):
    calls = []

    def runaway(self, trial, D, dt):
        calls.append(dt)
        size = 1e-8 * 1e4 ** len(calls)
        return np.tile([size, -size, 0.0, 0.0], (trial.stress.sxx.size, 1))

    monkeypatch.setattr(solver._Stepper, "creep_increment_implicit", runaway)
    with pytest.raises(NonConvergenceError) as info:
        step_implicit(initial_state(uniaxial_scene), uniaxial_scene, IntegratorConfig(dt=1.5))
    assert info.value.reason == "residual diverging"
    assert len(info.value.residuals) == 3
    assert np.all(np.isfinite(info.value.residuals))


def test_failed_step_is_not_retried(uniaxial_scene, monkeypatch):
    seen = []

    def failing_step(stepper, state, dt):
        seen.append(dt)
        raise NonConvergenceError(state.step + 1, state.t + dt, [1.0, 2.0])

    monkeypatch.setattr(solver, "_step_implicit", failing_step)
    with pytest.raises(NonConvergenceError):
        run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=3.0))
    assert seen == [1.5]


def test_last_step_is_shortened_to_reach_t_end(uniaxial_scene):
    artifact = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=4.0))
    assert [row.t_day for row in artifact.probe_rows] == pytest.approx([0.0, 1.5, 3.0, 4.0])


def test_implicit_step_matches_the_end_of_step_rate(uniaxial_scene):
    state = initial_state(uniaxial_scene)
    after = step_implicit(state, uniaxial_scene, IntegratorConfig(dt=1.5, residual_tolerance=1e-10))
    props = uniaxial_scene.props
    rate = creep_rate_arrays(
        after.fields.stress, props.creep_a, props.creep_n, props.creep_Q, uniaxial_scene.temperatures
    )
    np.testing.assert_allclose(after.eps_cr[:, 1], rate.yy * 1.5 * 86400.0, rtol=1e-6)
    np.testing.assert_allclose(after.eps_cr[:, 3], rate.zz * 1.5 * 86400.0, rtol=1e-6)


def test_critical_damage_ends_the_run():
    scenario = builtin_scenario("uniaxial-benchmark").model_copy(
        update={"materials": {"halite": {"damage": {"B": 1.0}}}}
    )
    scenario = with_integrator(scenario, damage_enabled=True, t_end=10.0)
    artifact = run_simulation(build_scene(scenario), scenario.integrator)
    assert artifact.status == "failed"
    assert artifact.events[-1]["event"] == "damage-failure"
    assert artifact.events[-1]["elements"]
    assert artifact.final_state.t == 0.0
    assert artifact.failure.t_day == pytest.approx(1.5)
    assert artifact.failure.elements == artifact.events[-1]["elements"]


def test_damage_grows_when_enabled():
    scenario = uniaxial(damage_enabled=True, t_end=3.0)
    artifact = run_simulation(build_scene(scenario), scenario.integrator)
    D = artifact.final_state.D
    assert np.all(D > 0) and np.all(D < 0.95)
    quiet = run_simulation(build_scene(uniaxial(t_end=3.0)), IntegratorConfig(t_end=3.0))
    assert np.all(quiet.final_state.D == 0.0)


def test_updated_geometry_stays_close_to_fixed(uniaxial_scene):
    fixed = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=3.0))
    updated = run_simulation(uniaxial_scene, IntegratorConfig(dt=1.5, t_end=3.0, geometry="updated"))
    assert updated.probe_rows[-1].u_y == pytest.approx(fixed.probe_rows[-1].u_y, rel=0.01)


@pytest.mark.slow
def test_cavern_closes_under_low_pressure(small_cavern, catalog):
    scene = Scene.build(small_cavern, catalog, name="small")
    artifact = run_simulation(scene, IntegratorConfig(dt=1.5, t_end=3.0))
    history = volume_history(artifact)
    change = history["volume_change_pct"].to_numpy()
    total = history["volume_change_total_pct"].to_numpy()
    assert change[0] == 0.0
    assert total[0] < 0
    assert np.all(np.diff(change) < 0)
    np.testing.assert_allclose(np.diff(total), np.diff(change), rtol=0.05)
    assert artifact.status == "completed"
