import numpy as np
import pytest

from cavernsim.errors import AdmissibilityWarning, ScenarioError
from cavernsim.loads import CyclicStepSchedule
from cavernsim.mesh import BoundaryTag, dump_mesh
from cavernsim.meshgen import CavernDomainSpec, RectangleSpec, generate_rectangle
from cavernsim.scenarios import (
    BUILTIN_SCENARIOS,
    InterlayerBand,
    Scenario,
    apply_interlayer,
    band_range,
    build_scene,
    builtin_scenario,
    load_scenario,
    parse_scenario,
    run_scenario,
    scenario_mesh,
    serialize_scenario,
    with_integrator,
)


def test_empty_text_is_the_base_case():
    scenario = parse_scenario("")
    assert scenario == Scenario()
    assert isinstance(scenario.mesh, CavernDomainSpec)
    assert scenario.mesh.profile.radius == 25.0
    assert scenario.geostatic.depth_to_salt_top == 500.0
    assert scenario.schedule.fraction == 0.2
    assert scenario.integrator.dt == 1.5 and scenario.integrator.t_end == 275.0


def test_sections_are_parsed():
    scenario = parse_scenario(
        """
name: cyclic
schedule:
  kind: cyclic
  p_min: 0.3
  p_max: 0.7
integrator:
  scheme: explicit
  dt: 0.5
"""
    )
    assert isinstance(scenario.schedule, CyclicStepSchedule)
    assert scenario.schedule.p_max == 0.7
    assert scenario.integrator.scheme.value == "explicit"


@pytest.mark.parametrize(
    "text, path",
    [
        ("bogus: 1", "bogus"),
        ("loads:\n  gravityy: true", "loads.gravityy"),
        ("integrator:\n  dt: -1", "integrator.dt"),
        ("schedule:\n  kind: constant\n  fraction: 1.5", "schedule"),
    ],
)
def test_errors_name_the_offending_key(text, path):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.path == path
    assert str(info.value).startswith(f"{path}: ")


@pytest.mark.parametrize("text", ["- a\n- b", "a: [1, 2", "host_material: granite"])
def test_invalid_documents(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)


def test_inverted_cycle_is_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("schedule:\n  kind: cyclic\n  p_min: 0.9\n  p_max: 0.1")


def test_fraction_outside_the_window_warns():
    with pytest.warns(AdmissibilityWarning):
        scenario = parse_scenario("schedule:\n  kind: constant\n  fraction: 0.9")
    assert scenario.schedule.fraction == 0.9


def test_material_overrides_are_validated():
    scenario = parse_scenario("materials:\n  halite:\n    creep:\n      n: 3.0")
    assert scenario.catalog()["halite"].creep.n == 3.0
    with pytest.raises(ScenarioError, match="materials"):
        parse_scenario("materials:\n  halite:\n    elastic:\n      nu: 0.7")


@pytest.mark.parametrize("name", sorted(BUILTIN_SCENARIOS))
def test_builtin_scenarios_survive_serialization(name):
    scenario = builtin_scenario(name)
    assert parse_scenario(serialize_scenario(scenario)) == scenario


def test_builtin_lookup():
    assert load_scenario("builtin:cyclic-cylinder").schedule.kind == "cyclic"
    assert builtin_scenario("multi-cavern-regular-200").mesh.ctc == 200.0
    with pytest.raises(ScenarioError, match="unknown builtin"):
        builtin_scenario("nope")


def test_scenario_file(tmp_path):
    path = tmp_path / "case.yaml"
    path.write_text("name: from-file\n", encoding="utf-8")
    assert load_scenario(path).name == "from-file"
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")


def test_mesh_file_source(tmp_path):
    path = tmp_path / "block.mesh"
    with path.open("w", encoding="utf-8") as stream:
        dump_mesh(generate_rectangle(1.0, 2.0, 2, 2), stream)
    scenario = parse_scenario(f"mesh:\n  kind: file\n  path: {path}")
    assert scenario_mesh(scenario).n_elements == 8
    missing = parse_scenario(f"mesh:\n  kind: file\n  path: {tmp_path / 'none.mesh'}")
    with pytest.raises(ScenarioError) as info:
        scenario_mesh(missing)
    assert info.value.path == "mesh.path"


def test_host_material_is_applied():
    scenario = Scenario(mesh=RectangleSpec(nx=1, ny=1), host_material="potash")
    assert set(scenario_mesh(scenario).materials) == {"potash"}


def column():
    return generate_rectangle(10.0, 100.0, 1, 10)


def test_custom_band():
    band = InterlayerBand(material="potash", placement="custom", y_range=(40.0, 60.0))
    mesh = apply_interlayer(column(), band)
    centroids = mesh.centroids[:, 1]
    potash = np.array(mesh.materials) == "potash"
    assert potash.sum() == 4
    assert np.all((centroids[potash] > 40.0) & (centroids[potash] < 60.0))


def test_band_must_stay_in_the_domain():
    band = InterlayerBand(material="potash", placement="custom", y_range=(90.0, 120.0))
    with pytest.raises(ScenarioError, match="leaves the domain"):
        band_range(column(), band)


def test_band_placements_need_a_cavern():
    with pytest.raises(ScenarioError) as info:
        band_range(column(), InterlayerBand(material="potash", placement="mid"))
    assert info.value.path == "interlayer.placement"
    with pytest.raises(ScenarioError) as info:
        band_range(column(), InterlayerBand(material="potash", placement="probe"))
    assert info.value.path == "interlayer.probe"


def test_custom_band_needs_a_range():
    with pytest.raises(ValueError):
        InterlayerBand(material="potash", placement="custom")


def test_floor_and_mid_bands_on_a_cavern(small_cavern):
    ys = small_cavern.nodes[small_cavern.nodes_with_tag(BoundaryTag.CAVERN_WALL), 1]
    floor = band_range(small_cavern, InterlayerBand(material="carnallite", placement="floor", width=30.0))
    assert floor == pytest.approx((ys.min(), ys.min() + 30.0))
    mid = band_range(small_cavern, InterlayerBand(material="carnallite", placement="mid", width=30.0))
    assert 0.5 * (mid[0] + mid[1]) == pytest.approx(0.5 * (ys.min() + ys.max()))
    mesh = apply_interlayer(small_cavern, InterlayerBand(material="carnallite", placement="floor"))
    inside = np.array(mesh.materials) == "carnallite"
    assert inside.any() and not inside.all()


def test_probe_band_follows_the_probe(small_cavern):
    band = band_range(small_cavern, InterlayerBand(material="potash", placement="probe", probe="E", width=20.0))
    assert 0.5 * (band[0] + band[1]) == pytest.approx(small_cavern.probes["E"][1])


def test_probe_overrides_replace_the_defaults():
    scenario = builtin_scenario("uniaxial-benchmark")
    assert scenario_mesh(scenario).probes == {"A": (0.05, 0.1)}
    assert set(build_scene(scenario).probes) == {"A"}


def test_with_integrator_ignores_unset_values():
    base = builtin_scenario("uniaxial-benchmark")
    assert with_integrator(base, dt=None) is base
    changed = with_integrator(base, dt=0.5, scheme="explicit")
    assert changed.integrator.dt == 0.5
    assert changed.integrator.scheme.value == "explicit"
    assert changed.loads == base.loads


def test_run_scenario_writes_results(tmp_path):
    scenario = with_integrator(builtin_scenario("uniaxial-benchmark"), t_end=3.0)
    artifact = run_scenario(scenario, tmp_path)
    assert artifact.status == "completed"
    assert (tmp_path / "probes.csv").exists()


def test_mms_scenarios_do_not_simulate():
    with pytest.raises(ScenarioError) as info:
        run_scenario(builtin_scenario("mms-convergence"))
    assert info.value.path == "mode"


@pytest.mark.parametrize("material", ["carnallite", "bischofite"])
def test_interlayer_builtins_use_the_calibrated_constants(material):
    scenario = builtin_scenario(f"interlayer-{material}-floor")
    assert scenario.interlayer.material == material
    assert scenario.interlayer.placement == "floor"
    assert scenario.integrator.t_end == 50.0


def test_sensitivity_scenario_keeps_its_points_off_the_axis():
    scenario = builtin_scenario("sensitivity-cylinder")
    assert scenario.probes == {"A": (35.0, 350.0), "B": (250.0, 350.0)}
    assert scenario.schedule.kind == "constant"
