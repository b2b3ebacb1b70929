import numpy as np
import pandas as pd
import pytest

from cavernsim.postprocess import (
    PROBE_COLUMNS,
    cavern_volume,
    creep_dilatancy,
    export_probe_csv,
    export_vtk,
    make_snapshot,
    midplane_profile,
    subsidence,
    volume_change_percent,
    volume_history,
    write_run,
)
from cavernsim.scenarios import build_scene, builtin_scenario
from cavernsim.solver import IntegratorConfig, RunArtifact, run_simulation


@pytest.fixture(scope="module")
def short_run():
    scene = build_scene(builtin_scenario("uniaxial-benchmark"))
    return run_simulation(scene, IntegratorConfig(dt=1.5, t_end=3.0))


def test_volume_change_percent():
    assert volume_change_percent(100.0, 97.0) == pytest.approx(-3.0)
    assert volume_change_percent(50.0, 50.0) == 0.0


def test_cavern_volume_without_displacement(small_cavern):
    zero = np.zeros(small_cavern.n_dofs)
    assert cavern_volume(small_cavern, zero) == cavern_volume(small_cavern)


def test_cavern_volume_follows_the_wall(small_cavern):
    (before,) = cavern_volume(small_cavern)
    # uniform radial shrink about the axis by 1%
    u = np.zeros(small_cavern.n_dofs)
    u[0::2] = -0.01 * small_cavern.nodes[:, 0]
    (after,) = cavern_volume(small_cavern, u)
    assert after.area == pytest.approx(0.99 * before.area)
    assert after.volume == pytest.approx(0.99**2 * before.volume)


def test_rectangle_has_no_cavern_volume(short_run):
    assert cavern_volume(short_run.mesh) == []
    history = volume_history(short_run)
    assert history.empty
    assert "volume_change_pct" in history.columns
    assert "volume_change_total_pct" in history.columns


def test_volume_history_references(small_cavern):
    (undeformed,) = cavern_volume(small_cavern)
    artifact = RunArtifact(name="shrink", mesh=small_cavern, config=IntegratorConfig())
    for t, factor in [(0.0, 0.99), (1.5, 0.98), (3.0, 0.97)]:
        artifact.volume_rows.append((t, 0, factor * undeformed.area, factor * undeformed.volume))
    history = volume_history(artifact)
    assert history["t_day"].tolist() == [0.0, 1.5, 3.0]
    np.testing.assert_allclose(history["volume_change_pct"], [0.0, -100.0 / 99.0, -200.0 / 99.0])
    np.testing.assert_allclose(history["volume_change_total_pct"], [-1.0, -2.0, -3.0])
    np.testing.assert_allclose(history["area_change_total_pct"], [-1.0, -2.0, -3.0])


def test_creep_dilatancy_is_the_in_plane_creep_trace():
    eps_cr = np.array([[1e-4, -3e-4, 5e-5, 2e-4], [0.0, 0.0, 1e-3, 0.0]])
    np.testing.assert_allclose(creep_dilatancy(eps_cr), [2e-4, 0.0])


def test_snapshot_dilatancy_and_permeability(short_run):
    state = short_run.final_state
    snapshot = make_snapshot(short_run.mesh, state)
    np.testing.assert_allclose(snapshot.eps_vol, np.abs(state.eps_cr[:, 0] + state.eps_cr[:, 1]))
    # creep is trace-free, so the in-plane trace mirrors the out-of-plane creep strain
    np.testing.assert_allclose(snapshot.eps_vol, np.abs(state.eps_cr[:, 3]), rtol=1e-9)
    np.testing.assert_allclose(snapshot.permeability, 2.13e-8 * snapshot.eps_vol**3)
    assert snapshot.stress.shape == (short_run.mesh.n_elements, 4)


def test_dilatancy_grows_from_zero(short_run):
    first, last = short_run.snapshots[0], short_run.snapshots[-1]
    assert np.all(first.eps_vol == 0.0)
    assert np.all(first.permeability == 0.0)
    assert np.all(last.eps_vol > 0.0)
    # bounded by the elastic strain of a 20 MPa load
    assert np.all(last.eps_vol < 20e6 / 35e9)


def test_probe_csv_layout_and_determinism(short_run, tmp_path):
    path = export_probe_csv(short_run, tmp_path / "a.csv")
    again = export_probe_csv(short_run, tmp_path / "b.csv")
    assert path.read_bytes() == again.read_bytes()
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t_day,probe,u_x,u_y,s_vm,D"
    assert len(lines) == 1 + 3
    frame = pd.read_csv(path)
    assert list(frame.columns) == PROBE_COLUMNS
    assert frame["t_day"].tolist() == [0.0, 1.5, 3.0]


def test_vtk_layout(short_run, tmp_path):
    mesh = short_run.mesh
    path = export_vtk(mesh, short_run.snapshots[-1], tmp_path / "field.vtk")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2:4] == ["ASCII", "DATASET UNSTRUCTURED_GRID"]
    assert f"POINTS {mesh.n_nodes} double" in lines
    assert f"CELLS {mesh.n_elements} {4 * mesh.n_elements}" in lines
    assert f"CELL_TYPES {mesh.n_elements}" in lines
    assert f"CELL_DATA {mesh.n_elements}" in lines
    for name in ("von_mises", "damage", "permeability", "eps_vol"):
        assert f"SCALARS {name} double 1" in lines
    start = lines.index(f"CELL_TYPES {mesh.n_elements}") + 1
    assert set(lines[start : start + mesh.n_elements]) == {"5"}


def test_write_run_outputs(short_run, tmp_path):
    written = write_run(short_run, tmp_path / "run")
    assert {"probes", "volume", "events", "snapshot_0000"} <= set(written)
    for path in written.values():
        assert path.exists()
    assert not any(key.startswith("snapshot") for key in write_run(short_run, tmp_path / "novtk", vtk=False))


def test_subsidence_is_sorted_along_the_top(short_run):
    frame = subsidence(short_run.mesh, short_run.final_state.u)
    assert frame["x"].is_monotonic_increasing
    assert len(frame) == 3
    assert np.all(frame["u_y"] < 0)


def test_midplane_profile_samples_inside_the_mesh(short_run):
    frame = midplane_profile(short_run.mesh, short_run.snapshots[-1], y=0.05, samples=11)
    assert len(frame) > 0
    assert np.all(frame["s_vm"] > 0)
