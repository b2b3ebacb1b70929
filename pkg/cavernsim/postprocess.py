"""
Derived quantities of a run and their export to CSV and legacy VTK.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .constitutive import StrainState, permeability, volumetric_strain
from .errors import TopologyError
from .mesh import BoundaryTag, Mesh, wall_chains

if TYPE_CHECKING:
    from .solver import RunArtifact, SimulationState

logger = logging.getLogger(__name__)

PROBE_COLUMNS = ["t_day", "probe", "u_x", "u_y", "s_vm", "D"]


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Per-element fields (and nodal displacement) at one instant."""

    t: float
    u: np.ndarray
    stress: np.ndarray
    strain: np.ndarray
    von_mises: np.ndarray
    eps_vol: np.ndarray
    permeability: np.ndarray
    D: np.ndarray


def creep_dilatancy(eps_cr: np.ndarray) -> np.ndarray:
    """
    Volumetric creep strain seen by the plane model, |exx_cr + eyy_cr|.

    The full creep strain is trace-free, so its in-plane trace equals -ezz_cr and is
    bounded by the out-of-plane elastic strain.
    """
    eps_cr = np.asarray(eps_cr, dtype=float)
    return np.asarray(volumetric_strain(StrainState(eps_cr[:, 0], eps_cr[:, 1], eps_cr[:, 2])), dtype=float)


def make_snapshot(mesh: Mesh, state: "SimulationState") -> FieldSnapshot:
    """Snapshot of a state; eps_vol and permeability come from the creep dilatancy."""
    fields = state.fields
    strain = np.column_stack([fields.strain.exx, fields.strain.eyy, fields.strain.gxy])
    stress = np.column_stack([np.broadcast_to(c, (mesh.n_elements,)) for c in fields.stress])
    eps_vol = creep_dilatancy(state.eps_cr)
    return FieldSnapshot(
        t=float(state.t),
        u=state.u.copy(),
        stress=stress,
        strain=strain,
        von_mises=np.asarray(fields.von_mises, dtype=float).copy(),
        eps_vol=eps_vol,
        permeability=permeability(eps_vol),
        D=state.D.copy(),
    )


def permeability_field(snapshot: FieldSnapshot) -> np.ndarray:
    return np.atleast_1d(permeability(snapshot.eps_vol))


class CavernVolume(NamedTuple):
    area: float
    volume: Optional[float]


def _shoelace(points: np.ndarray) -> Tuple[float, np.ndarray]:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return 0.5 * float(cross.sum()), cross


def cavern_volume(mesh: Mesh, u: Optional[np.ndarray] = None) -> List[CavernVolume]:
    """
    Area of every cavern cross-section and, for caverns on the symmetry axis, the
    volume of the half-profile revolved about the axis.

    Args:
        mesh (Mesh): mesh with CavernWall segments
        u (np.ndarray, optional): displacement; areas use x + u

    Returns:
        list: one CavernVolume per cavern, first cavern first

    Raises:
        TopologyError: a wall chain is neither a loop nor closed by the symmetry axis
    """
    nodes = mesh.nodes if u is None else mesh.nodes + np.asarray(u).reshape(-1, 2)
    volumes = []
    for chain in wall_chains(mesh):
        if not chain.closed:
            raise TopologyError(
                f"cavern wall from node {chain.nodes[0]} to node {chain.nodes[-1]} is not closed"
            )
        points = nodes[chain.nodes]
        signed, cross = _shoelace(points)
        volume = None
        if chain.on_axis:
            x = points[:, 0]
            centroid_moment = ((x + np.roll(x, -1)) * cross).sum() / 6.0
            volume = float(2.0 * np.pi * abs(centroid_moment))
        volumes.append(CavernVolume(abs(signed), volume))
    return volumes


def volume_change_percent(initial: float, current: float) -> float:
    """(V - V0) / V0 * 100; negative values are a loss."""
    return 100.0 * (current - initial) / initial


def volume_history(artifact: "RunArtifact") -> pd.DataFrame:
    """
    Per-cavern area and volume over time.

    `*_change_pct` is measured from the first recorded state (t = 0, after the
    instantaneous elastic response), so it is the loss accumulated by creep over the
    run. `*_change_total_pct` is measured from the undeformed cavern.
    """
    columns = ["area_change_pct", "volume_change_pct", "area_change_total_pct", "volume_change_total_pct"]
    frame = pd.DataFrame(artifact.volume_rows, columns=["t_day", "cavern", "area", "volume"])
    if frame.empty:
        return frame.assign(**{c: [] for c in columns})
    frame["volume"] = frame["volume"].astype(float)
    undeformed = cavern_volume(artifact.mesh)
    by_cavern = frame.groupby("cavern", sort=False)
    for quantity in ("area", "volume"):
        start = by_cavern[quantity].transform("first").to_numpy(dtype=float)
        reference = [getattr(v, quantity) for v in undeformed]
        base = np.array([np.nan if reference[c] is None else reference[c] for c in frame["cavern"]], dtype=float)
        current = frame[quantity].to_numpy(dtype=float)
        frame[f"{quantity}_change_pct"] = 100.0 * (current - start) / start
        frame[f"{quantity}_change_total_pct"] = 100.0 * (current - base) / base
    return frame[["t_day", "cavern", "area", "volume", *columns]]


def midplane_profile(
    mesh: Mesh,
    snapshot: FieldSnapshot,
    y: float,
    x_range: Optional[Tuple[float, float]] = None,
    samples: int = 200,
) -> pd.DataFrame:
    """
    Von Mises stress sampled along the horizontal line at height y.

    The default x range is the rock pillar between the first two caverns, or the full
    width when there is only one.
    """
    if x_range is None:
        x_range = _pillar(mesh, y)
    xs = np.linspace(x_range[0], x_range[1], samples)
    elements = mesh.trifinder(xs, np.full(samples, y))
    inside = elements >= 0
    frame = pd.DataFrame({"x": xs[inside], "element": elements[inside]})
    frame["s_vm"] = snapshot.von_mises[frame["element"].to_numpy()]
    return frame


def _pillar(mesh: Mesh, y: float) -> Tuple[float, float]:
    xmin, _, xmax, _ = mesh.bounds
    chains = wall_chains(mesh)
    if len(chains) < 2:
        return xmin, xmax
    first = mesh.nodes[chains[0].nodes, 0].max()
    second = mesh.nodes[chains[1].nodes, 0].min()
    return float(first), float(second)


def subsidence(mesh: Mesh, u: np.ndarray) -> pd.DataFrame:
    """Vertical displacement of the Top boundary, sorted by x."""
    top = mesh.nodes_with_tag(BoundaryTag.TOP)
    frame = pd.DataFrame({"x": mesh.nodes[top, 0], "u_y": np.asarray(u)[2 * top + 1]})
    return frame.sort_values("x", kind="stable").reset_index(drop=True)


def export_vtk(mesh: Mesh, snapshot: FieldSnapshot, path: Union[str, Path]) -> Path:
    """
    Write a legacy VTK 3.0 ASCII unstructured grid of triangles.

    Point data holds the displacement vector; cell data holds von Mises stress, damage,
    permeability, volumetric strain and the stress components.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, m = mesh.n_nodes, mesh.n_elements
    cell_fields = {
        "von_mises": snapshot.von_mises,
        "damage": snapshot.D,
        "permeability": snapshot.permeability,
        "eps_vol": snapshot.eps_vol,
        "s_xx": snapshot.stress[:, 0],
        "s_yy": snapshot.stress[:, 1],
        "s_xy": snapshot.stress[:, 2],
        "s_zz": snapshot.stress[:, 3],
    }
    u = snapshot.u.reshape(-1, 2)
    with path.open("w", encoding="utf-8", newline="\n") as file:
        file.write("# vtk DataFile Version 3.0\n")
        file.write(f"cavernsim t={snapshot.t:.17g} day\n")
        file.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        file.write(f"POINTS {n} double\n")
        for x, y in mesh.nodes:
            file.write(f"{x:.17g} {y:.17g} 0\n")
        file.write(f"CELLS {m} {4 * m}\n")
        for a, b, c in mesh.elements:
            file.write(f"3 {a} {b} {c}\n")
        file.write(f"CELL_TYPES {m}\n")
        file.write("5\n" * m)
        file.write(f"POINT_DATA {n}\n")
        file.write("VECTORS displacement double\n")
        for ux, uy in u:
            file.write(f"{ux:.17g} {uy:.17g} 0\n")
        file.write(f"CELL_DATA {m}\n")
        for name, values in cell_fields.items():
            file.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for value in np.broadcast_to(values, (m,)):
                file.write(f"{value:.17g}\n")
    return path


def probe_frame(artifact: "RunArtifact") -> pd.DataFrame:
    return pd.DataFrame([tuple(r) for r in artifact.probe_rows], columns=PROBE_COLUMNS)


def export_probe_csv(artifact: "RunArtifact", path: Union[str, Path]) -> Path:
    """Write `t_day,probe,u_x,u_y,s_vm,D`, one row per (step, probe) in step order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    probe_frame(artifact).to_csv(path, index=False, lineterminator="\n")
    return path


def write_run(artifact: "RunArtifact", out_dir: Union[str, Path], vtk: bool = True) -> Dict[str, Path]:
    """
    Write probe, volume and event files plus one VTK file per snapshot.

    Returns:
        dict: written paths keyed by kind
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"probes": export_probe_csv(artifact, out / "probes.csv")}

    volumes = volume_history(artifact)
    volumes.to_csv(out / "volume.csv", index=False, lineterminator="\n")
    written["volume"] = out / "volume.csv"

    events = pd.DataFrame(artifact.events, columns=None if artifact.events else ["t_day", "level", "event", "message"])
    events.to_json(out / "events.jsonl", orient="records", lines=True)
    written["events"] = out / "events.jsonl"

    if vtk:
        for index, snapshot in enumerate(artifact.snapshots):
            key = f"snapshot_{index:04d}"
            written[key] = export_vtk(artifact.mesh, snapshot, out / f"{key}.vtk")
    logger.info("wrote run name=%s dir=%s files=%d status=%s", artifact.name, out, len(written), artifact.status)
    return written
