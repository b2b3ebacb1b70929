"""
Manufactured-solution convergence study of the elastic solver.

The manufactured field on the square [0, L]^2 is

    u = v = amplitude * sin(pi x / L) * sin(pi y / L)

which vanishes on the boundary. Its body force follows from the plane strain Navier
operator, all boundary dofs are fixed at zero, and the L2 errors of displacement,
strain and stress are measured on a sequence of structured meshes. Least-squares
slopes of log(error) against log(h) give the observed orders.
"""

import logging
import math
from typing import List, Mapping, NamedTuple, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .assembly import assemble_stiffness, recover_fields
from .errors import VerificationGateError
from .materials import Material, builtin_catalog, lame_from
from .meshgen import generate_rectangle
from .mesh import Mesh
from .solver import LinearSolver

logger = logging.getLogger(__name__)


class MMSConfig(BaseModel):
    """Refinement levels (cells per side), square size, field amplitude and the order gate."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    levels: List[int] = Field(default_factory=lambda: [8, 16, 32, 64], min_length=3)
    size: float = Field(1000.0, gt=0, description="square side [m]")
    amplitude: float = Field(0.1, description="[m]")
    min_displacement_order: float = 1.9
    min_stress_order: float = 0.9


class ManufacturedField:
    """Exact displacement, strain and body force of the sine-product field."""

    def __init__(self, size: float, amplitude: float, lam: float, mu: float):
        self.k = math.pi / size
        self.amplitude = amplitude
        self.lam = lam
        self.mu = mu

    def displacement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        u = self.amplitude * np.sin(self.k * x) * np.sin(self.k * y)
        return np.stack([u, u], axis=-1)

    def strain(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(exx, eyy, gxy) with engineering shear."""
        a, k = self.amplitude, self.k
        dx = a * k * np.cos(k * x) * np.sin(k * y)
        dy = a * k * np.sin(k * x) * np.cos(k * y)
        return np.stack([dx, dy, dx + dy], axis=-1)

    def stress(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(sxx, syy, sxy) of the plane strain state."""
        e = self.strain(x, y)
        lam, mu = self.lam, self.mu
        trace = e[..., 0] + e[..., 1]
        return np.stack([lam * trace + 2 * mu * e[..., 0], lam * trace + 2 * mu * e[..., 1], mu * e[..., 2]], axis=-1)

    def body_force(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """f = -div(sigma), identical in both components."""
        a, k, lam, mu = self.amplitude, self.k, self.lam, self.mu
        f = a * k**2 * (
            (lam + 3 * mu) * np.sin(k * x) * np.sin(k * y) - (lam + mu) * np.cos(k * x) * np.cos(k * y)
        )
        return np.stack([f, f], axis=-1)


def _edge_midpoints(mesh: Mesh) -> np.ndarray:
    """(M, 3, 2) midpoints of edges (0-1, 1-2, 2-0)."""
    c = mesh.element_coordinates
    return 0.5 * (c + np.roll(c, -1, axis=1))


def body_force_vector(mesh: Mesh, field: ManufacturedField) -> np.ndarray:
    """
    Consistent nodal loads of the manufactured body force.

    The edge-midpoint rule is exact for quadratics; corner i takes half the force at
    the midpoints of its two edges.
    """
    mid = _edge_midpoints(mesh)
    f = field.body_force(mid[..., 0], mid[..., 1])
    # corner i touches edges i (i -> i+1) and i-1 (i-1 -> i)
    corner = 0.5 * (f + np.roll(f, 1, axis=1)) * (mesh.areas / 3.0)[:, None, None]
    forces = np.zeros(mesh.n_dofs)
    for comp in range(2):
        forces += np.bincount(
            (2 * mesh.elements + comp).ravel(), weights=corner[..., comp].ravel(), minlength=mesh.n_dofs
        )
    return forces


def boundary_dofs(mesh: Mesh) -> np.ndarray:
    nodes = np.unique(mesh.boundary.ravel())
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


class LevelError(NamedTuple):
    cells: int
    h: float
    elements: int
    displacement: float
    strain: float
    stress: float


def solve_level(cells: int, config: MMSConfig, material: Material) -> LevelError:
    mesh = generate_rectangle(config.size, config.size, cells, cells, material=material.id)
    lame = lame_from(material.elastic)
    field = ManufacturedField(config.size, config.amplitude, lame.lam, lame.mu)
    catalog = {material.id: material}

    K = assemble_stiffness(mesh, catalog)
    fixed = boundary_dofs(mesh)
    solver = LinearSolver(K, fixed_dofs=fixed, fixed_values=np.zeros(len(fixed)))
    u = solver.solve(body_force_vector(mesh, field))
    recovered = recover_fields(mesh, u, np.zeros((mesh.n_elements, 4)), catalog)

    mid = _edge_midpoints(mesh)
    weight = (mesh.areas / 3.0)[:, None]
    nodal = u.reshape(-1, 2)[mesh.elements]
    u_mid = 0.5 * (nodal + np.roll(nodal, -1, axis=1))
    du = u_mid - field.displacement(mid[..., 0], mid[..., 1])
    strain_h = np.column_stack(recovered.strain)[:, None, :]
    stress_h = np.column_stack(
        [np.broadcast_to(c, (mesh.n_elements,)) for c in recovered.stress[:3]]
    )[:, None, :]
    de = strain_h - field.strain(mid[..., 0], mid[..., 1])
    ds = stress_h - field.stress(mid[..., 0], mid[..., 1])

    def l2(diff: np.ndarray) -> float:
        return float(np.sqrt(np.sum(weight * np.sum(diff**2, axis=-1))))

    return LevelError(cells, config.size / cells, mesh.n_elements, l2(du), l2(de), l2(ds))


def fitted_order(h: np.ndarray, errors: np.ndarray) -> float:
    """Least-squares slope of log(error) over log(h); inf when every error is zero."""
    errors = np.asarray(errors, dtype=float)
    if np.all(errors == 0):
        return math.inf
    return float(np.polyfit(np.log(h), np.log(errors), 1)[0])


class ConvergenceReport(NamedTuple):
    field: str
    levels: List[LevelError]
    displacement_order: float
    strain_order: float
    stress_order: float
    passed: bool

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.levels, columns=LevelError._fields)
        for column in ("displacement", "strain", "stress"):
            ratio = frame[column].shift(1) / frame[column]
            frame[f"{column}_ratio"] = ratio
        return frame

    def format(self) -> str:
        lines = [
            f"# manufactured field: {self.field}",
            f"{'cells':>6} {'h [m]':>10} {'|e_u|':>12} {'|e_eps|':>12} {'|e_sig|':>12}",
        ]
        for level in self.levels:
            lines.append(
                f"{level.cells:>6d} {level.h:>10.3g} {level.displacement:>12.4e} "
                f"{level.strain:>12.4e} {level.stress:>12.4e}"
            )
        lines.append(
            f"orders: displacement={self.displacement_order:.3f} strain={self.strain_order:.3f} "
            f"stress={self.stress_order:.3f} -> {'PASS' if self.passed else 'FAIL'}"
        )
        return "\n".join(lines)


def run_mms_convergence(
    config: Optional[MMSConfig] = None,
    material: str = "halite",
    catalog: Optional[Mapping[str, Material]] = None,
    gate: bool = True,
) -> ConvergenceReport:
    """
    Convergence study of the manufactured elastic solution.

    Args:
        config (MMSConfig, optional): levels, size, amplitude and order thresholds
        material (str): catalog id whose elastic constants are used
        catalog (Mapping, optional): material catalog, the built-in one by default
        gate (bool): raise when an order falls below its threshold

    Returns:
        ConvergenceReport: per-level L2 errors and fitted orders

    Raises:
        VerificationGateError: gate is set and the displacement order is below
            min_displacement_order or the strain or stress order below min_stress_order
    """
    config = config or MMSConfig()
    catalog = catalog or builtin_catalog()
    levels = [solve_level(cells, config, catalog[material]) for cells in sorted(config.levels)]
    h = np.array([level.h for level in levels])
    orders = {
        name: fitted_order(h, np.array([getattr(level, name) for level in levels]))
        for name in ("displacement", "strain", "stress")
    }
    passed = (
        orders["displacement"] >= config.min_displacement_order
        and orders["strain"] >= config.min_stress_order
        and orders["stress"] >= config.min_stress_order
    )
    report = ConvergenceReport(
        field=f"u = v = {config.amplitude:g} sin(pi x/{config.size:g}) sin(pi y/{config.size:g})",
        levels=levels,
        displacement_order=orders["displacement"],
        strain_order=orders["strain"],
        stress_order=orders["stress"],
        passed=passed,
    )
    logger.info(
        "mms orders displacement=%.3f strain=%.3f stress=%.3f passed=%s",
        report.displacement_order,
        report.strain_order,
        report.stress_order,
        passed,
    )
    if gate and not passed:
        raise VerificationGateError(
            f"observed orders displacement={report.displacement_order:.3f} "
            f"(needs {config.min_displacement_order}), strain={report.strain_order:.3f}, "
            f"stress={report.stress_order:.3f} (need {config.min_stress_order})"
        )
    return report
