"""
Geostatic stress, temperature, cavern pressure schedules and equivalent nodal forces.
"""

import logging
import warnings
from typing import Annotated, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import AdmissibilityWarning, AssemblyError, ScheduleError
from .materials import ElementProperties
from .mesh import BoundaryTag, Mesh

logger = logging.getLogger(__name__)

ADMISSIBLE_WINDOW = (0.20, 0.80)

# Salt-top depths offered by the base case
GEOSTATIC_PRESETS = {
    "table": {"depth_to_salt_top": 500.0},
    "figure": {"depth_to_salt_top": 600.0},
}


class GeostaticModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    overburden_density: float = Field(2200.0, gt=0)
    salt_density: float = Field(2200.0, gt=0)
    depth_to_salt_top: float = Field(500.0, ge=0)
    g: float = Field(9.81, gt=0)
    surface_temperature: float = Field(283.15, gt=0)
    temperature_gradient: float = Field(0.0313, ge=0, description="[K/m]")

    @classmethod
    def preset(cls, name: str, **overrides) -> "GeostaticModel":
        if name not in GEOSTATIC_PRESETS:
            raise ValueError(f"unknown geostatic preset {name!r}; choose from {sorted(GEOSTATIC_PRESETS)}")
        return cls(**{**GEOSTATIC_PRESETS[name], **overrides})


class FluidModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    fluid_density: float = Field(8.0, ge=0)


class ConstantSchedule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant"] = "constant"
    fraction: float = 0.2


class CyclicStepSchedule(BaseModel):
    """Step cycle starting on the p_max branch; duty is the share of the period at p_max."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["cyclic"] = "cyclic"
    p_min: float = 0.2
    p_max: float = 0.8
    period_days: float = Field(6.0, gt=0)
    duty: float = Field(0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _ordered(self) -> "CyclicStepSchedule":
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} exceeds p_max {self.p_max}")
        return self


PressureSchedule = Annotated[Union[ConstantSchedule, CyclicStepSchedule], Field(discriminator="kind")]


class LoadOptions(BaseModel):
    """Switches for the external load contributions."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gravity: bool = True
    cavern_pressure: bool = True
    overburden: bool = True
    lateral_confinement: bool = True
    lateral_coefficient: float = Field(1.0, ge=0)
    top_pressure: Optional[float] = Field(None, description="fixed Top pressure [Pa], replaces overburden")
    temperature: Optional[float] = Field(None, gt=0, description="uniform temperature [K]")


def lithostatic_pressure(geostatic: GeostaticModel, depth: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Vertical stress from the overburden and salt above `depth`.

    Args:
        geostatic (GeostaticModel): densities and salt-top depth
        depth (float | np.ndarray): depth below ground [m]

    Returns:
        float | np.ndarray: pressure [Pa]
    """
    depth = np.asarray(depth, dtype=float)
    if np.any(depth < 0):
        raise ValueError("depth must be non-negative")
    top = geostatic.depth_to_salt_top
    p = geostatic.g * (
        geostatic.overburden_density * np.minimum(depth, top)
        + geostatic.salt_density * np.maximum(0.0, depth - top)
    )
    return float(p) if p.ndim == 0 else p


def temperature_at(geostatic: GeostaticModel, depth: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    t = geostatic.surface_temperature + geostatic.temperature_gradient * np.asarray(depth, dtype=float)
    return float(t) if np.ndim(t) == 0 else t


def check_schedule(schedule: Union[ConstantSchedule, CyclicStepSchedule]) -> None:
    """
    Reject fractions outside (0, 1] and warn outside the admissible window.

    Raises:
        ScheduleError: a fraction outside (0, 1]
    """
    if isinstance(schedule, ConstantSchedule):
        fractions = {"fraction": schedule.fraction}
    else:
        fractions = {"p_min": schedule.p_min, "p_max": schedule.p_max}
    low, high = ADMISSIBLE_WINDOW
    for name, value in fractions.items():
        if not 0.0 < value <= 1.0:
            raise ScheduleError(f"{name}={value} is outside (0, 1] of lithostatic pressure")
        if not low <= value <= high:
            message = (
                f"{name}={value} is outside the admissible operating window "
                f"(24%-80% of lithostatic pressure)"
            )
            logger.warning(message)
            warnings.warn(message, AdmissibilityWarning, stacklevel=3)


def pressure_fraction(schedule: Union[ConstantSchedule, CyclicStepSchedule], t: float) -> float:
    if isinstance(schedule, ConstantSchedule):
        return schedule.fraction
    phase = (t % schedule.period_days) / schedule.period_days
    return schedule.p_max if phase < schedule.duty else schedule.p_min


def cavern_pressure(
    schedule: Union[ConstantSchedule, CyclicStepSchedule],
    geostatic: GeostaticModel,
    fluid: FluidModel,
    t: float,
    depth: Union[float, np.ndarray],
    reference_depth: Optional[float] = None,
) -> Union[float, np.ndarray]:
    """
    Gas pressure on the cavern wall.

    The schedule fraction applies to the lithostatic pressure at the reference depth
    (the cavern roof); the gas column adds rho_fluid * g * (depth - reference_depth).

    Args:
        schedule: constant or cyclic step fraction of lithostatic pressure
        geostatic (GeostaticModel): lithostatic model
        fluid (FluidModel): stored gas column density
        t (float): time [day]
        depth (float | np.ndarray): depth of the evaluation point(s) [m]
        reference_depth (float, optional): roof depth [m], defaults to depth

    Returns:
        float | np.ndarray: pressure [Pa]
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    check_schedule(schedule)
    depth = np.asarray(depth, dtype=float)
    reference = depth if reference_depth is None else float(reference_depth)
    p = pressure_fraction(schedule, t) * lithostatic_pressure(geostatic, reference) + (
        fluid.fluid_density * geostatic.g * (depth - reference)
    )
    return float(p) if np.ndim(p) == 0 else p


def boundary_pressure_forces(
    mesh: Mesh,
    tag: BoundaryTag,
    pressure: Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]],
) -> np.ndarray:
    """
    Nodal forces of a normal pressure pushing into the domain on tagged segments.

    Each segment receives p * L along the inward normal, split equally between its
    two nodes.

    Args:
        mesh (Mesh): mesh with oriented boundary segments
        tag (BoundaryTag): segments to load
        pressure: scalar, one value per segment, or a function of segment midpoints (x, y)

    Returns:
        np.ndarray: global force vector (2N) per unit thickness [N/m]
    """
    segments = mesh.segments(tag)
    forces = np.zeros(mesh.n_dofs)
    if len(segments) == 0:
        return forces
    a = mesh.nodes[segments[:, 0]]
    b = mesh.nodes[segments[:, 1]]
    if callable(pressure):
        mid = 0.5 * (a + b)
        p = np.asarray(pressure(mid[:, 0], mid[:, 1]), dtype=float)
    else:
        p = np.asarray(pressure, dtype=float)
        if p.ndim == 0:
            p = np.full(len(segments), float(p))
    if p.shape != (len(segments),):
        raise AssemblyError(f"{len(p)} pressures given for {len(segments)} {tag.value} segments")
    d = b - a
    # the domain lies left of a -> b, so (-dy, dx) points into it with length L
    fx = -0.5 * p * d[:, 1]
    fy = 0.5 * p * d[:, 0]
    for end in (0, 1):
        forces += np.bincount(2 * segments[:, end], weights=fx, minlength=mesh.n_dofs)
        forces += np.bincount(2 * segments[:, end] + 1, weights=fy, minlength=mesh.n_dofs)
    return forces


def traction_nodal_forces(
    mesh: Mesh,
    pressure: Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]],
) -> np.ndarray:
    """
    Equivalent nodal forces of the cavern gas pressure.

    Raises:
        AssemblyError: the mesh has no CavernWall segments or the pressure does not
            cover every wall segment
    """
    if len(mesh.segments(BoundaryTag.CAVERN_WALL)) == 0:
        raise AssemblyError("mesh has no CavernWall segments to load")
    return boundary_pressure_forces(mesh, BoundaryTag.CAVERN_WALL, pressure)


def body_force(mesh: Mesh, density: np.ndarray, g: float = 9.81) -> np.ndarray:
    """Self-weight lumped equally to element corners, pointing in -y."""
    weight = np.asarray(density, dtype=float) * g * mesh.areas / 3.0
    forces = np.zeros(mesh.n_dofs)
    for corner in range(3):
        forces -= np.bincount(2 * mesh.elements[:, corner] + 1, weights=weight, minlength=mesh.n_dofs)
    return forces


class LoadModel:
    """
    External loads of one scene as a function of time.

    Gas pressure is linear in the schedule fraction, so the wall force for a unit
    fraction and the gas-column force are assembled once.
    """

    def __init__(
        self,
        mesh: Mesh,
        props: ElementProperties,
        geostatic: GeostaticModel,
        fluid: FluidModel,
        schedule: Union[ConstantSchedule, CyclicStepSchedule],
        options: Optional[LoadOptions] = None,
    ):
        self.mesh = mesh
        self.geostatic = geostatic
        self.fluid = fluid
        self.schedule = schedule
        self.options = options or LoadOptions()
        self.y_top = mesh.bounds[3]
        check_schedule(schedule)

        static = np.zeros(mesh.n_dofs)
        if self.options.gravity:
            static += body_force(mesh, props.density, geostatic.g)
        if self.options.top_pressure is not None:
            static += boundary_pressure_forces(mesh, BoundaryTag.TOP, self.options.top_pressure)
        elif self.options.overburden:
            top_load = lithostatic_pressure(geostatic, geostatic.depth_to_salt_top)
            static += boundary_pressure_forces(mesh, BoundaryTag.TOP, top_load)
        if self.options.lateral_confinement:
            static += boundary_pressure_forces(
                mesh,
                BoundaryTag.FAR_FIELD,
                lambda x, y: self.options.lateral_coefficient * lithostatic_pressure(geostatic, self.depth(y)),
            )
        self._static = static

        wall = mesh.segments(BoundaryTag.CAVERN_WALL)
        self.roof_depth: Optional[float] = None
        self._unit_wall = np.zeros(mesh.n_dofs)
        self._column = np.zeros(mesh.n_dofs)
        if self.options.cavern_pressure and len(wall):
            self.roof_depth = float(self.depth(mesh.nodes[np.unique(wall), 1].max()))
            litho_roof = lithostatic_pressure(geostatic, self.roof_depth)
            self._unit_wall = boundary_pressure_forces(mesh, BoundaryTag.CAVERN_WALL, litho_roof)
            self._column = boundary_pressure_forces(
                mesh,
                BoundaryTag.CAVERN_WALL,
                lambda x, y: fluid.fluid_density * geostatic.g * (self.depth(y) - self.roof_depth),
            )

        self.element_temperatures = self._temperatures()

    def depth(self, y: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return self.geostatic.depth_to_salt_top + (self.y_top - np.asarray(y, dtype=float))

    def _temperatures(self) -> np.ndarray:
        if self.options.temperature is not None:
            return np.full(self.mesh.n_elements, self.options.temperature)
        return temperature_at(self.geostatic, self.depth(self.mesh.centroids[:, 1]))

    def fraction(self, t: float) -> float:
        return pressure_fraction(self.schedule, t)

    def wall_pressure(self, t: float, y: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        if self.roof_depth is None:
            return np.zeros_like(np.asarray(y, dtype=float))
        return cavern_pressure(
            self.schedule, self.geostatic, self.fluid, t, self.depth(y), reference_depth=self.roof_depth
        )

    def force_vector(self, t: float) -> np.ndarray:
        """Total external force at time t [day]."""
        return self._static + self.fraction(t) * self._unit_wall + self._column
