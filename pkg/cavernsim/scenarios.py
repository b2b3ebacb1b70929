"""
Scenario configuration: YAML text validated into pydantic models, the built-in test
cases and the assembly of a runnable Scene from a scenario.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Any, Dict, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ScenarioError, ScheduleError
from .loads import ConstantSchedule, FluidModel, GeostaticModel, LoadOptions, PressureSchedule, check_schedule
from .materials import builtin_catalog, with_overrides
from .mesh import Mesh, load_mesh, wall_chains
from .meshgen import CavernDomainSpec, RectangleSpec, generate_mesh
from .postprocess import write_run
from .solver import IntegratorConfig, RunArtifact, Scene, run_simulation
from .verification import MMSConfig

logger = logging.getLogger(__name__)


class FileMeshSource(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["file"] = "file"
    path: str


MeshSource = Annotated[Union[CavernDomainSpec, RectangleSpec, FileMeshSource], Field(discriminator="kind")]


class InterlayerBand(BaseModel):
    """
    Horizontal band of a second material across the whole domain width.

    placement:
        mid: centred on the mid-height of the first cavern
        floor: from the floor apex of the first cavern upwards
        probe: centred on the height of a wall probe
        custom: explicit y_range
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    material: str
    placement: Literal["mid", "floor", "probe", "custom"] = "mid"
    width: float = Field(30.0, gt=0, description="[m]")
    probe: str = "E"
    y_range: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _range_for_custom(self) -> "InterlayerBand":
        if self.placement == "custom":
            if self.y_range is None:
                raise ValueError("custom placement needs y_range")
            if self.y_range[0] >= self.y_range[1]:
                raise ValueError(f"y_range {self.y_range} must be increasing")
        return self


class OutputConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dir: Optional[str] = None
    snapshot_every: Optional[int] = Field(None, ge=1)
    vtk: bool = True


class Scenario(BaseModel):
    """A complete run description; every section has base-case defaults."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "base-case"
    description: str = ""
    mode: Literal["simulate", "mms"] = "simulate"
    mesh: MeshSource = Field(default_factory=CavernDomainSpec)
    host_material: str = "halite"
    materials: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    interlayer: Optional[InterlayerBand] = None
    geostatic: GeostaticModel = Field(default_factory=GeostaticModel)
    fluid: FluidModel = Field(default_factory=FluidModel)
    schedule: PressureSchedule = Field(default_factory=ConstantSchedule)
    loads: LoadOptions = Field(default_factory=LoadOptions)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    probes: Optional[Dict[str, Tuple[float, float]]] = None
    output: OutputConfig = Field(default_factory=OutputConfig)
    mms: MMSConfig = Field(default_factory=MMSConfig)

    @field_validator("materials")
    @classmethod
    def _overrides_valid(cls, value: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
        with_overrides(builtin_catalog(), value)
        return value

    @model_validator(mode="after")
    def _materials_exist(self) -> "Scenario":
        catalog = self.catalog()
        if self.host_material not in catalog:
            raise ValueError(f"host_material: unknown material {self.host_material!r}")
        if self.interlayer is not None and self.interlayer.material not in catalog:
            raise ValueError(f"interlayer.material: unknown material {self.interlayer.material!r}")
        return self

    def catalog(self):
        return with_overrides(builtin_catalog(), self.materials)


def _error_path(error: Dict) -> str:
    return ".".join(str(part) for part in error["loc"])


def parse_scenario(text: str) -> Scenario:
    """
    Parse and validate a YAML scenario.

    Missing sections take their base-case defaults, so empty text is the base case.

    Raises:
        ScenarioError: malformed YAML, unknown key, bad value or a fraction outside
            (0, 1]; the error names the dotted path of the offending key
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"not valid YAML: {exc}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"top level must be a mapping, got {type(data).__name__}")
    return validate_scenario(data)


def validate_scenario(data: Dict[str, Any]) -> Scenario:
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ScenarioError(first["msg"], path=_error_path(first))
    try:
        check_schedule(scenario.schedule)
    except ScheduleError as exc:
        raise ScenarioError(str(exc), path="schedule")
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False)


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Read `builtin:NAME` or a YAML file."""
    source = str(source)
    if source.startswith("builtin:"):
        return builtin_scenario(source.removeprefix("builtin:"))
    path = Path(source)
    if not path.is_file():
        raise ScenarioError(f"scenario file {path} does not exist")
    return parse_scenario(path.read_text(encoding="utf-8"))


_INTERLAYER_RUN = {"t_end": 50.0, "dt": 0.1, "max_newton_iterations": 200}
_MULTI_CAVERN_WIDTH = 700.0


def _interlayer(material: str, placement: str) -> Dict[str, Any]:
    return {
        "description": f"{material} band of 30 m at the cavern {placement}, 50 days",
        "interlayer": {"material": material, "placement": placement, "width": 30.0},
        "integrator": _INTERLAYER_RUN,
    }


def _multi(profile: Dict[str, Any], ctc: float) -> Dict[str, Any]:
    return {
        "description": f"two caverns with {ctc:g} m wall-to-wall distance",
        "mesh": {
            "kind": "cavern",
            "width": _MULTI_CAVERN_WIDTH,
            "profile": profile,
            "second_profile": profile,
            "ctc": ctc,
        },
    }


_IRREGULAR = {"kind": "polyline", "builtin": "irregular"}
_CYLINDER = {"kind": "cylinder"}

BUILTIN_SCENARIOS: Dict[str, Dict[str, Any]] = {
    "uniaxial-benchmark": {
        "description": "salt specimen under a constant 20 MPa top load on a bottom roller",
        "mesh": {"kind": "rectangle", "width": 0.05, "height": 0.1, "nx": 2, "ny": 4},
        "loads": {
            "gravity": False,
            "cavern_pressure": False,
            "overburden": False,
            "lateral_confinement": False,
            "top_pressure": 20e6,
            "temperature": 313.15,
        },
        "probes": {"A": [0.05, 0.1]},
    },
    "monotonic-cylinder": {
        "description": "cylindrical cavern at a constant 20% of lithostatic pressure",
        "schedule": {"kind": "constant", "fraction": 0.2},
    },
    "cyclic-cylinder": {
        "description": "cylindrical cavern cycled between 20% and 80% every 6 days",
        "schedule": {"kind": "cyclic", "p_min": 0.2, "p_max": 0.8, "period_days": 6.0, "duty": 0.5},
    },
    "sensitivity-cylinder": {
        "description": "monotonic cylinder with A 10 m into the wall at mid-height and B in the far field",
        "schedule": {"kind": "constant", "fraction": 0.2},
        "probes": {"A": [35.0, 350.0], "B": [250.0, 350.0]},
    },
    "irregular-homogeneous": {
        "description": "irregular cavern in pure halite",
        "mesh": {"kind": "cavern", "profile": _IRREGULAR},
    },
    "irregular-potash": {
        "description": "irregular cavern with a 30 m potash band at probe E",
        "mesh": {"kind": "cavern", "profile": _IRREGULAR},
        "interlayer": {"material": "potash", "placement": "probe", "probe": "E", "width": 30.0},
    },
    "interlayer-carnallite-mid": _interlayer("carnallite", "mid"),
    "interlayer-carnallite-floor": _interlayer("carnallite", "floor"),
    "interlayer-bischofite-mid": _interlayer("bischofite", "mid"),
    "interlayer-bischofite-floor": _interlayer("bischofite", "floor"),
    "field-profile": {
        "description": "cavern traced from a field sonar profile",
        "mesh": {"kind": "cavern", "profile": {"kind": "polyline", "builtin": "field"}},
        "integrator": {"dt": 0.75},
    },
    "damage-tertiary": {
        "description": "cylindrical cavern with Kachanov damage in halite",
        "integrator": {"damage_enabled": True, "dt": 0.05, "t_end": 20.0},
    },
    "multi-cavern-regular-320": _multi(_CYLINDER, 320.0),
    "multi-cavern-regular-200": _multi(_CYLINDER, 200.0),
    "multi-cavern-irregular-200": _multi(_IRREGULAR, 200.0),
    "multi-cavern-irregular-140": _multi(_IRREGULAR, 140.0),
    "mms-convergence": {
        "description": "manufactured elastic solution on a square, four refinement levels",
        "mode": "mms",
    },
}


def builtin_scenario(name: str) -> Scenario:
    """
    A built-in scenario by name.

    Raises:
        ScenarioError: unknown name
    """
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError(f"unknown builtin scenario {name!r}; choose from {', '.join(BUILTIN_SCENARIOS)}")
    return validate_scenario({"name": name, **BUILTIN_SCENARIOS[name]})


@lru_cache(maxsize=16)
def _generated_mesh(spec_json: str, kind: str) -> Mesh:
    spec_type = CavernDomainSpec if kind == "cavern" else RectangleSpec
    return generate_mesh(spec_type.model_validate_json(spec_json))


def scenario_mesh(scenario: Scenario) -> Mesh:
    """
    The scenario's mesh with host and interlayer materials and probe overrides applied.

    Generated meshes are cached by specification; meshes are immutable so sweep
    variants share them.
    """
    source = scenario.mesh
    if isinstance(source, FileMeshSource):
        path = Path(source.path)
        if not path.is_file():
            raise ScenarioError(f"mesh file {path} does not exist", path="mesh.path")
        with path.open(encoding="utf-8") as stream:
            mesh = load_mesh(stream)
    else:
        spec = source.model_copy(update={"material": scenario.host_material})
        mesh = _generated_mesh(spec.model_dump_json(), spec.kind)
    if scenario.probes is not None:
        mesh = mesh.with_probes({k: tuple(v) for k, v in scenario.probes.items()})
    if scenario.interlayer is not None:
        mesh = apply_interlayer(mesh, scenario.interlayer)
    return mesh


def band_range(mesh: Mesh, band: InterlayerBand) -> Tuple[float, float]:
    """
    Vertical extent of an interlayer band.

    Raises:
        ScenarioError: the placement needs a cavern or probe the mesh lacks, or the
            band leaves the domain
    """
    half = 0.5 * band.width
    if band.placement == "custom":
        low, high = band.y_range
    elif band.placement == "probe":
        if band.probe not in mesh.probes:
            raise ScenarioError(f"mesh has no probe {band.probe!r}", path="interlayer.probe")
        y = mesh.probes[band.probe][1]
        low, high = y - half, y + half
    else:
        chains = wall_chains(mesh)
        if not chains:
            raise ScenarioError(f"{band.placement} placement needs a cavern wall", path="interlayer.placement")
        ys = mesh.nodes[chains[0].nodes, 1]
        if band.placement == "mid":
            mid = 0.5 * (ys.max() + ys.min())
            low, high = mid - half, mid + half
        else:
            low, high = ys.min(), ys.min() + band.width
    _, ymin, _, ymax = mesh.bounds
    if low < ymin or high > ymax:
        raise ScenarioError(
            f"band [{low:g}, {high:g}] leaves the domain [{ymin:g}, {ymax:g}]", path="interlayer"
        )
    return float(low), float(high)


def apply_interlayer(mesh: Mesh, band: InterlayerBand) -> Mesh:
    """Assign the band material to every element whose centroid lies in the band."""
    low, high = band_range(mesh, band)
    y = mesh.centroids[:, 1]
    inside = (y >= low) & (y <= high)
    materials = np.where(inside, band.material, np.asarray(mesh.materials, dtype=object))
    logger.info(
        "interlayer material=%s placement=%s y=[%.1f, %.1f] elements=%d",
        band.material,
        band.placement,
        low,
        high,
        int(inside.sum()),
    )
    return mesh.with_materials([str(m) for m in materials])


def build_scene(scenario: Scenario) -> Scene:
    """
    Mesh, materials and loads of a simulate-mode scenario.

    Raises:
        ScenarioError: mesh or interlayer problems traced to a scenario key
    """
    mesh = scenario_mesh(scenario)
    return Scene.build(
        mesh,
        scenario.catalog(),
        geostatic=scenario.geostatic,
        fluid=scenario.fluid,
        schedule=scenario.schedule,
        options=scenario.loads,
        name=scenario.name,
    )


def run_scenario(scenario: Scenario, out_dir: Optional[Union[str, Path]] = None) -> RunArtifact:
    """
    Build and run a simulate-mode scenario, writing results when an output directory
    is given here or in the scenario.
    """
    if scenario.mode != "simulate":
        raise ScenarioError(f"scenario {scenario.name!r} is a {scenario.mode} study, not a simulation", path="mode")
    artifact = run_simulation(build_scene(scenario), scenario.integrator, scenario.output.snapshot_every)
    target = out_dir or scenario.output.dir
    if target is not None:
        write_run(artifact, target, vtk=scenario.output.vtk)
    return artifact


def with_integrator(scenario: Scenario, **updates) -> Scenario:
    """Copy of the scenario with integrator fields replaced; None values are ignored."""
    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return scenario
    integrator = scenario.integrator.model_dump()
    integrator.update(updates)
    data = scenario.model_dump()
    data["integrator"] = integrator
    return validate_scenario(data)
