"""
Finite element simulation of creep, damage and dilatancy around salt storage caverns.
"""

from .mesh import (
    BoundaryTag,
    Mesh,
    build_mesh,
    load_mesh,
    dump_mesh,
    locate_probe,
    element_geometry,
    default_probes,
)

from .meshgen import CavernDomainSpec, RectangleSpec, generate_mesh, generate_rectangle, load_profile

from .materials import (
    Material,
    ElasticParams,
    CreepLaw,
    DamageParams,
    builtin_catalog,
    lame_from,
    with_overrides,
)

from .constitutive import (
    StressState,
    DamageState,
    creep_strain_rate,
    damage_rate,
    failure_time_constant_stress,
    integrate_damage,
    permeability,
)

from .loads import (
    GeostaticModel,
    FluidModel,
    ConstantSchedule,
    CyclicStepSchedule,
    LoadOptions,
    lithostatic_pressure,
    cavern_pressure,
    traction_nodal_forces,
)

from .assembly import assemble_stiffness, assemble_creep_forces, apply_constraints, recover_fields

from .solver import (
    IntegratorConfig,
    Scene,
    RunArtifact,
    solve_linear,
    step_explicit,
    step_implicit,
    run_simulation,
)

from .postprocess import cavern_volume, export_vtk, export_probe_csv, midplane_profile, write_run

from .scenarios import Scenario, parse_scenario, serialize_scenario, builtin_scenario, build_scene, run_scenario

from .sweep import run_sweep, damage_sensitivity

from .verification import run_mms_convergence

__all__ = [
    "BoundaryTag",
    "Mesh",
    "build_mesh",
    "load_mesh",
    "dump_mesh",
    "locate_probe",
    "element_geometry",
    "default_probes",
    "CavernDomainSpec",
    "RectangleSpec",
    "generate_mesh",
    "generate_rectangle",
    "load_profile",
    "Material",
    "ElasticParams",
    "CreepLaw",
    "DamageParams",
    "builtin_catalog",
    "lame_from",
    "with_overrides",
    "StressState",
    "DamageState",
    "creep_strain_rate",
    "damage_rate",
    "failure_time_constant_stress",
    "integrate_damage",
    "permeability",
    "GeostaticModel",
    "FluidModel",
    "ConstantSchedule",
    "CyclicStepSchedule",
    "LoadOptions",
    "lithostatic_pressure",
    "cavern_pressure",
    "traction_nodal_forces",
    "assemble_stiffness",
    "assemble_creep_forces",
    "apply_constraints",
    "recover_fields",
    "IntegratorConfig",
    "Scene",
    "RunArtifact",
    "solve_linear",
    "step_explicit",
    "step_implicit",
    "run_simulation",
    "cavern_volume",
    "export_vtk",
    "export_probe_csv",
    "midplane_profile",
    "write_run",
    "Scenario",
    "parse_scenario",
    "serialize_scenario",
    "builtin_scenario",
    "build_scene",
    "run_scenario",
    "run_sweep",
    "damage_sensitivity",
    "run_mms_convergence",
]
