"""
Command line entry point.

    cavernsim run <scenario-file|builtin:NAME> [--out DIR] [--scheme S] [--dt DAYS] [--t-end DAYS]
    cavernsim sweep <scenario> --axis PATH=v1,v2,... [--axis ...] [--cartesian] [--damage]
    cavernsim verify mms [--levels 8 16 32 64] [--amplitude M]
    cavernsim mesh gen <spec.yaml|builtin:NAME> --out FILE
    cavernsim mesh check <mesh-file>

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 verification gate failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import yaml
from pydantic import TypeAdapter
from pydantic import ValidationError as PydanticValidationError

from .config import configure_logging, get_settings
from .errors import CavernSimError, DamageSaturatedError, ScenarioError, ValidationError, VerificationGateError
from .mesh import BoundaryTag, dump_mesh, load_mesh, total_area
from .meshgen import GeometrySpec, generate_mesh
from .postprocess import cavern_volume, volume_history
from .scenarios import FileMeshSource, load_scenario, run_scenario, scenario_mesh, with_integrator
from .solver import Scheme
from .sweep import damage_sensitivity, parse_axis, run_sweep
from .verification import MMSConfig, run_mms_convergence

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_ROOT = Path("results")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavernsim", description="Salt cavern creep and damage simulator")
    parser.add_argument("--log-level", default=None, help="overrides CAVERNSIM_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a scenario")
    run.add_argument("scenario", help="YAML file or builtin:NAME")
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument("--scheme", choices=[s.value for s in Scheme], default=None)
    run.add_argument("--dt", type=float, default=None, help="time step [day]")
    run.add_argument("--t-end", type=float, default=None, help="end time [day]")

    sweep = commands.add_parser("sweep", help="parameter sensitivity sweep")
    sweep.add_argument("scenario", help="YAML file or builtin:NAME")
    sweep.add_argument("--axis", action="append", default=[], help="PATH=v1,v2,... (alias or dotted path)")
    sweep.add_argument("--cartesian", action="store_true", help="every combination instead of one at a time")
    sweep.add_argument("--damage", action="store_true", help="constant-stress damage study over B, r, sigma")
    sweep.add_argument("--sigma", type=float, default=30.0, help="base stress of the damage study [MPa]")
    sweep.add_argument("--workers", type=int, default=None)
    sweep.add_argument("--out", type=Path, default=None)

    verify = commands.add_parser("verify", help="verification studies")
    studies = verify.add_subparsers(dest="study", required=True)
    mms = studies.add_parser("mms", help="manufactured-solution convergence gate")
    mms.add_argument("--levels", type=int, nargs="+", default=None)
    mms.add_argument("--amplitude", type=float, default=None)

    mesh = commands.add_parser("mesh", help="generate or check meshes")
    actions = mesh.add_subparsers(dest="action", required=True)
    gen = actions.add_parser("gen", help="generate a mesh file")
    gen.add_argument("spec", help="YAML geometry spec or builtin:NAME")
    gen.add_argument("--out", type=Path, required=True)
    check = actions.add_parser("check", help="validate a mesh file")
    check.add_argument("file", type=Path)
    return parser


def _output_dir(requested: Optional[Path], configured: Optional[str], name: str) -> Path:
    if requested is not None:
        return requested
    if configured is not None:
        return Path(configured)
    return DEFAULT_OUTPUT_ROOT / name


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.mode == "mms":
        return _report_mms(scenario.mms)
    scenario = with_integrator(scenario, scheme=args.scheme, dt=args.dt, t_end=args.t_end)
    out = _output_dir(args.out, scenario.output.dir, scenario.name)
    artifact = run_scenario(scenario, out)
    print(f"{scenario.name}: {artifact.status} at t={artifact.final_state.t:g} day, results in {out}")
    volumes = volume_history(artifact)
    if not volumes.empty:
        last = volumes.groupby("cavern").last()
        for cavern, row in last.iterrows():
            print(
                f"  cavern {cavern}: area change {row['area_change_pct']:+.3f}%, "
                f"volume change {row['volume_change_pct']:+.3f}% "
                f"({row['volume_change_total_pct']:+.3f}% from the undeformed cavern)"
            )
    if artifact.failure is not None:
        elements = artifact.failure.elements
        shown = ", ".join(str(e) for e in elements[:10]) + (" ..." if len(elements) > 10 else "")
        print(f"  critical damage at t={artifact.failure.t_day:g} day in {len(elements)} element(s): {shown}")
        return DamageSaturatedError.exit_code
    return 0


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    axes = [parse_axis(text) for text in args.axis]
    out = _output_dir(args.out, scenario.output.dir, f"{scenario.name}-sweep")
    if args.damage:
        material = scenario.catalog()[scenario.host_material]
        if material.damage is None:
            raise ScenarioError(f"material {material.id!r} has no damage constants", path="host_material")
        histories, summary = damage_sensitivity(material.damage, axes, sigma_mpa=args.sigma)
        out.mkdir(parents=True, exist_ok=True)
        histories.to_csv(out / "damage.csv", index=False, lineterminator="\n")
        summary.to_csv(out / "damage_summary.csv", index=False, lineterminator="\n")
        print(summary.to_string(index=False))
        return 0
    mode = "cartesian" if args.cartesian else "one-at-a-time"
    result = run_sweep(scenario, axes, mode=mode, workers=args.workers, out_dir=out)
    print(f"{len(result.artifacts)} variant(s), merged series in {out / 'sweep.csv'}")
    return 0


def _report_mms(config: MMSConfig) -> int:
    report = run_mms_convergence(config, gate=False)
    print(report.format())
    if not report.passed:
        raise VerificationGateError("manufactured-solution orders below the gate")
    return 0


def _cmd_verify(args) -> int:
    updates = {}
    if args.levels is not None:
        updates["levels"] = args.levels
    if args.amplitude is not None:
        updates["amplitude"] = args.amplitude
    try:
        config = MMSConfig(**updates)
    except PydanticValidationError as exc:
        raise ScenarioError(exc.errors()[0]["msg"], path="mms")
    return _report_mms(config)


def _geometry_from(spec: str):
    if spec.startswith("builtin:"):
        scenario = load_scenario(spec)
        if isinstance(scenario.mesh, FileMeshSource):
            raise ScenarioError("scenario reads its mesh from a file", path="mesh")
        return scenario_mesh(scenario)
    path = Path(spec)
    if not path.is_file():
        raise ScenarioError(f"geometry spec {path} does not exist")
    try:
        geometry = TypeAdapter(GeometrySpec).validate_python(yaml.safe_load(path.read_text(encoding="utf-8")))
    except PydanticValidationError as exc:
        first = exc.errors()[0]
        raise ScenarioError(first["msg"], path=".".join(str(p) for p in first["loc"]))
    return generate_mesh(geometry)


def _cmd_mesh(args) -> int:
    if args.action == "gen":
        mesh = _geometry_from(args.spec)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with args.out.open("w", encoding="utf-8", newline="\n") as stream:
            dump_mesh(mesh, stream)
        print(f"wrote {args.out}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
        return 0

    if not args.file.is_file():
        raise ValidationError(f"mesh file {args.file} does not exist")
    with args.file.open(encoding="utf-8") as stream:
        mesh = load_mesh(stream)
    print(f"{args.file}: {mesh.n_nodes} nodes, {mesh.n_elements} elements, area {total_area(mesh):.6g} m^2")
    for tag in BoundaryTag:
        print(f"  {tag.value}: {len(mesh.segments(tag))} segments")
    for index, cavern in enumerate(cavern_volume(mesh)):
        volume = "n/a" if cavern.volume is None else f"{cavern.volume:.6g} m^3"
        print(f"  cavern {index}: area {cavern.area:.6g} m^2, revolved volume {volume}")
    for label, (x, y) in sorted(mesh.probes.items()):
        print(f"  probe {label}: ({x:g}, {y:g})")
    return 0


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "mesh": _cmd_mesh}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
        configure_logging(args.log_level or settings.log_level)
        return COMMANDS[args.command](args)
    except CavernSimError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # environment settings
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
