"""
Parameter sweeps over scenarios.

Variants run concurrently in worker threads, at most CAVERNSIM_THREADS at a time;
every variant owns its own scene and state, and only the immutable mesh is shared.
"""

import itertools
import logging
import math
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import anyio
import numpy as np
import pandas as pd
import yaml

from .config import get_settings
from .constitutive import failure_time_constant_stress, integrate_damage
from .errors import ScenarioError, SolverError
from .materials import DamageParams
from .postprocess import PROBE_COLUMNS, probe_frame
from .scenarios import Scenario, build_scene, validate_scenario
from .solver import RunArtifact, run_simulation

logger = logging.getLogger(__name__)

AXIS_ALIASES = {
    "a": "materials.{host}.creep.a",
    "n": "materials.{host}.creep.n",
    "Q": "materials.{host}.creep.Q",
    "E": "materials.{host}.elastic.E",
    "T": "loads.temperature",
    "depth": "geostatic.depth_to_salt_top",
    "B": "materials.{host}.damage.B",
    "r": "materials.{host}.damage.r",
}

# Axes of the zero-dimensional damage study
DAMAGE_AXES = ("B", "r", "sigma")
DAMAGE_BASE_STRESS = 30.0

SweepMode = Literal["one-at-a-time", "cartesian"]


class SweepAxis(NamedTuple):
    label: str
    values: Tuple[Any, ...]


class Variant(NamedTuple):
    name: str
    axis: str
    value: Any
    settings: Dict[str, Any]
    scenario: Optional[Scenario]


class SweepResult(NamedTuple):
    frame: pd.DataFrame
    artifacts: Dict[str, Optional[RunArtifact]]


def _parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return yaml.safe_load(text)


def parse_axis(text: str) -> SweepAxis:
    """
    Parse `PATH=v1,v2,...`.

    Raises:
        ScenarioError: missing '=' or no values
    """
    label, sep, values = text.partition("=")
    label = label.strip()
    items = [v for v in values.split(",") if v.strip()]
    if not sep or not label or not items:
        raise ScenarioError(f"axis {text!r} must look like PATH=v1,v2,...", path=label)
    return SweepAxis(label, tuple(_parse_value(v) for v in items))


def axis_path(label: str, scenario: Scenario) -> str:
    """Dotted scenario path of an axis label; aliases expand against the host material."""
    template = AXIS_ALIASES.get(label, label)
    return template.format(host=scenario.host_material)


def _set_path(data: Dict[str, Any], path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for i, key in enumerate(keys[:-1]):
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        if not isinstance(child, dict):
            raise ScenarioError(f"invalid axis path: {'.'.join(keys[: i + 1])} is not a section", path=path)
        node = child
    node[keys[-1]] = value


def with_settings(scenario: Scenario, settings: Dict[str, Any], name: str) -> Scenario:
    """
    Copy of the scenario with dotted-path settings applied and revalidated.

    Raises:
        ScenarioError: a path that does not name a scenario key or a value it rejects
    """
    data = scenario.model_dump(mode="json")
    for label, value in settings.items():
        _set_path(data, axis_path(label, scenario), value)
    data["name"] = name
    return validate_scenario(data)


def _variant_name(settings: Dict[str, Any]) -> str:
    parts = []
    for label, value in settings.items():
        parts.append(f"{label}={value:g}" if isinstance(value, float) else f"{label}={value}")
    return ",".join(parts)


def variants(base: Scenario, axes: Sequence[SweepAxis], mode: SweepMode = "one-at-a-time") -> List[Variant]:
    """
    Scenarios of a sweep.

    One-at-a-time varies each axis alone around the base; cartesian takes every
    combination. Without axes the sweep is the base run alone.
    """
    if not axes:
        return [Variant("base", "", None, {}, base)]
    if mode == "cartesian":
        labels = [a.label for a in axes]
        points = [(dict(zip(labels, values)), "*", None) for values in itertools.product(*(a.values for a in axes))]
    elif mode == "one-at-a-time":
        points = [({axis.label: value}, axis.label, value) for axis in axes for value in axis.values]
    else:
        raise ScenarioError(f"unknown sweep mode {mode!r}", path="mode")
    out = []
    for settings, axis, value in points:
        name = _variant_name(settings)
        scenario = with_settings(base, settings, f"{base.name}[{name}]")
        out.append(Variant(name, axis, value, settings, scenario))
    return out


def _run_variant(variant: Variant) -> Optional[RunArtifact]:
    try:
        return run_simulation(build_scene(variant.scenario), variant.scenario.integrator)
    except SolverError as exc:
        logger.warning("variant %s failed: %s", variant.name, exc)
        return None


async def arun_sweep(
    base: Scenario,
    axes: Sequence[SweepAxis],
    mode: SweepMode = "one-at-a-time",
    workers: Optional[int] = None,
) -> SweepResult:
    """
    Run every variant of a sweep concurrently.

    Args:
        base (Scenario): simulate-mode scenario the axes modify
        axes (list): SweepAxis per swept path or alias
        mode (str): "one-at-a-time" (default) or "cartesian"
        workers (int, optional): concurrent variants, default CAVERNSIM_THREADS

    Returns:
        SweepResult: merged probe series (variant, axis, value, status, one param_<axis>
            column per axis, probe columns) and the artifact per variant (None if it raised)
    """
    runs = variants(base, axes, mode)
    limiter = anyio.CapacityLimiter(workers or get_settings().threads)
    artifacts: Dict[str, Optional[RunArtifact]] = {}

    async def run_one(variant: Variant):
        artifacts[variant.name] = await anyio.to_thread.run_sync(_run_variant, variant, limiter=limiter)

    logger.info("sweep start base=%s variants=%d mode=%s", base.name, len(runs), mode)
    async with anyio.create_task_group() as tg:
        for variant in runs:
            tg.start_soon(run_one, variant)

    labels = [a.label for a in axes]
    frames = []
    for variant in runs:
        artifact = artifacts[variant.name]
        frame = probe_frame(artifact) if artifact is not None else pd.DataFrame(columns=PROBE_COLUMNS)
        frame.insert(0, "status", "error" if artifact is None else artifact.status)
        for position, label in enumerate(labels):
            frame.insert(position, f"param_{label}", variant.settings.get(label, np.nan))
        frame.insert(0, "value", variant.value)
        frame.insert(0, "axis", variant.axis)
        frame.insert(0, "variant", variant.name)
        frames.append(frame)
    merged = pd.concat(frames, ignore_index=True)
    logger.info("sweep finish base=%s rows=%d", base.name, len(merged))
    return SweepResult(merged, artifacts)


def run_sweep(
    base: Scenario,
    axes: Sequence[SweepAxis],
    mode: SweepMode = "one-at-a-time",
    workers: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> SweepResult:
    """Blocking wrapper of arun_sweep that also writes sweep.csv when out_dir is given."""
    if base.mode != "simulate":
        raise ScenarioError(f"scenario {base.name!r} is not a simulation", path="mode")
    result = anyio.run(partial(arun_sweep, base, axes, mode, workers))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.frame.to_csv(out / "sweep.csv", index=False, lineterminator="\n")
    return result


def final_probe_values(frame: pd.DataFrame, probe: str = "A", column: str = "u_x") -> pd.Series:
    """
    Last recorded value of one probe column per variant, in sweep order.

    The default reads the horizontal wall displacement at probe A, which the
    sensitivity-cylinder scenario places 10 m into the wall at mid-height. The default
    cavern probe A is the roof apex on the symmetry axis, where u_x is zero.
    """
    rows = frame[frame["probe"] == probe]
    return rows.groupby("variant", sort=False)[column].last()


def damage_sensitivity(
    params: DamageParams,
    axes: Sequence[SweepAxis],
    sigma_mpa: float = DAMAGE_BASE_STRESS,
    target: float = 0.5,
    t_end: Optional[float] = None,
    steps: int = 1000,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Damage growth at constant stress for one-at-a-time changes of B, r and stress.

    Args:
        params (DamageParams): base damage constants
        axes (list): SweepAxis over "B", "r" or "sigma"
        sigma_mpa (float): base von Mises stress [MPa]
        target (float): damage level whose crossing time is summarized
        t_end (float, optional): horizon [day], default twice the longest failure time
        steps (int): RK4 steps over the horizon

    Returns:
        tuple: the (variant, axis, value, t_day, D) histories and a summary with
            time_to_target and failure_time per variant
    """
    unknown = [a.label for a in axes if a.label not in DAMAGE_AXES]
    if unknown:
        allowed = ", ".join(DAMAGE_AXES)
        raise ScenarioError(f"damage sweeps vary {allowed}, not {', '.join(unknown)}", path=unknown[0])
    cases = [("base", "", None, params, sigma_mpa)]
    for axis in axes:
        for value in axis.values:
            value = float(value)
            if axis.label == "sigma":
                cases.append((f"sigma={value:g}", "sigma", value, params, value))
            else:
                varied = params.model_copy(update={axis.label: value})
                cases.append((f"{axis.label}={value:g}", axis.label, value, varied, sigma_mpa))

    failure = {name: failure_time_constant_stress(s, p) for name, _, _, p, s in cases}
    if t_end is None:
        finite = [t for t in failure.values() if math.isfinite(t)]
        t_end = 2.0 * max(finite) if finite else 1.0

    histories = []
    summary = []
    for name, axis, value, p, s in cases:
        dt = t_end / steps
        history = integrate_damage(s, p, t_end, dt)
        crossing = integrate_damage(s, p, t_end, dt, target=target).time_to_target
        histories.append(
            pd.DataFrame({"variant": name, "axis": axis, "value": value, "t_day": history.t, "D": history.D})
        )
        summary.append(
            {
                "variant": name,
                "axis": axis,
                "value": value,
                "time_to_target": np.nan if crossing is None else crossing,
                "failure_time": failure[name],
            }
        )
    return pd.concat(histories, ignore_index=True), pd.DataFrame(summary)
