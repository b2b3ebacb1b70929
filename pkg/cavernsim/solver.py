"""
Linear solves and time integration of elastic + creep + damage deformation.

Two integrators share one scene:

- explicit: creep strain and damage advance with the stress of the previous step,
  then the displacement is solved once;
- implicit: fixed point iterations with the elastic stiffness as the
  Jacobian until the residual drops below residual_tolerance * |F|. Each iteration
  solves the backward Euler creep increment element by element at its total strain.

Time is in days throughout; creep rates are in 1/s and damage rates in 1/day.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.sparse.linalg import splu

from .assembly import (
    FieldRecovery,
    GlobalSystem,
    apply_constraints,
    assemble_creep_forces,
    assemble_stiffness,
    recover_fields,
)
from .constitutive import (
    StrainState,
    creep_increment_backward_euler,
    creep_rate_arrays,
    damage_rate_arrays,
    elastic_strain_energy,
)
from .errors import DamageSaturatedError, NonConvergenceError, SingularSystemError
from .loads import ConstantSchedule, FluidModel, GeostaticModel, LoadModel, LoadOptions
from .materials import PA_PER_MPA, SECONDS_PER_DAY, ElementProperties, Material, element_properties
from .mesh import Mesh, ProbeLocation, locate_probe
from .postprocess import FieldSnapshot, cavern_volume, make_snapshot

logger = logging.getLogger(__name__)

LINEAR_RESIDUAL_LIMIT = 1e-10
# residual growth over the best iterate that counts as divergence
DIVERGENCE_FACTOR = 1e3


class Scheme(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


class GeometryMode(str, Enum):
    FIXED = "fixed"
    UPDATED = "updated"


class IntegratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scheme: Scheme = Scheme.IMPLICIT
    dt: float = Field(1.5, gt=0, description="[day]")
    t_end: float = Field(275.0, ge=0, description="[day]")
    residual_tolerance: float = Field(1e-6, gt=0, description="relative to |F|")
    max_newton_iterations: int = Field(100, ge=1)
    damage_enabled: bool = False
    geometry: GeometryMode = GeometryMode.FIXED
    stability_ratio: float = Field(0.1, gt=0)


def _factorize(K: sparse.spmatrix):
    """Symmetric-mode LU with diagonal pivots; positive pivots certify K is SPD."""
    try:
        lu = splu(
            sparse.csc_matrix(K),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise SingularSystemError(f"stiffness factorization failed: {exc}")
    pivots = lu.U.diagonal()
    if not np.all(pivots > 0):
        raise SingularSystemError(
            f"stiffness is not positive definite ({int(np.sum(pivots <= 0))} non-positive pivots)"
        )
    return lu


class LinearSolver:
    """
    Constrained stiffness factorized once and reused for every right-hand side.

    Args:
        K (sparse matrix): assembled global stiffness
        mesh (Mesh, optional): roller constraints are taken from its boundary tags
        fixed_dofs, fixed_values: additional prescribed displacements
    """

    def __init__(
        self,
        K: sparse.spmatrix,
        mesh: Optional[Mesh] = None,
        fixed_dofs: Sequence[int] = (),
        fixed_values: Sequence[float] = (),
    ):
        n = K.shape[0]
        system = GlobalSystem(
            sparse.csr_matrix(K),
            np.zeros(n),
            np.asarray(fixed_dofs, dtype=np.int64),
            np.asarray(fixed_values, dtype=float),
        )
        if mesh is not None:
            constrained = apply_constraints(system, mesh)
            free, fixed, values = constrained.free, constrained.fixed, constrained.values
        else:
            order = np.argsort(system.fixed_dofs)
            fixed = system.fixed_dofs[order]
            values = system.fixed_values[order]
            free = np.setdiff1d(np.arange(n), fixed)
        self.n_dofs = n
        self.free = free
        self.fixed = fixed
        self.values = values
        self._K = system.K
        K_free = self._K[free]
        self._K_ff = K_free[:, free]
        self._K_fc = K_free[:, fixed]
        self._lu = _factorize(self._K_ff) if len(free) else None

    @property
    def K(self) -> sparse.csr_matrix:
        return self._K

    def _solve_free(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        x = self._lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0:
            relative = np.linalg.norm(self._K_ff @ x - rhs) / scale
            if relative > LINEAR_RESIDUAL_LIMIT:
                logger.warning("linear solve relative residual=%.3e", relative)
        return x

    def solve(self, F: np.ndarray) -> np.ndarray:
        """Displacement for load F with the prescribed values on fixed dofs."""
        F = np.asarray(F, dtype=float)
        u = np.zeros(self.n_dofs)
        u[self.fixed] = self.values
        u[self.free] = self._solve_free(F[self.free] - self._K_fc @ self.values)
        return u

    def solve_increment(self, R: np.ndarray) -> np.ndarray:
        """Correction for residual R, zero on fixed dofs."""
        du = np.zeros(self.n_dofs)
        du[self.free] = self._solve_free(np.asarray(R, dtype=float)[self.free])
        return du

    def residual(self, u: np.ndarray, F: np.ndarray) -> np.ndarray:
        return np.asarray(F, dtype=float) - self._K @ u


def solve_linear(system: GlobalSystem, mesh: Optional[Mesh] = None) -> np.ndarray:
    """
    Solve K u = F with the system's prescribed dofs (and the mesh rollers if given).

    Raises:
        SingularSystemError: singular or indefinite constrained stiffness
    """
    solver = LinearSolver(system.K, mesh, system.fixed_dofs, system.fixed_values)
    return solver.solve(system.F)


@dataclass
class Scene:
    """Everything a run needs besides the integrator settings."""

    name: str
    mesh: Mesh
    props: ElementProperties
    loads: LoadModel
    probes: Dict[str, ProbeLocation] = field(default_factory=dict)
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def build(
        cls,
        mesh: Mesh,
        catalog: Mapping[str, Material],
        geostatic: Optional[GeostaticModel] = None,
        fluid: Optional[FluidModel] = None,
        schedule=None,
        options: Optional[LoadOptions] = None,
        name: str = "scene",
    ) -> "Scene":
        props = element_properties(mesh, catalog)
        loads = LoadModel(
            mesh,
            props,
            geostatic or GeostaticModel(),
            fluid or FluidModel(),
            schedule or ConstantSchedule(),
            options,
        )
        probes = {label: locate_probe(mesh, x, y) for label, (x, y) in mesh.probes.items()}
        return cls(name=name, mesh=mesh, props=props, loads=loads, probes=probes)

    @property
    def temperatures(self) -> np.ndarray:
        return self.loads.element_temperatures


@dataclass
class SimulationState:
    t: float
    step: int
    u: np.ndarray
    eps_cr: np.ndarray
    D: np.ndarray
    fields: FieldRecovery
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)


class _Stepper:
    """Holds the factorized stiffness between steps."""

    def __init__(self, scene: Scene, config: IntegratorConfig):
        self.scene = scene
        self.config = config
        self._solver: Optional[LinearSolver] = None
        self._geometry_u: Optional[np.ndarray] = None

    def solver(self, u: Optional[np.ndarray] = None) -> LinearSolver:
        updated = self.config.geometry == GeometryMode.UPDATED and u is not None
        if self._solver is None or updated:
            geometry_u = u if updated else None
            K = assemble_stiffness(self.scene.mesh, self.scene.props, geometry_u)
            self._solver = LinearSolver(K, self.scene.mesh, self.scene.fixed_dofs, self.scene.fixed_values)
            self._geometry_u = geometry_u
        return self._solver

    def recover(self, u: np.ndarray, eps_cr: np.ndarray) -> FieldRecovery:
        return recover_fields(self.scene.mesh, u, eps_cr, self.scene.props, self._geometry_u)

    def creep_forces(self, eps_cr: np.ndarray) -> np.ndarray:
        return assemble_creep_forces(self.scene.mesh, eps_cr, self.scene.props, self._geometry_u)

    def creep_increment(self, fields: FieldRecovery, D: np.ndarray, dt: float) -> np.ndarray:
        """(M, 4) creep strain increment over dt days, engineering shear."""
        props = self.scene.props
        rate = creep_rate_arrays(
            fields.stress, props.creep_a, props.creep_n, props.creep_Q, self.scene.temperatures, D
        )
        seconds = dt * SECONDS_PER_DAY
        return np.column_stack([rate.xx, rate.yy, 2.0 * rate.xy, rate.zz]) * seconds

    def creep_increment_implicit(self, trial: FieldRecovery, D: np.ndarray, dt: float) -> np.ndarray:
        """(M, 4) increment rate(sigma_end) * dt at the total strain of `trial`."""
        props = self.scene.props
        step = creep_increment_backward_euler(
            trial.stress,
            props.mu,
            props.creep_a,
            props.creep_n,
            props.creep_Q,
            self.scene.temperatures,
            dt * SECONDS_PER_DAY,
            D,
        )
        return np.column_stack([step.xx, step.yy, 2.0 * step.xy, step.zz])

    def damage_update(self, fields: FieldRecovery, D: np.ndarray, dt: float) -> np.ndarray:
        if not self.config.damage_enabled:
            return D
        props = self.scene.props
        active = props.has_damage
        if not active.any():
            return D
        rate = np.zeros_like(D)
        rate[active] = damage_rate_arrays(
            fields.von_mises[active] / PA_PER_MPA,
            D[active],
            props.damage_B[active],
            props.damage_r[active],
            props.damage_b_inside[active],
        )
        D_new = D + rate * dt
        failed = np.flatnonzero(active & (D_new >= props.damage_D_star))
        if failed.size:
            raise DamageSaturatedError(
                f"{failed.size} element(s) reached critical damage", elements=failed.tolist()
            )
        return D_new


def initial_state(scene: Scene, config: Optional[IntegratorConfig] = None) -> SimulationState:
    """Geostatic elastic solution at t = 0 with no creep strain."""
    stepper = _Stepper(scene, config or IntegratorConfig())
    return _initial_state(stepper)


def _initial_state(stepper: _Stepper) -> SimulationState:
    mesh = stepper.scene.mesh
    eps_cr = np.zeros((mesh.n_elements, 4))
    D = np.zeros(mesh.n_elements)
    u = stepper.solver().solve(stepper.scene.loads.force_vector(0.0))
    return SimulationState(0.0, 0, u, eps_cr, D, stepper.recover(u, eps_cr))


def _stability_ratio(fields: FieldRecovery, eps_cr: np.ndarray, increment: np.ndarray) -> float:
    strain = np.column_stack([fields.strain.exx, fields.strain.eyy, fields.strain.gxy])
    elastic = np.linalg.norm(strain - eps_cr[:, :3], axis=1)
    scale = elastic.max()
    if scale <= 0:
        return 0.0
    return float(np.linalg.norm(increment, axis=1).max() / scale)


def _step_explicit(stepper: _Stepper, state: SimulationState, dt: float) -> SimulationState:
    scene = stepper.scene
    increment = stepper.creep_increment(state.fields, state.D, dt)
    D = stepper.damage_update(state.fields, state.D, dt)
    eps_cr = state.eps_cr + increment
    t = state.t + dt
    solver = stepper.solver(state.u)
    u = solver.solve(scene.loads.force_vector(t) + stepper.creep_forces(eps_cr))
    fields = stepper.recover(u, eps_cr)
    return SimulationState(t, state.step + 1, u, eps_cr, D, fields, iterations=1)


def _step_implicit(stepper: _Stepper, state: SimulationState, dt: float) -> SimulationState:
    scene = stepper.scene
    config = stepper.config
    t = state.t + dt
    solver = stepper.solver(state.u)
    F_ext = scene.loads.force_vector(t)
    scale = np.linalg.norm(F_ext[solver.free]) or 1.0

    u = state.u.copy()
    eps_cr = state.eps_cr
    residuals: List[float] = []
    for iteration in range(1, config.max_newton_iterations + 2):
        R = solver.residual(u, F_ext + stepper.creep_forces(eps_cr))
        norm = float(np.linalg.norm(R[solver.free]))
        residuals.append(norm)
        if not np.isfinite(norm):
            raise NonConvergenceError(state.step + 1, t, residuals, reason="non-finite residual")
        if iteration > 2 and norm > DIVERGENCE_FACTOR * min(residuals[1:-1]):
            raise NonConvergenceError(state.step + 1, t, residuals, reason="residual diverging")
        if iteration > 1 and norm < config.residual_tolerance * scale:
            break
        if iteration > config.max_newton_iterations:
            raise NonConvergenceError(state.step + 1, t, residuals)
        u = u + solver.solve_increment(R)
        # creep of the step is solved element by element at the new total strain
        trial = stepper.recover(u, state.eps_cr)
        eps_cr = state.eps_cr + stepper.creep_increment_implicit(trial, state.D, dt)
    fields = stepper.recover(u, eps_cr)
    D = stepper.damage_update(fields, state.D, dt)
    logger.debug(
        "step=%d t=%.4g iterations=%d residual=%.3e", state.step + 1, t, len(residuals) - 1, residuals[-1]
    )
    return SimulationState(t, state.step + 1, u, eps_cr, D, fields, len(residuals) - 1, residuals)


def step_explicit(state: SimulationState, scene: Scene, config: Optional[IntegratorConfig] = None) -> SimulationState:
    """
    One explicit step: creep and damage advance with the stress at step n, then the
    displacement is re-solved with the updated creep forces.

    Raises:
        DamageSaturatedError: an element reached its critical damage
    """
    config = config or IntegratorConfig(scheme=Scheme.EXPLICIT)
    return _step_explicit(_Stepper(scene, config), state, config.dt)


def step_implicit(state: SimulationState, scene: Scene, config: Optional[IntegratorConfig] = None) -> SimulationState:
    """
    One implicit step with a backward Euler creep update and the elastic stiffness as Jacobian.

    Raises:
        NonConvergenceError: residual still above tolerance after max_newton_iterations,
            non-finite, or grown DIVERGENCE_FACTOR times past the best iterate
        DamageSaturatedError: an element reached its critical damage
    """
    config = config or IntegratorConfig()
    return _step_implicit(_Stepper(scene, config), state, config.dt)


class ProbeRow(NamedTuple):
    t_day: float
    probe: str
    u_x: float
    u_y: float
    s_vm: float
    D: float


class DamageFailure(NamedTuple):
    t_day: float
    elements: List[int]


@dataclass
class RunArtifact:
    """Everything a run produced; written to disk by postprocess.write_run."""

    name: str
    mesh: Mesh
    config: IntegratorConfig
    snapshots: List[FieldSnapshot] = field(default_factory=list)
    probe_rows: List[ProbeRow] = field(default_factory=list)
    volume_rows: List[Tuple[float, int, float, Optional[float]]] = field(default_factory=list)
    events: List[Dict] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    status: str = "completed"
    failure: Optional[DamageFailure] = None
    final_state: Optional[SimulationState] = None

    def event(self, t: float, level: str, kind: str, message: str, **extra) -> None:
        self.events.append({"t_day": t, "level": level, "event": kind, "message": message, **extra})


def probe_rows(scene: Scene, state: SimulationState) -> List[ProbeRow]:
    rows = []
    for label, location in scene.probes.items():
        nodes = scene.mesh.elements[location.element]
        w = location.barycentric
        u_x = float(w @ state.u[2 * nodes])
        u_y = float(w @ state.u[2 * nodes + 1])
        rows.append(
            ProbeRow(
                state.t,
                label,
                u_x,
                u_y,
                float(state.fields.von_mises[location.element]),
                float(state.D[location.element]),
            )
        )
    return rows


def strain_energy(state: SimulationState, scene: Scene) -> float:
    fields = state.fields
    elastic = StrainState(
        fields.strain.exx - state.eps_cr[:, 0],
        fields.strain.eyy - state.eps_cr[:, 1],
        fields.strain.gxy - state.eps_cr[:, 2],
    )
    return float(np.sum(elastic_strain_energy(fields.stress, elastic, fields.elastic_zz, scene.mesh.areas)))


def run_simulation(
    scene: Scene,
    config: IntegratorConfig,
    snapshot_every: Optional[int] = None,
    on_step: Optional[Callable[[SimulationState], None]] = None,
) -> RunArtifact:
    """
    Geostatic elastic solve at t = 0, then time stepping to t_end.

    Args:
        scene (Scene): mesh, materials and loads
        config (IntegratorConfig): scheme, dt, t_end, tolerances
        snapshot_every (int, optional): keep a field snapshot every k steps; the
            initial and final states are always kept
        on_step (callable, optional): called with every committed state

    Returns:
        RunArtifact: snapshots, probe rows per step, cavern volume history, events.
            A damage failure ends the run with status "failed" and records the time
            and elements in `failure`.

    Raises:
        NonConvergenceError: an implicit step did not converge; the run is not retried
            with a smaller step
    """
    artifact = RunArtifact(name=scene.name, mesh=scene.mesh, config=config)
    stepper = _Stepper(scene, config)
    logger.info(
        "run start name=%s scheme=%s dt=%.4g t_end=%.4g elements=%d",
        scene.name,
        config.scheme.value,
        config.dt,
        config.t_end,
        scene.mesh.n_elements,
    )
    state = _initial_state(stepper)
    _record(artifact, scene, state, snapshot=True)

    step = _step_explicit if config.scheme == Scheme.EXPLICIT else _step_implicit
    warned = False
    tol = 1e-9 * max(1.0, config.t_end)
    while state.t < config.t_end - tol:
        dt = min(config.dt, config.t_end - state.t)
        if config.scheme == Scheme.EXPLICIT and not warned:
            ratio = _stability_ratio(state.fields, state.eps_cr, stepper.creep_increment(state.fields, state.D, dt))
            if ratio > config.stability_ratio:
                warned = True
                artifact.event(
                    state.t,
                    "WARNING",
                    "explicit-stability",
                    f"creep increment is {100.0 * ratio:.1f}% of the elastic strain; reduce dt",
                )
        try:
            state = step(stepper, state, dt)
        except DamageSaturatedError as exc:
            artifact.status = "failed"
            artifact.failure = DamageFailure(state.t + dt, exc.elements)
            artifact.event(state.t + dt, "WARNING", "damage-failure", str(exc), elements=exc.elements)
            logger.warning("run %s stopped at t=%.4g day: %s", scene.name, state.t + dt, exc)
            break
        artifact.iterations.append(state.iterations)
        keep = snapshot_every is not None and state.step % snapshot_every == 0
        _record(artifact, scene, state, snapshot=keep)
        if on_step is not None:
            on_step(state)

    if not artifact.snapshots or artifact.snapshots[-1].t != state.t:
        artifact.snapshots.append(make_snapshot(scene.mesh, state))
    artifact.final_state = state
    logger.info(
        "run finish name=%s status=%s t=%.4g steps=%d", scene.name, artifact.status, state.t, state.step
    )
    return artifact


def _record(artifact: RunArtifact, scene: Scene, state: SimulationState, snapshot: bool):
    artifact.probe_rows.extend(probe_rows(scene, state))
    for cavern, (area, volume) in enumerate(cavern_volume(scene.mesh, state.u)):
        artifact.volume_rows.append((state.t, cavern, area, volume))
    if snapshot:
        artifact.snapshots.append(make_snapshot(scene.mesh, state))
