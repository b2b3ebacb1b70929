"""
Pointwise material laws: stress invariants, power-law creep flow, Kachanov damage and
dilatancy permeability.

All functions accept scalars or equally shaped numpy arrays (one entry per element).
Tensor components are ordered (xx, yy, xy, zz); StressState carries tensor shear and
StrainState carries engineering shear gxy = 2 exy.
"""

import math
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import DamageSaturatedError
from .materials import R_GAS, CreepLaw, DamageParams

ArrayLike = Union[float, np.ndarray]

PERMEABILITY_ALPHA = 2.13e-8
PERMEABILITY_BETA = 3.0
DAMAGE_SATURATION_TOL = 1e-9


class StressState(NamedTuple):
    sxx: ArrayLike
    syy: ArrayLike
    sxy: ArrayLike
    szz: ArrayLike = 0.0


class StrainState(NamedTuple):
    exx: ArrayLike
    eyy: ArrayLike
    gxy: ArrayLike


class DamageState(NamedTuple):
    D: ArrayLike = 0.0


class StrainRate(NamedTuple):
    """Creep strain rate tensor [1/s], tensor shear in xy."""

    xx: ArrayLike
    yy: ArrayLike
    xy: ArrayLike
    zz: ArrayLike


def von_mises(stress: StressState) -> ArrayLike:
    sxx, syy, sxy, szz = (np.asarray(c, dtype=float) for c in stress)
    j2_6 = 0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2) + 3.0 * sxy**2
    return np.sqrt(j2_6)


def deviatoric(stress: StressState) -> StressState:
    sxx, syy, sxy, szz = (np.asarray(c, dtype=float) for c in stress)
    mean = (sxx + syy + szz) / 3.0
    return StressState(sxx - mean, syy - mean, sxy, szz - mean)


def arrhenius(Q: ArrayLike, T: ArrayLike) -> ArrayLike:
    """Temperature factor exp(-Q / (R T)) with T in K."""
    return np.exp(-np.asarray(Q, dtype=float) / (R_GAS * np.asarray(T, dtype=float)))


def _check_damage(D: ArrayLike) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    saturated = D >= 1.0 - DAMAGE_SATURATION_TOL
    if np.any(saturated):
        raise DamageSaturatedError(
            "damage reached 1", elements=[int(i) for i in np.flatnonzero(np.atleast_1d(saturated))]
        )
    return D


def creep_rate_arrays(
    stress: StressState,
    a: ArrayLike,
    n: ArrayLike,
    Q: ArrayLike,
    T: ArrayLike,
    D: ArrayLike = 0.0,
) -> StrainRate:
    """Array form of creep_strain_rate with per-element constants."""
    D = _check_damage(D)
    intact = 1.0 - D
    s = deviatoric(stress)
    effective_vm = von_mises(stress) / intact
    n = np.asarray(n, dtype=float)
    factor = 1.5 * np.asarray(a, dtype=float) * arrhenius(Q, T)
    # 0**0 == 1 for n == 1, so a vanishing stress still gives a zero rate through s
    scale = factor * np.power(effective_vm, n - 1.0) / intact
    return StrainRate(scale * s.sxx, scale * s.syy, scale * s.sxy, scale * s.szz)


def creep_strain_rate(
    stress: StressState,
    law: CreepLaw,
    T: ArrayLike,
    damage: DamageState = DamageState(),
) -> StrainRate:
    """
    Norton-Bailey creep flow with an Arrhenius factor and damage-intensified stress.

    rate = 3/2 * a * exp(-Q / R T) * (sigma_vM / (1 - D))^(n - 1) * s / (1 - D)

    Args:
        stress (StressState): stress [Pa]
        law (CreepLaw): a [Pa^-n s^-1], n, Q [J/mol]
        T (float | np.ndarray): temperature [K]
        damage (DamageState): scalar damage, 0 <= D < 1

    Returns:
        StrainRate: trace-free rate tensor [1/s] co-axial with the deviator

    Raises:
        DamageSaturatedError: D within 1e-9 of 1
    """
    return creep_rate_arrays(stress, law.a, law.n, law.Q, T, damage.D)


class StrainIncrement(NamedTuple):
    """Creep strain increment over one step, tensor shear in xy."""

    xx: ArrayLike
    yy: ArrayLike
    xy: ArrayLike
    zz: ArrayLike


RETURN_MAP_TOLERANCE = 1e-12
RETURN_MAP_MAX_ITERATIONS = 60


def creep_increment_backward_euler(
    trial: StressState,
    mu: ArrayLike,
    a: ArrayLike,
    n: ArrayLike,
    Q: ArrayLike,
    T: ArrayLike,
    seconds: float,
    D: ArrayLike = 0.0,
) -> StrainIncrement:
    """
    Creep strain increment rate(sigma_end) * dt at fixed total strain.

    The end-of-step deviator is the trial deviator scaled back along itself, so only
    the von Mises stress q has to be found:

        q + 3 mu a exp(-Q / R T) / (1 - D)^n * dt * q^n = q_trial

    The left side is convex and increasing in q; Newton iterations started above the
    root decrease monotonically onto it.

    Args:
        trial (StressState): stress with the creep strain of the previous step [Pa]
        mu (float | np.ndarray): shear modulus [Pa]
        a, n, Q: creep constants per element
        T (float | np.ndarray): temperature [K]
        seconds (float): step length [s]
        D (float | np.ndarray): damage, held over the step

    Returns:
        StrainIncrement: trace-free increment co-axial with the trial deviator

    Raises:
        DamageSaturatedError: D within 1e-9 of 1
    """
    D = _check_damage(D)
    s = deviatoric(trial)
    n = np.asarray(n, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c = 3.0 * mu * np.asarray(a, dtype=float) * arrhenius(Q, T) * seconds / np.power(1.0 - D, n)
    arrays = np.broadcast_arrays(np.asarray(von_mises(trial), dtype=float), mu, n, c)
    shape = arrays[0].shape
    q_trial, mu, n, c = (np.atleast_1d(v).astype(float) for v in arrays)

    active = (q_trial > 0) & (c > 0)
    q = q_trial.copy()
    if active.any():
        qt, ca, na = q_trial[active], c[active], n[active]
        x = np.minimum(qt, np.power(qt / ca, 1.0 / na))
        for _ in range(RETURN_MAP_MAX_ITERATIONS):
            g = x + ca * np.power(x, na) - qt
            x = x - g / (1.0 + ca * na * np.power(x, na - 1.0))
            if np.all(np.abs(g) <= RETURN_MAP_TOLERANCE * qt):
                break
        q[active] = x

    factor = np.zeros_like(q_trial)
    factor[active] = (1.0 - q[active] / q_trial[active]) / (2.0 * mu[active])
    factor = factor.reshape(shape) if shape else float(factor[0])
    return StrainIncrement(factor * s.sxx, factor * s.syy, factor * s.sxy, factor * s.szz)


def equivalent_rate(rate: StrainRate) -> ArrayLike:
    """sqrt(2/3 rate:rate), equal to a * f(T) * sigma^n for uniaxial stress."""
    xx, yy, xy, zz = (np.asarray(c, dtype=float) for c in rate)
    return np.sqrt(2.0 / 3.0 * (xx**2 + yy**2 + zz**2 + 2.0 * xy**2))


def damage_rate_arrays(
    sigma_mpa: ArrayLike,
    D: ArrayLike,
    B: ArrayLike,
    r: ArrayLike,
    b_inside_exponent: Union[bool, np.ndarray] = False,
) -> np.ndarray:
    D = _check_damage(D)
    sigma = np.asarray(sigma_mpa, dtype=float)
    B = np.asarray(B, dtype=float)
    r = np.asarray(r, dtype=float)
    outside = np.power(sigma, r) / (B * np.power(1.0 - D, r))
    inside = np.power(sigma / (B * (1.0 - D)), r)
    return np.where(b_inside_exponent, inside, outside)


def damage_rate(sigma_vm_mpa: ArrayLike, damage: DamageState, params: DamageParams) -> ArrayLike:
    """
    Kachanov damage growth rate [1/day] for von Mises stress in MPa.

    Raises:
        DamageSaturatedError: D at or above 1
    """
    rate = damage_rate_arrays(sigma_vm_mpa, damage.D, params.B, params.r, params.b_inside_exponent)
    return float(rate) if np.ndim(rate) == 0 else rate


def failure_time_constant_stress(sigma_vm_mpa: float, params: DamageParams) -> float:
    """
    Time [day] for D to go from 0 to 1 at constant stress; math.inf without stress.
    """
    if sigma_vm_mpa <= 0:
        return math.inf
    initial = float(damage_rate_arrays(sigma_vm_mpa, 0.0, params.B, params.r, params.b_inside_exponent))
    return 1.0 / ((params.r + 1.0) * initial)


def time_to_damage(sigma_vm_mpa: float, params: DamageParams, target: float) -> float:
    """Closed-form time [day] to reach damage `target` from an intact state at constant stress."""
    t_f = failure_time_constant_stress(sigma_vm_mpa, params)
    return t_f * (1.0 - (1.0 - target) ** (params.r + 1.0))


class DamageHistory(NamedTuple):
    t: np.ndarray
    D: np.ndarray
    time_to_target: Optional[float]


def integrate_damage(
    sigma_mpa: Union[float, Callable[[float], float]],
    params: DamageParams,
    t_end: float,
    dt: float,
    target: float = 1.0,
) -> DamageHistory:
    """
    Integrate the damage law with classical RK4 from an intact state.

    The last stretch before `target` is closed with the exact local solution of the
    law at the current stress, so D = 1 can be reached without evaluating the
    singular rate.

    Args:
        sigma_mpa (float | callable): von Mises stress [MPa], constant or a function of t [day]
        params (DamageParams): damage constants
        t_end (float): integration horizon [day]
        dt (float): time step [day]
        target (float): damage level whose first crossing time is reported

    Returns:
        DamageHistory: sampled (t, D) and the crossing time, None if not reached by t_end
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    stress = sigma_mpa if callable(sigma_mpa) else (lambda t, s=float(sigma_mpa): s)
    r = params.r
    ceiling = 1.0 - 1e-12

    def rate(t: float, D: float) -> float:
        return float(
            damage_rate_arrays(stress(t), min(D, ceiling), params.B, r, params.b_inside_exponent)
        )

    def remaining(t: float, D: float) -> float:
        k = rate(t, D) * (1.0 - D) ** r
        if k <= 0:
            return math.inf
        return ((1.0 - D) ** (r + 1.0) - (1.0 - target) ** (r + 1.0)) / ((r + 1.0) * k)

    times = [0.0]
    values = [0.0]
    t, D = 0.0, 0.0
    while t < t_end - 1e-12 * max(1.0, t_end):
        left = remaining(t, D)
        if left <= 2.0 * dt and t + left <= t_end:
            times.append(t + left)
            values.append(target)
            return DamageHistory(np.array(times), np.array(values), t + left)
        h = min(dt, t_end - t)
        k1 = rate(t, D)
        k2 = rate(t + 0.5 * h, D + 0.5 * h * k1)
        k3 = rate(t + 0.5 * h, D + 0.5 * h * k2)
        k4 = rate(t + h, D + h * k3)
        D = min(D + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), ceiling)
        t += h
        times.append(t)
        values.append(D)
        if D >= target:
            return DamageHistory(np.array(times), np.array(values), t)
    return DamageHistory(np.array(times), np.array(values), None)


def plane_strain_stress(
    lam: ArrayLike,
    mu: ArrayLike,
    exx: ArrayLike,
    eyy: ArrayLike,
    gxy: ArrayLike,
    ezz: ArrayLike = 0.0,
) -> StressState:
    """Stress from elastic strain under plane strain; ezz is the out-of-plane elastic strain."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    trace = np.asarray(exx) + np.asarray(eyy) + np.asarray(ezz)
    return StressState(
        lam * trace + 2.0 * mu * np.asarray(exx),
        lam * trace + 2.0 * mu * np.asarray(eyy),
        mu * np.asarray(gxy),
        lam * trace + 2.0 * mu * np.asarray(ezz),
    )


def volumetric_strain(strain: StrainState, ezz: ArrayLike = 0.0) -> ArrayLike:
    return np.abs(np.asarray(strain.exx) + np.asarray(strain.eyy) + np.asarray(ezz))


def permeability(eps_vol: ArrayLike) -> ArrayLike:
    """Dilatancy permeability k = 2.13e-8 * eps_vol^3 [m^2]."""
    eps = np.asarray(eps_vol, dtype=float)
    if np.any(eps < 0):
        raise ValueError("volumetric strain must be non-negative")
    k = PERMEABILITY_ALPHA * eps**PERMEABILITY_BETA
    return float(k) if k.ndim == 0 else k


def elastic_strain_energy(
    stress: StressState,
    elastic: StrainState,
    ezz: ArrayLike = 0.0,
    area: ArrayLike = 1.0,
) -> ArrayLike:
    """Stored energy 1/2 sigma:eps_el per unit thickness [J/m]."""
    density = 0.5 * (
        np.asarray(stress.sxx) * np.asarray(elastic.exx)
        + np.asarray(stress.syy) * np.asarray(elastic.eyy)
        + np.asarray(stress.sxy) * np.asarray(elastic.gxy)
        + np.asarray(stress.szz) * np.asarray(ezz)
    )
    return density * np.asarray(area)
