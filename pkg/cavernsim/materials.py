"""
Material catalog: elastic, creep and damage parameters per rock type.
"""

import logging
from types import MappingProxyType
from typing import Dict, Mapping, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import MaterialError
from .mesh import Mesh

logger = logging.getLogger(__name__)

R_GAS = 8.314
SECONDS_PER_DAY = 86400.0
PA_PER_MPA = 1e6

# Interlayer creep constants are published with stress in MPa and rates per day. Each
# carries a calibration factor so that, at 20 MPa, carnallite creeps about 17 times and
# bischofite about 200 times faster than halite at cavern temperature.
CARNALLITE_CALIBRATION = 1e4
BISCHOFITE_CALIBRATION = 10.0

# Raw published constants, keyed by catalog id
BUILTIN_MATERIALS = {
    "halite": {
        "name": "Rock salt",
        "density": 2200.0,
        "elastic": {"E": 35e9, "nu": 0.25},
        "creep": {"a": 8.10e-27, "n": 3.5, "Q": 51600.0},
        "damage": {"B": 4e4, "r": 2.5, "D_star": 0.95, "l": 2.5, "b": 7e-22},
    },
    "potash": {
        "name": "Potash",
        "density": 2200.0,
        "elastic": {"E": 2.5e9, "nu": 0.35},
        "creep": {"a": 8.10e-27, "n": 3.5, "Q": 51600.0},
    },
    "carnallite": {
        "name": "Carnallite",
        "density": 2200.0,
        "elastic": {"E": 17e9, "nu": 0.33},
        "creep_mpa_day": {"a": 2.6804e-14, "n": 5.0},
        "calibration": CARNALLITE_CALIBRATION,
    },
    "bischofite": {
        "name": "Bischofite",
        "density": 2200.0,
        "elastic": {"E": 18e9, "nu": 0.36},
        "creep_mpa_day": {"a": 1.1e-9, "n": 4.6},
        "calibration": BISCHOFITE_CALIBRATION,
    },
}


class ElasticParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    E: float = Field(gt=0, description="Young's modulus [Pa]")
    nu: float = Field(ge=0, lt=0.5, description="Poisson ratio [-]")


class LameParams(NamedTuple):
    lam: float
    mu: float


class CreepLaw(BaseModel):
    """Norton-Bailey power law, rate = a * exp(-Q / R T) * sigma_vM^n with sigma in Pa, rate in 1/s."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float = Field(ge=0, description="creep constant [Pa^-n s^-1]")
    n: float = Field(ge=1, description="stress exponent [-]")
    Q: float = Field(0.0, ge=0, description="activation energy [J/mol]")

    @classmethod
    def from_mpa_per_day(cls, a: float, n: float, scale: float = 1.0, Q: float = 0.0) -> "CreepLaw":
        """
        Convert a law published as rate [1/day] = a * sigma[MPa]^n to SI.

        Args:
            a (float): constant in MPa^-n day^-1
            n (float): stress exponent
            scale (float): extra multiplier applied to a
            Q (float): activation energy [J/mol]

        Returns:
            CreepLaw: law with a in Pa^-n s^-1
        """
        return cls(a=a * scale / SECONDS_PER_DAY / PA_PER_MPA**n, n=n, Q=Q)


class DamageParams(BaseModel):
    """
    Kachanov damage constants, stress in MPa and time in days.

    The rate is sigma^r / (B (1 - D)^r). With b_inside_exponent the constant is read
    as (sigma / (B (1 - D)))^r instead. l and b are carried for reference only.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    B: float = Field(gt=0)
    r: float = Field(gt=0)
    D_star: float = Field(0.95, gt=0, le=1)
    l: Optional[float] = None
    b: Optional[float] = None
    b_inside_exponent: bool = False


class Material(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    name: str = ""
    density: float = Field(gt=0, description="[kg/m^3]")
    elastic: ElasticParams
    creep: Optional[CreepLaw] = None
    damage: Optional[DamageParams] = None

    @model_validator(mode="after")
    def _damage_needs_creep(self) -> "Material":
        if self.damage is not None and self.creep is None:
            raise ValueError("damage parameters require a creep law")
        return self


def lame_from(elastic: ElasticParams) -> LameParams:
    """
    Lame constants of an isotropic solid.

    Raises:
        MaterialError: nu at or above the incompressible limit 0.5
    """
    E, nu = elastic.E, elastic.nu
    if nu >= 0.5:
        raise MaterialError(f"Poisson ratio {nu} reaches the incompressible limit 0.5")
    if E <= 0:
        raise MaterialError(f"Young's modulus must be positive, got {E}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return LameParams(lam, mu)


def elastic_from(lame: LameParams) -> ElasticParams:
    lam, mu = lame
    if mu <= 0 or lam + 2.0 * mu <= 0:
        raise MaterialError(f"invalid Lame constants lambda={lam}, mu={mu}")
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return ElasticParams(E=E, nu=nu)


def stiffness_C(lame: LameParams) -> np.ndarray:
    """Plane-strain elasticity matrix acting on (exx, eyy, gxy)."""
    lam, mu = lame
    if mu <= 0 or lam + 2.0 * mu <= 0:
        raise MaterialError(f"invalid Lame constants lambda={lam}, mu={mu}")
    return np.array(
        [
            [lam + 2.0 * mu, lam, 0.0],
            [lam, lam + 2.0 * mu, 0.0],
            [0.0, 0.0, mu],
        ]
    )


def _material_from_entry(key: str, entry: Dict, calibrated: bool = True) -> Material:
    creep = None
    if "creep" in entry:
        creep = CreepLaw(**entry["creep"])
    elif "creep_mpa_day" in entry:
        scale = entry.get("calibration", 1.0) if calibrated else 1.0
        creep = CreepLaw.from_mpa_per_day(scale=scale, **entry["creep_mpa_day"])
    damage = DamageParams(**entry["damage"]) if "damage" in entry else None
    return Material(
        id=key,
        name=entry["name"],
        density=entry["density"],
        elastic=ElasticParams(**entry["elastic"]),
        creep=creep,
        damage=damage,
    )


def builtin_catalog() -> Mapping[str, Material]:
    """
    Built-in rock types.

    Returns:
        Mapping: read-only map with halite, potash, carnallite, bischofite (interlayer
            constants with their calibration factor) and carnallite_raw, bischofite_raw
            holding the published constants
    """
    catalog = {}
    for key, entry in BUILTIN_MATERIALS.items():
        catalog[key] = _material_from_entry(key, entry)
        if "creep_mpa_day" in entry:
            raw = _material_from_entry(f"{key}_raw", entry, calibrated=False)
            catalog[raw.id] = raw.model_copy(update={"name": f"{entry['name']} (published)"})
    return MappingProxyType(catalog)


class ElementProperties(NamedTuple):
    """Per-element material arrays resolved once per scene."""

    lam: np.ndarray
    mu: np.ndarray
    density: np.ndarray
    C: np.ndarray
    creep_a: np.ndarray
    creep_n: np.ndarray
    creep_Q: np.ndarray
    damage_B: np.ndarray
    damage_r: np.ndarray
    damage_D_star: np.ndarray
    damage_b_inside: np.ndarray
    has_damage: np.ndarray


def element_properties(mesh: Mesh, catalog: Mapping[str, Material]) -> ElementProperties:
    """
    Resolve every element's material into flat arrays.

    Raises:
        MaterialError: an element references a material id absent from the catalog
    """
    ids = sorted(set(mesh.materials))
    unknown = [m for m in ids if m not in catalog]
    if unknown:
        raise MaterialError(f"unknown material id(s): {', '.join(unknown)}")
    index = {m: i for i, m in enumerate(ids)}
    which = np.array([index[m] for m in mesh.materials], dtype=np.int64)

    def per_material(getter, default=0.0):
        values = []
        for m in ids:
            value = getter(catalog[m])
            values.append(default if value is None else value)
        return np.array(values, dtype=float)[which]

    lame = {m: lame_from(catalog[m].elastic) for m in ids}
    lam = np.array([lame[m].lam for m in ids])[which]
    mu = np.array([lame[m].mu for m in ids])[which]
    C_by_material = np.stack([stiffness_C(lame[m]) for m in ids])

    return ElementProperties(
        lam=lam,
        mu=mu,
        density=per_material(lambda m: m.density),
        C=C_by_material[which],
        creep_a=per_material(lambda m: m.creep.a if m.creep else None),
        creep_n=per_material(lambda m: m.creep.n if m.creep else None, 1.0),
        creep_Q=per_material(lambda m: m.creep.Q if m.creep else None),
        damage_B=per_material(lambda m: m.damage.B if m.damage else None, np.inf),
        damage_r=per_material(lambda m: m.damage.r if m.damage else None, 1.0),
        damage_D_star=per_material(lambda m: m.damage.D_star if m.damage else None, 1.0),
        damage_b_inside=per_material(lambda m: m.damage.b_inside_exponent if m.damage else None).astype(bool),
        has_damage=per_material(lambda m: 1.0 if m.damage else None).astype(bool),
    )


def with_overrides(catalog: Mapping[str, Material], overrides: Mapping[str, Dict]) -> Mapping[str, Material]:
    """
    Catalog with materials replaced or added from plain dictionaries.

    Overrides of existing ids are merged field by field into the built-in entry.
    """
    merged = dict(catalog)
    for key, values in overrides.items():
        base = merged[key].model_dump() if key in merged else {"id": key}
        base = _deep_merge(base, dict(values))
        base["id"] = key
        try:
            merged[key] = Material.model_validate(base)
        except ValueError as exc:
            raise MaterialError(f"material {key!r}: {exc}")
    return MappingProxyType(merged)


def _deep_merge(base: Dict, update: Dict) -> Dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out
