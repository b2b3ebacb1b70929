"""
Geometry specifications and triangulation of salt cavern domains.

Cavern domains are meshed with a force-based point smoother on top of scipy's Delaunay
triangulation. Boundary points (outer rectangle, cavern walls) are sampled first and
kept fixed; interior points relax towards a target size that grades from
element_size / refinement at the cavern wall to element_size in the far field.
"""

import logging
from importlib import resources
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from matplotlib.path import Path as PolygonPath
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial import Delaunay, cKDTree

from .errors import GeometryError
from .mesh import BoundaryTag, Mesh, build_mesh, default_probes

logger = logging.getLogger(__name__)

BUILTIN_PROFILES = {
    "irregular": "irregular_profile.txt",
    "field": "field_profile.txt",
}

_FORCE_SCALE = 1.2
_STEP = 0.2
_RECOVERY_ROUNDS = 10


class CylinderProfile(BaseModel):
    """Cylinder with hemispherical caps; height is the straight section."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["cylinder"] = "cylinder"
    radius: float = Field(25.0, gt=0)
    height: float = Field(250.0, gt=0)

    def half_profile(self, spacing: float) -> np.ndarray:
        r, h = self.radius, self.height
        n_arc = max(3, int(np.ceil(0.5 * np.pi * r / spacing)))
        n_straight = max(1, int(np.ceil(h / spacing)))
        roof = np.linspace(0.5 * np.pi, 0.0, n_arc + 1)
        floor = np.linspace(0.0, -0.5 * np.pi, n_arc + 1)
        roof_pts = np.column_stack([r * np.cos(roof), -r + r * np.sin(roof)])
        side = np.column_stack(
            [np.full(n_straight - 1, r), -r - h * np.arange(1, n_straight) / n_straight]
        )
        floor_pts = np.column_stack([r * np.cos(floor), -r - h + r * np.sin(floor)])
        points = np.vstack([roof_pts, side, floor_pts])
        points[0, 0] = points[-1, 0] = 0.0
        return points

    def volume(self) -> float:
        """Exact revolved volume in m^3."""
        return float(np.pi * self.radius**2 * self.height + 4.0 / 3.0 * np.pi * self.radius**3)


class PolylineProfile(BaseModel):
    """Half-profile polyline from roof apex to floor apex, x measured from the axis."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["polyline"] = "polyline"
    builtin: Optional[Literal["irregular", "field"]] = None
    path: Optional[str] = None
    points: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "PolylineProfile":
        given = sum(v is not None for v in (self.builtin, self.path, self.points))
        if given != 1:
            raise ValueError("give exactly one of 'builtin', 'path' or 'points'")
        return self

    def raw_points(self) -> np.ndarray:
        if self.points is not None:
            return np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.builtin is not None:
            return load_builtin_profile(self.builtin)
        return load_profile(self.path)

    def half_profile(self, spacing: float) -> np.ndarray:
        return _densify(normalize_profile(self.raw_points()), spacing)


Profile = Annotated[Union[CylinderProfile, PolylineProfile], Field(discriminator="kind")]


class CavernDomainSpec(BaseModel):
    """
    Rectangular salt block with one cavern on the symmetry axis and an optional
    second cavern at a given cavern-to-cavern wall distance.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["cavern"] = "cavern"
    width: float = Field(500.0, gt=0)
    roof_thickness: float = Field(200.0, gt=0)
    floor_thickness: float = Field(200.0, gt=0)
    profile: Profile = Field(default_factory=CylinderProfile)
    ctc: Optional[float] = None
    second_profile: Optional[Profile] = None
    element_size: float = Field(23.0, gt=0)
    refinement: float = Field(4.0, ge=1)
    grading: float = Field(0.3, gt=0)
    smoothing_iterations: int = Field(40, ge=0)
    seed: int = 0
    material: str = "halite"


class RectangleSpec(BaseModel):
    """Structured rectangle, two triangles per cell."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["rectangle"] = "rectangle"
    width: float = Field(1.0, gt=0)
    height: float = Field(1.0, gt=0)
    nx: int = Field(2, ge=1)
    ny: int = Field(2, ge=1)
    left: BoundaryTag = BoundaryTag.SYMMETRY_AXIS
    right: BoundaryTag = BoundaryTag.FAR_FIELD
    top: BoundaryTag = BoundaryTag.TOP
    bottom: BoundaryTag = BoundaryTag.BOTTOM
    material: str = "halite"


GeometrySpec = Annotated[Union[CavernDomainSpec, RectangleSpec], Field(discriminator="kind")]


def load_profile(path: Union[str, Path]) -> np.ndarray:
    """
    Read an `x y` polyline file.

    Args:
        path (str | Path): text file, one point per line, '#' starts a comment

    Returns:
        np.ndarray: (K, 2) points
    """
    path = Path(path)
    if not path.exists():
        raise GeometryError(f"profile file not found: {path}")
    with path.open(encoding="utf-8") as stream:
        return _read_points(stream, str(path))


def load_builtin_profile(name: str) -> np.ndarray:
    if name not in BUILTIN_PROFILES:
        raise GeometryError(f"unknown builtin profile {name!r}")
    resource = resources.files("cavernsim.data").joinpath(BUILTIN_PROFILES[name])
    with resource.open("r", encoding="utf-8") as stream:
        return _read_points(stream, name)


def _read_points(stream, source: str) -> np.ndarray:
    try:
        points = np.loadtxt(stream, comments="#", ndmin=2)
    except ValueError as exc:
        raise GeometryError(f"{source}: {exc}")
    if points.shape[1] != 2:
        raise GeometryError(f"{source}: expected two columns, got {points.shape[1]}")
    return points


def normalize_profile(points: np.ndarray) -> np.ndarray:
    """Validate a half-profile and shift it so the first point sits at (0, 0)."""
    points = np.asarray(points, dtype=float)
    if len(points) < 3:
        raise GeometryError("a cavern profile needs at least three points")
    if not np.all(np.isfinite(points)):
        raise GeometryError("profile coordinates must be finite")
    scale = np.ptp(points, axis=0).max()
    if abs(points[0, 0]) > 1e-9 * scale or abs(points[-1, 0]) > 1e-9 * scale:
        raise GeometryError("profile must start and end on the symmetry axis (x = 0)")
    if np.any(points[1:-1, 0] <= 0):
        raise GeometryError("interior profile points must have x > 0")
    points = points - np.array([0.0, points[0, 1]])
    points[0, 0] = points[-1, 0] = 0.0
    if points[-1, 1] >= 0:
        raise GeometryError("profile must run downwards from the roof apex to the floor apex")
    return points


def _densify(points: np.ndarray, spacing: float) -> np.ndarray:
    pieces = []
    for p, q in zip(points[:-1], points[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(q - p) / spacing)))
        s = np.arange(n)[:, None] / n
        pieces.append(p + s * (q - p))
    pieces.append(points[-1:])
    return np.vstack(pieces)


def _mirror_loop(half: np.ndarray, centre: float) -> np.ndarray:
    """Closed loop of a full cavern built from its half-profile."""
    right = np.column_stack([centre + half[:, 0], half[:, 1]])
    left = np.column_stack([centre - half[1:-1, 0], half[1:-1, 1]])[::-1]
    return np.vstack([right, left])


def _signed_distance(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Distance to a closed polygon, negative inside."""
    a = polygon
    ab = np.roll(polygon, -1, axis=0) - a
    length2 = np.maximum((ab**2).sum(axis=1), 1e-300)
    distance = np.empty(len(points))
    for start in range(0, len(points), 2048):
        p = points[start : start + 2048]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip((ap * ab[None]).sum(axis=2) / length2[None], 0.0, 1.0)
        gap = ap - t[..., None] * ab[None]
        distance[start : start + 2048] = np.sqrt((gap**2).sum(axis=2)).min(axis=1)
    inside = PolygonPath(polygon).contains_points(points)
    return np.where(inside, -distance, distance)


class _Loop:
    """Boundary loop of fixed points with one tag per segment i -> i+1."""

    def __init__(self, points: np.ndarray, tags: Sequence[BoundaryTag]):
        self.points = np.asarray(points, dtype=float)
        self.tags = list(tags)

    def split(self, segment: int) -> np.ndarray:
        p = self.points[segment]
        q = self.points[(segment + 1) % len(self.points)]
        midpoint = 0.5 * (p + q)
        self.points = np.insert(self.points, segment + 1, midpoint, axis=0)
        self.tags.insert(segment + 1, self.tags[segment])
        return midpoint


class _Domain:
    def __init__(self, spec: CavernDomainSpec):
        self.spec = spec
        self.h_far = spec.element_size
        self.h_wall = spec.element_size / spec.refinement

        half = spec.profile.half_profile(self.h_wall)
        top_y = half[:, 1].max()
        bottom_y = half[:, 1].min()
        self.width = spec.width
        self.height = spec.roof_thickness + (top_y - bottom_y) + spec.floor_thickness
        shift = self.height - spec.roof_thickness - top_y
        wall = half + np.array([0.0, shift])

        w_max = float(half[:, 0].max())
        if w_max >= self.width - self.h_far:
            raise GeometryError(
                f"cavern half-width {w_max:.1f} m does not fit in a {self.width:.1f} m wide domain"
            )

        self.walls = [wall]
        self.holes: List[np.ndarray] = []
        if spec.ctc is not None:
            half2 = (spec.second_profile or spec.profile).half_profile(self.h_wall)
            w2 = float(half2[:, 0].max())
            if spec.ctc < w_max + w2:
                raise GeometryError(
                    f"cavern-to-cavern distance {spec.ctc:g} m is below the sum of the cavern radii "
                    f"({w_max:.1f} + {w2:.1f} m)"
                )
            centre = w_max + spec.ctc + w2
            if centre + w2 >= self.width - self.h_far:
                raise GeometryError(
                    f"second cavern (outer wall at x={centre + w2:.1f} m) does not fit in a "
                    f"{self.width:.1f} m wide domain"
                )
            shift2 = self.height - spec.roof_thickness - half2[:, 1].max()
            hole = _mirror_loop(half2 + np.array([0.0, shift2]), centre)
            if hole[:, 1].min() <= self.h_far:
                raise GeometryError("second cavern reaches the bottom of the domain")
            self.holes.append(hole)
            self.walls.append(np.vstack([hole, hole[:1]]))

        wall_points = np.vstack([_densify(w, 0.25 * self.h_wall) for w in self.walls])
        self._wall_tree = cKDTree(wall_points)

        outer = self._outer_loop(wall)
        self.loops = [outer] + [_Loop(h, [BoundaryTag.CAVERN_WALL] * len(h)) for h in self.holes]

    def size(self, points: np.ndarray) -> np.ndarray:
        distance, _ = self._wall_tree.query(points)
        return np.minimum(self.h_far, self.h_wall + self.spec.grading * distance)

    def _sample_line(self, p, q) -> np.ndarray:
        """Points from p (inclusive) to q (exclusive) at the local target size."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        s = np.linspace(0.0, 1.0, 401)
        pts = p + s[:, None] * (q - p)
        density = np.linalg.norm(q - p) / self.size(pts)
        cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(s))])
        n = max(1, int(round(cumulative[-1])))
        levels = np.interp(np.arange(n) / n * cumulative[-1], cumulative, s)
        return p + levels[:, None] * (q - p)

    def _outer_loop(self, wall: np.ndarray) -> _Loop:
        W, H = self.width, self.height
        pieces = [
            (self._sample_line((0.0, 0.0), (W, 0.0)), BoundaryTag.BOTTOM),
            (self._sample_line((W, 0.0), (W, H)), BoundaryTag.FAR_FIELD),
            (self._sample_line((W, H), (0.0, H)), BoundaryTag.TOP),
            (self._sample_line((0.0, H), wall[0]), BoundaryTag.SYMMETRY_AXIS),
            (wall[:-1], BoundaryTag.CAVERN_WALL),
            (self._sample_line(wall[-1], (0.0, 0.0)), BoundaryTag.SYMMETRY_AXIS),
        ]
        points = np.vstack([p for p, _ in pieces])
        tags = [tag for p, tag in pieces for _ in range(len(p))]
        return _Loop(points, tags)

    def distance(self, points: np.ndarray) -> np.ndarray:
        d = _signed_distance(points, self.loops[0].points)
        for hole in self.holes:
            d = np.maximum(d, -_signed_distance(points, hole))
        return d

    def fixed_points(self) -> np.ndarray:
        return np.vstack([loop.points for loop in self.loops])

    def initial_points(self, rng: np.random.Generator) -> np.ndarray:
        dy = self.h_wall * np.sqrt(3.0) / 2.0
        ys = np.arange(dy, self.height, dy)
        rows = []
        for i, y in enumerate(ys):
            xs = np.arange(self.h_wall, self.width, self.h_wall) + (0.5 * self.h_wall if i % 2 else 0.0)
            rows.append(np.column_stack([xs, np.full(len(xs), y)]))
        points = np.vstack(rows)
        points = points[self.distance(points) < -0.5 * self.size(points)]
        keep = rng.random(len(points)) < (self.h_wall / self.size(points)) ** 2
        return points[keep]


def _edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(edges, axis=1), axis=0)


def _smooth(domain: _Domain, fixed: np.ndarray, interior: np.ndarray, iterations: int) -> np.ndarray:
    n_fixed = len(fixed)
    p = np.vstack([fixed, interior])
    geps = 1e-6 * domain.h_far
    for _ in range(iterations):
        if len(p) == n_fixed:
            break
        triangles = Delaunay(p).simplices
        centroids = p[triangles].mean(axis=1)
        triangles = triangles[domain.distance(centroids) < -geps]
        bars = _edges(triangles)
        vectors = p[bars[:, 1]] - p[bars[:, 0]]
        lengths = np.linalg.norm(vectors, axis=1)
        target = domain.size(0.5 * (p[bars[:, 0]] + p[bars[:, 1]]))
        target = target * _FORCE_SCALE * np.sqrt((lengths**2).sum() / (target**2).sum())
        push = np.maximum(target - lengths, 0.0)
        forces = (push / lengths)[:, None] * vectors
        total = np.zeros_like(p)
        np.add.at(total, bars[:, 0], -forces)
        np.add.at(total, bars[:, 1], forces)
        moved = p[n_fixed:] + _STEP * total[n_fixed:]
        inside = domain.distance(moved) < -0.5 * domain.size(moved)
        p[n_fixed:][inside] = moved[inside]
    return p[n_fixed:]


def generate_cavern_domain(spec: CavernDomainSpec) -> Mesh:
    """
    Triangulate a salt block around one or two caverns.

    Args:
        spec (CavernDomainSpec): domain, cavern profile and mesh size controls

    Returns:
        Mesh: CavernWall, Bottom, SymmetryAxis, Top and FarField tagged mesh with
            default probes on the first cavern wall

    Raises:
        GeometryError: the caverns do not fit in the domain, CTC is below the sum of the
            cavern radii, or the wall could not be recovered in the triangulation
    """
    domain = _Domain(spec)
    rng = np.random.default_rng(spec.seed)
    interior = domain.initial_points(rng)
    interior = _smooth(domain, domain.fixed_points(), interior, spec.smoothing_iterations)

    for _ in range(_RECOVERY_ROUNDS):
        fixed = domain.fixed_points()
        points = np.vstack([fixed, interior])
        triangles = Delaunay(points).simplices
        coords = points[triangles]
        area = 0.5 * np.abs(
            (coords[:, 1, 0] - coords[:, 0, 0]) * (coords[:, 2, 1] - coords[:, 0, 1])
            - (coords[:, 2, 0] - coords[:, 0, 0]) * (coords[:, 1, 1] - coords[:, 0, 1])
        )
        inside = domain.distance(coords.mean(axis=1)) < -1e-6 * domain.h_far
        triangles = triangles[inside & (area > 1e-8 * domain.h_wall**2)]
        present = {tuple(e) for e in _edges(triangles)}

        missing = []
        offset = 0
        for loop in domain.loops:
            n = len(loop.points)
            for s in range(n):
                a, b = offset + s, offset + (s + 1) % n
                if (min(a, b), max(a, b)) not in present:
                    missing.append((loop, s))
            offset += n
        if not missing:
            break
        logger.debug("recovering %d boundary segments", len(missing))
        # split from the back so segment indices of earlier entries stay valid
        for loop, s in sorted(missing, key=lambda item: -item[1]):
            p = loop.points[s]
            q = loop.points[(s + 1) % len(loop.points)]
            midpoint = loop.split(s)
            radius = 0.25 * np.linalg.norm(q - p)
            if len(interior):
                interior = interior[np.linalg.norm(interior - midpoint, axis=1) > radius]
    else:
        raise GeometryError(
            f"could not recover {len(missing)} boundary segments after {_RECOVERY_ROUNDS} rounds"
        )

    boundary = []
    tags = []
    offset = 0
    for loop in domain.loops:
        n = len(loop.points)
        boundary.extend((offset + s, offset + (s + 1) % n) for s in range(n))
        tags.extend(loop.tags)
        offset += n

    used, triangles = np.unique(triangles, return_inverse=True)
    triangles = triangles.reshape(-1, 3)
    remap = np.full(len(points), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    boundary = remap[np.asarray(boundary)]
    if (boundary < 0).any():
        raise GeometryError("boundary point dropped from the triangulation")

    mesh = build_mesh(points[used], triangles, [spec.material] * len(triangles), boundary, tags)
    mesh = mesh.with_probes(default_probes(mesh))
    logger.info(
        "cavern mesh nodes=%d elements=%d h_wall=%.3g h_far=%.3g",
        mesh.n_nodes,
        mesh.n_elements,
        domain.h_wall,
        domain.h_far,
    )
    return mesh


def generate_rectangle(
    width: float,
    height: float,
    nx: int,
    ny: int,
    left: BoundaryTag = BoundaryTag.SYMMETRY_AXIS,
    right: BoundaryTag = BoundaryTag.FAR_FIELD,
    top: BoundaryTag = BoundaryTag.TOP,
    bottom: BoundaryTag = BoundaryTag.BOTTOM,
    material: str = "halite",
) -> Mesh:
    """Structured rectangle [0, width] x [0, height] with two triangles per cell."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def n(i, j):
        return j * (nx + 1) + i

    elements = []
    for j in range(ny):
        for i in range(nx):
            elements.append((n(i, j), n(i + 1, j), n(i + 1, j + 1)))
            elements.append((n(i, j), n(i + 1, j + 1), n(i, j + 1)))

    boundary = []
    tags = []
    for i in range(nx):
        boundary.append((n(i, 0), n(i + 1, 0)))
        tags.append(bottom)
        boundary.append((n(i + 1, ny), n(i, ny)))
        tags.append(top)
    for j in range(ny):
        boundary.append((n(nx, j), n(nx, j + 1)))
        tags.append(right)
        boundary.append((n(0, j + 1), n(0, j)))
        tags.append(left)

    return build_mesh(nodes, elements, [material] * len(elements), boundary, tags)


def generate_mesh(spec: Union[CavernDomainSpec, RectangleSpec]) -> Mesh:
    if isinstance(spec, RectangleSpec):
        return generate_rectangle(
            spec.width,
            spec.height,
            spec.nx,
            spec.ny,
            left=spec.left,
            right=spec.right,
            top=spec.top,
            bottom=spec.bottom,
            material=spec.material,
        )
    return generate_cavern_domain(spec)


def revolved_profile_volume(points: np.ndarray) -> float:
    """Volume swept by a half-profile (closed along the axis) revolved about x = 0."""
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return float(2.0 * np.pi * abs(((x + xn) * cross).sum() / 6.0))
