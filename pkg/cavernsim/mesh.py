"""
2D unstructured constant-strain-triangle meshes with tagged boundaries and probe points.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, TextIO, Tuple

import numpy as np
from matplotlib.tri import Triangulation
from scipy.spatial import cKDTree

from .errors import DegenerateElementError, MeshParseError, ProbeNotFoundError, TopologyError

logger = logging.getLogger(__name__)

PROBE_LABELS = ("A", "B", "C", "D", "E", "F", "G")
MIN_ELEMENT_AREA = 1e-12
DUPLICATE_NODE_DISTANCE = 1e-9
PROBE_TOLERANCE = 1e-9


class BoundaryTag(str, Enum):
    CAVERN_WALL = "CavernWall"
    BOTTOM = "Bottom"
    SYMMETRY_AXIS = "SymmetryAxis"
    TOP = "Top"
    FAR_FIELD = "FarField"


class Node(NamedTuple):
    id: int
    x: float
    y: float


class Element(NamedTuple):
    node_ids: Tuple[int, int, int]
    material_id: str


class BoundarySegment(NamedTuple):
    nodes: Tuple[int, int]
    tag: BoundaryTag


class ElementGeometry(NamedTuple):
    area: float
    B: np.ndarray


class ProbeLocation(NamedTuple):
    element: int
    barycentric: np.ndarray


class WallChain(NamedTuple):
    """Ordered cavern wall nodes; open chains are closed along the symmetry axis."""

    nodes: np.ndarray
    closed: bool
    on_axis: bool = False


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Immutable triangle mesh.

    Elements are stored counter-clockwise; boundary segments are oriented so that the
    domain lies to their left, which makes (dy, -dx) the outward normal.
    """

    nodes: np.ndarray
    elements: np.ndarray
    materials: Tuple[str, ...]
    boundary: np.ndarray
    tags: Tuple[BoundaryTag, ...]
    probes: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    def node(self, node_id: int) -> Node:
        x, y = self.nodes[node_id]
        return Node(node_id, float(x), float(y))

    def element(self, element_id: int) -> Element:
        n1, n2, n3 = (int(n) for n in self.elements[element_id])
        return Element((n1, n2, n3), self.materials[element_id])

    def segments_list(self) -> List[BoundarySegment]:
        return [
            BoundarySegment((int(a), int(b)), tag)
            for (a, b), tag in zip(self.boundary, self.tags)
        ]

    def segments(self, tag: BoundaryTag) -> np.ndarray:
        mask = np.array([t == tag for t in self.tags], dtype=bool)
        return self.boundary[mask] if len(mask) else np.zeros((0, 2), dtype=np.int64)

    def nodes_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.unique(self.segments(tag).ravel())

    @cached_property
    def element_coordinates(self) -> np.ndarray:
        """(M, 3, 2) corner coordinates."""
        return self.nodes[self.elements]

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.element_coordinates)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.element_coordinates.mean(axis=1)

    @cached_property
    def dofs(self) -> np.ndarray:
        """(M, 6) global degrees of freedom ordered (u1, v1, u2, v2, u3, v3)."""
        dofs = np.empty((self.n_elements, 6), dtype=np.int64)
        dofs[:, 0::2] = 2 * self.elements
        dofs[:, 1::2] = 2 * self.elements + 1
        return dofs

    @cached_property
    def bounds(self) -> Tuple[float, float, float, float]:
        xmin, ymin = self.nodes.min(axis=0)
        xmax, ymax = self.nodes.max(axis=0)
        return float(xmin), float(ymin), float(xmax), float(ymax)

    @cached_property
    def element_diameters(self) -> np.ndarray:
        c = self.element_coordinates
        edges = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    @cached_property
    def trifinder(self):
        triangulation = Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.elements)
        return triangulation.get_trifinder()

    def with_materials(self, materials: Sequence[str]) -> "Mesh":
        if len(materials) != self.n_elements:
            raise TopologyError("material list length does not match element count")
        return replace(self, materials=tuple(str(m) for m in materials))

    def with_probes(self, probes: Dict[str, Tuple[float, float]]) -> "Mesh":
        return replace(self, probes={k: (float(x), float(y)) for k, (x, y) in probes.items()})


def signed_areas(coords: np.ndarray) -> np.ndarray:
    """Signed triangle areas for (M, 3, 2) corner coordinates."""
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])


def cst_gradients(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Areas and strain-displacement operators of constant-strain triangles.

    Args:
        coords (np.ndarray): (M, 3, 2) counter-clockwise corner coordinates

    Returns:
        tuple: areas (M,) and B (M, 3, 6) mapping (u1, v1, u2, v2, u3, v3) to
            (exx, eyy, gxy) with engineering shear
    """
    areas = signed_areas(coords)
    bad = np.flatnonzero(np.abs(areas) < MIN_ELEMENT_AREA)
    if bad.size:
        raise DegenerateElementError(int(bad[0]), float(areas[bad[0]]))

    x = coords[:, :, 0]
    y = coords[:, :, 1]
    # b_i = y_j - y_k, c_i = x_k - x_j for cyclic (i, j, k)
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    scale = 1.0 / (2.0 * areas)[:, None]
    b = b * scale
    c = c * scale

    B = np.zeros((len(coords), 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    return areas, B


def element_geometry(mesh: Mesh, element_id: int) -> ElementGeometry:
    """
    Area and gradient operator of one element.

    Args:
        mesh (Mesh): the mesh
        element_id (int): element index

    Returns:
        ElementGeometry: area in m^2 and the 3x6 B matrix
    """
    areas, B = cst_gradients(mesh.element_coordinates[element_id : element_id + 1])
    return ElementGeometry(float(areas[0]), B[0])


def locate_probe(mesh: Mesh, x: float, y: float) -> ProbeLocation:
    """
    Find the element containing a point and its barycentric coordinates.

    Raises:
        ProbeNotFoundError: the point lies outside the mesh
    """
    element = int(mesh.trifinder(np.array([x]), np.array([y]))[0])
    if element >= 0:
        bary = _barycentric(mesh, element, x, y)
    else:
        # points on the outer boundary can miss the trapezoid map; try the elements
        # around the nearest node
        nearest = int(np.argmin(np.linalg.norm(mesh.nodes - (x, y), axis=1)))
        candidates = np.flatnonzero((mesh.elements == nearest).any(axis=1))
        weights = [_barycentric(mesh, int(e), x, y) for e in candidates]
        best = int(np.argmax([w.min() for w in weights]))
        if weights[best].min() < -PROBE_TOLERANCE:
            raise ProbeNotFoundError(x, y)
        element, bary = int(candidates[best]), weights[best]
    bary = np.clip(bary, 0.0, 1.0)
    return ProbeLocation(element, bary / bary.sum())


def _barycentric(mesh: Mesh, element: int, x: float, y: float) -> np.ndarray:
    (x1, y1), (x2, y2), (x3, y3) = mesh.element_coordinates[element]
    T = np.array([[x1 - x3, x2 - x3], [y1 - y3, y2 - y3]])
    l12 = np.linalg.solve(T, np.array([x - x3, y - y3]))
    return np.array([l12[0], l12[1], 1.0 - l12[0] - l12[1]])


def build_mesh(
    nodes: np.ndarray,
    elements: np.ndarray,
    materials: Sequence[str],
    boundary: np.ndarray,
    tags: Sequence[BoundaryTag],
    probes: Optional[Dict[str, Tuple[float, float]]] = None,
) -> Mesh:
    """
    Validate raw arrays and return an immutable Mesh.

    Element orientation is normalized to counter-clockwise and boundary segments are
    re-oriented so that the domain lies to their left.

    Raises:
        TopologyError: out-of-range references, duplicate nodes, degenerate elements,
            untagged or doubly tagged boundary edges, non-boundary tagged segments
    """
    nodes = np.array(nodes, dtype=float).reshape(-1, 2)
    elements = np.array(elements, dtype=np.int64).reshape(-1, 3)
    boundary = np.array(boundary, dtype=np.int64).reshape(-1, 2)
    tags = tuple(BoundaryTag(t) for t in tags)
    n = len(nodes)

    if not np.all(np.isfinite(nodes)):
        raise TopologyError("node coordinates must be finite")
    if len(materials) != len(elements):
        raise TopologyError("one material id is required per element")
    if len(tags) != len(boundary):
        raise TopologyError("one tag is required per boundary segment")

    out_of_range = (elements < 0) | (elements >= n)
    if out_of_range.any():
        e, k = np.argwhere(out_of_range)[0]
        raise TopologyError(f"element {e} references node {elements[e, k]} of a {n}-node mesh")
    repeated = (
        (elements[:, 0] == elements[:, 1])
        | (elements[:, 1] == elements[:, 2])
        | (elements[:, 0] == elements[:, 2])
    )
    if repeated.any():
        raise TopologyError(f"element {int(np.flatnonzero(repeated)[0])} repeats a node")
    if ((boundary < 0) | (boundary >= n)).any():
        raise TopologyError("boundary segment references a node outside the mesh")

    pairs = cKDTree(nodes).query_pairs(DUPLICATE_NODE_DISTANCE)
    if pairs:
        i, j = sorted(pairs)[0]
        raise TopologyError(f"nodes {i} and {j} coincide within {DUPLICATE_NODE_DISTANCE} m")

    areas = signed_areas(nodes[elements])
    degenerate = np.flatnonzero(np.abs(areas) < MIN_ELEMENT_AREA)
    if degenerate.size:
        raise DegenerateElementError(int(degenerate[0]), float(areas[degenerate[0]]))
    clockwise = areas < 0
    elements[clockwise] = elements[clockwise][:, [0, 2, 1]]

    oriented = _boundary_edges(elements)
    seen = set()
    oriented_boundary = np.empty_like(boundary)
    for s, (a, b) in enumerate(boundary):
        key = (min(a, b), max(a, b))
        if key not in oriented:
            raise TopologyError(f"tagged segment ({a}, {b}) is not a boundary edge")
        if key in seen:
            raise TopologyError(f"boundary edge ({a}, {b}) is tagged more than once")
        seen.add(key)
        oriented_boundary[s] = oriented[key]
    untagged = set(oriented) - seen
    if untagged:
        a, b = sorted(untagged)[0]
        raise TopologyError(f"boundary edge ({a}, {b}) has no tag ({len(untagged)} untagged)")

    unused = np.setdiff1d(np.arange(n), elements.ravel())
    if unused.size:
        raise TopologyError(f"node {int(unused[0])} belongs to no element")

    nodes.setflags(write=False)
    elements.setflags(write=False)
    oriented_boundary.setflags(write=False)
    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        materials=tuple(str(m) for m in materials),
        boundary=oriented_boundary,
        tags=tags,
        probes={},
    )
    if probes:
        mesh = mesh.with_probes(probes)
    return mesh


def _boundary_edges(elements: np.ndarray) -> Dict[Tuple[int, int], Tuple[int, int]]:
    """Map each boundary edge (sorted key) to its counter-clockwise orientation."""
    directed = np.concatenate(
        [elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]], axis=0
    )
    keys = np.sort(directed, axis=1)
    unique, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    if (counts > 2).any():
        a, b = unique[np.flatnonzero(counts > 2)[0]]
        raise TopologyError(f"edge ({a}, {b}) is shared by more than two elements")
    single = counts[inverse.ravel()] == 1
    return {
        (int(k[0]), int(k[1])): (int(d[0]), int(d[1]))
        for k, d in zip(keys[single], directed[single])
    }


def load_mesh(stream: TextIO) -> Mesh:
    """
    Parse the sectioned mesh text format.

    Format::

        $Nodes <count>
        <id> <x> <y>
        $Elements <count>
        <id> <n1> <n2> <n3> <material_id>
        $Boundary <count>
        <n1> <n2> <tag-string>
        $Probes <count>
        <label> <x> <y>

    Blank lines and lines starting with '#' are ignored. $Probes is optional.

    Raises:
        MeshParseError: malformed text, with the offending line number
        TopologyError: well-formed text describing an invalid mesh
    """
    lines = [
        (number, text.strip())
        for number, text in enumerate(stream, start=1)
        if text.strip() and not text.lstrip().startswith("#")
    ]
    sections: Dict[str, List[Tuple[int, List[str]]]] = {}
    position = 0
    while position < len(lines):
        number, text = lines[position]
        head = text.split()
        if not head[0].startswith("$") or len(head) != 2:
            raise MeshParseError(number, f"expected a section header, got {text!r}")
        name = head[0][1:]
        if name not in ("Nodes", "Elements", "Boundary", "Probes"):
            raise MeshParseError(number, f"unknown section ${name}")
        if name in sections:
            raise MeshParseError(number, f"duplicate section ${name}")
        count = _parse_int(head[1], number)
        body = lines[position + 1 : position + 1 + count]
        if len(body) < count or any(t.startswith("$") for _, t in body):
            raise MeshParseError(number, f"${name} announces {count} records")
        sections[name] = [(n, t.split()) for n, t in body]
        position += 1 + count

    for required in ("Nodes", "Elements", "Boundary"):
        if required not in sections:
            raise MeshParseError(len(lines) and lines[-1][0], f"missing section ${required}")

    node_rows = sections["Nodes"]
    nodes = np.full((len(node_rows), 2), np.nan)
    for number, fields in node_rows:
        if len(fields) != 3:
            raise MeshParseError(number, "node record needs <id> <x> <y>")
        node_id = _parse_id(fields[0], number, len(node_rows), "node")
        if not np.isnan(nodes[node_id, 0]):
            raise MeshParseError(number, f"node id {node_id} defined twice")
        nodes[node_id] = (_parse_float(fields[1], number), _parse_float(fields[2], number))

    element_rows = sections["Elements"]
    elements = np.full((len(element_rows), 3), -1, dtype=np.int64)
    materials: List[Optional[str]] = [None] * len(element_rows)
    for number, fields in element_rows:
        if len(fields) != 5:
            raise MeshParseError(number, "element record needs <id> <n1> <n2> <n3> <material_id>")
        element_id = _parse_id(fields[0], number, len(element_rows), "element")
        if materials[element_id] is not None:
            raise MeshParseError(number, f"element id {element_id} defined twice")
        elements[element_id] = [_parse_int(f, number) for f in fields[1:4]]
        materials[element_id] = fields[4]

    boundary = []
    tags = []
    for number, fields in sections["Boundary"]:
        if len(fields) != 3:
            raise MeshParseError(number, "boundary record needs <n1> <n2> <tag>")
        boundary.append((_parse_int(fields[0], number), _parse_int(fields[1], number)))
        try:
            tags.append(BoundaryTag(fields[2]))
        except ValueError:
            raise MeshParseError(number, f"unknown boundary tag {fields[2]!r}")

    probes = {}
    for number, fields in sections.get("Probes", []):
        if len(fields) != 3:
            raise MeshParseError(number, "probe record needs <label> <x> <y>")
        probes[fields[0]] = (_parse_float(fields[1], number), _parse_float(fields[2], number))

    mesh = build_mesh(nodes, elements, materials, np.array(boundary).reshape(-1, 2), tags)
    return mesh.with_probes(probes) if probes else mesh.with_probes(default_probes(mesh))


def dump_mesh(mesh: Mesh, stream: TextIO) -> None:
    """Write a mesh in the format read by load_mesh, with round-trip float text."""
    stream.write(f"$Nodes {mesh.n_nodes}\n")
    for i, (x, y) in enumerate(mesh.nodes):
        stream.write(f"{i} {float(x)!r} {float(y)!r}\n")
    stream.write(f"$Elements {mesh.n_elements}\n")
    for e, (n1, n2, n3) in enumerate(mesh.elements):
        stream.write(f"{e} {n1} {n2} {n3} {mesh.materials[e]}\n")
    stream.write(f"$Boundary {len(mesh.boundary)}\n")
    for (a, b), tag in zip(mesh.boundary, mesh.tags):
        stream.write(f"{a} {b} {tag.value}\n")
    stream.write(f"$Probes {len(mesh.probes)}\n")
    for label, (x, y) in mesh.probes.items():
        stream.write(f"{label} {float(x)!r} {float(y)!r}\n")


def _parse_int(text: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise MeshParseError(line, f"expected an integer, got {text!r}")


def _parse_float(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise MeshParseError(line, f"expected a number, got {text!r}")


def _parse_id(text: str, line: int, count: int, kind: str) -> int:
    value = _parse_int(text, line)
    if not 0 <= value < count:
        raise MeshParseError(line, f"{kind} id {value} outside 0..{count - 1}")
    return value


def wall_chains(mesh: Mesh, tol: float = 1e-6) -> List[WallChain]:
    """
    Ordered CavernWall node chains, one per cavern.

    Chains start at their highest end. An open chain whose two ends sit on the symmetry
    axis is reported as closed, the axis segment completing the loop.
    """
    segments = mesh.segments(BoundaryTag.CAVERN_WALL)
    if len(segments) == 0:
        return []
    following = {int(a): int(b) for a, b in segments}
    preceding = {int(b): int(a) for a, b in segments}
    axis_x = _axis_x(mesh)
    scale = max(mesh.bounds[2] - mesh.bounds[0], mesh.bounds[3] - mesh.bounds[1])

    chains = []
    visited = set()
    starts = [a for a in following if a not in preceding]
    starts += [a for a in following if a in preceding]
    for start in starts:
        if start in visited:
            continue
        chain = [start]
        visited.add(start)
        current = start
        while current in following and following[current] != start:
            current = following[current]
            if current in visited:
                break
            chain.append(current)
            visited.add(current)
        ring = start in preceding and following.get(chain[-1]) == start
        if ring:
            chain = np.array(chain)
            top = int(np.argmax(mesh.nodes[chain, 1]))
            chains.append(WallChain(np.roll(chain, -top), True, False))
            continue
        chain = np.array(chain)
        if mesh.nodes[chain[-1], 1] > mesh.nodes[chain[0], 1]:
            chain = chain[::-1]
        ends_on_axis = (
            axis_x is not None
            and abs(mesh.nodes[chain[0], 0] - axis_x) < tol * scale
            and abs(mesh.nodes[chain[-1], 0] - axis_x) < tol * scale
        )
        chains.append(WallChain(chain, bool(ends_on_axis), bool(ends_on_axis)))
    chains.sort(key=lambda c: (float(mesh.nodes[c.nodes, 0].mean()), -float(mesh.nodes[c.nodes[0], 1])))
    return chains


def _axis_x(mesh: Mesh) -> Optional[float]:
    axis_nodes = mesh.nodes_with_tag(BoundaryTag.SYMMETRY_AXIS)
    if axis_nodes.size:
        return float(np.median(mesh.nodes[axis_nodes, 0]))
    return mesh.bounds[0]


def default_probes(mesh: Mesh) -> Dict[str, Tuple[float, float]]:
    """
    Place probes A..G on the first cavern wall by height.

    A is the roof apex and G the floor apex; D is the widest wall node closest to
    mid-height. B and F sit at a quarter and three quarters of the cavern height below
    A, C and E halfway between those and D. Probes snap to the wall node nearest the
    target height on their side of D. Meshes without a cavern wall get no default probes.
    """
    chains = wall_chains(mesh)
    if not chains:
        return {}
    chain = chains[0]
    path = chain.nodes
    if not chain.on_axis:
        path = _right_side_path(mesh, chain.nodes)

    points = mesh.nodes[path]
    x, y = points[:, 0], points[:, 1]
    last = len(path) - 1
    widest = x >= x.max() - 1e-6 * max(1.0, abs(x.max()))
    mid_height = 0.5 * (y[0] + y[-1])
    candidates = np.flatnonzero(widest)
    d = int(candidates[np.argmin(np.abs(y[candidates] - mid_height))])
    height = y[0] - y[-1]

    def at_height(fraction: float, lo: int, hi: int) -> int:
        if hi < lo:
            return d
        span = np.arange(lo, hi + 1)
        return int(span[np.argmin(np.abs(y[span] - (y[0] - fraction * height)))])

    index = {
        "A": 0,
        "B": at_height(0.25, 1, d - 1),
        "C": at_height(0.375, 1, d - 1),
        "D": d,
        "E": at_height(0.625, d + 1, last - 1),
        "F": at_height(0.75, d + 1, last - 1),
        "G": last,
    }
    return {label: (float(x[i]), float(y[i])) for label, i in index.items()}


def _right_side_path(mesh: Mesh, ring: np.ndarray) -> np.ndarray:
    """Path from the top node to the bottom node of a closed ring along its larger-x side."""
    y = mesh.nodes[ring, 1]
    top = 0
    bottom = int(np.argmin(y))
    forward = ring[top : bottom + 1]
    backward = np.concatenate([ring[:1], ring[bottom:][::-1]])
    if mesh.nodes[forward, 0].mean() >= mesh.nodes[backward, 0].mean():
        return forward
    return backward


def total_area(mesh: Mesh) -> float:
    return float(mesh.areas.sum())


def material_ids(mesh: Mesh) -> Iterable[str]:
    return sorted(set(mesh.materials))
