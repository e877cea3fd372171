"""Unstructured 2-D triangular meshes: SU2-format I/O, graph extraction,
and the geometric queries the rest of the package is built on.

Meshes are immutable by convention: every operation returns new objects and
never mutates its inputs, so everything here is safe to call from multiple
threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# SU2 element type codes (VTK numbering).
TRIANGLE = 5
QUADRILATERAL = 9
LINE = 3


class MeshFormatError(ValueError):
    """An SU2 mesh file (or an in-memory mesh) violates the format."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class Marker:
    """A named boundary: a tag plus the line segments (node-index pairs) on it."""

    tag: str
    segments: list[tuple[int, int]]

    def __eq__(self, other):
        if not isinstance(other, Marker):
            return NotImplemented
        return self.tag == other.tag and self.segments == other.segments


@dataclass(eq=False)
class Mesh:
    """Node coordinates, elements, and tagged boundary segments.

    Elements are triangles (3 vertex indices) or quadrilaterals (4); quads
    survive parsing untouched until :func:`triangulate` splits them.
    """

    nodes: np.ndarray                 # (N, 2) float64
    elements: list[tuple[int, ...]]
    markers: list[Marker] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshFormatError(f"nodes must be (N, 2), got shape {self.nodes.shape}")
        self.elements = [tuple(int(v) for v in e) for e in self.elements]
        n = len(self.nodes)
        for i, elem in enumerate(self.elements):
            if len(elem) not in (3, 4):
                raise MeshFormatError(f"element {i} has {len(elem)} vertices; expected 3 or 4")
            if any(v < 0 or v >= n for v in elem):
                raise MeshFormatError(f"element {i} references node index outside [0, {n})")
            if len(elem) == 3 and len(set(elem)) != 3:
                raise MeshFormatError(f"triangle {i} has repeated vertices: {elem}")
        for m in self.markers:
            m.segments = [tuple(int(v) for v in s) for s in m.segments]
            for seg in m.segments:
                if len(seg) != 2:
                    raise MeshFormatError(f"marker '{m.tag}' has a non-segment entry {seg}")
                if any(v < 0 or v >= n for v in seg):
                    raise MeshFormatError(f"marker '{m.tag}' references node index outside [0, {n})")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def is_triangular(self) -> bool:
        return all(len(e) == 3 for e in self.elements)

    def element_array(self) -> np.ndarray:
        """Elements as an (M, 3) int array. Requires a purely triangular mesh."""
        if not self.is_triangular():
            raise MeshFormatError("mesh contains quadrilaterals; call triangulate() first")
        return np.asarray(self.elements, dtype=np.int64).reshape(-1, 3)

    def marker(self, tag: str) -> Marker:
        for m in self.markers:
            if m.tag == tag:
                return m
        known = ", ".join(m.tag for m in self.markers) or "<none>"
        raise KeyError(f"unknown marker tag '{tag}' (mesh has: {known})")

    def marker_nodes(self, tag: str) -> np.ndarray:
        """Sorted unique node indices on the named marker."""
        m = self.marker(tag)
        return np.unique(np.asarray(m.segments, dtype=np.int64).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and self.elements == other.elements
            and self.markers == other.markers
        )


@dataclass(eq=False)
class Graph:
    """Undirected graph induced by a triangular mesh: deduplicated element sides."""

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, each row sorted, rows lexicographically sorted

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.num_nodes == other.num_nodes and np.array_equal(self.edges, other.edges)


# ---------------------------------------------------------------------------
# SU2 ASCII format


def parse_su2(source) -> Mesh:
    """Parse an SU2 ASCII mesh from a string or a file-like object.

    Accepts ``%`` comment lines and blank lines anywhere. Trailing per-line
    index columns are ignored. Errors carry the 1-based line number.
    """
    text = source.read() if hasattr(source, "read") else source
    raw_lines = text.splitlines()
    # (lineno, content) with comments and blanks stripped out
    lines: list[tuple[int, str]] = []
    for i, raw in enumerate(raw_lines, start=1):
        stripped = raw.split("%", 1)[0].strip()
        if stripped:
            lines.append((i, stripped))

    ndime = None
    elements: list[tuple[int, ...]] | None = None
    element_lines: list[int] = []
    nodes: np.ndarray | None = None
    markers: list[Marker] | None = None

    pos = 0

    def error(msg: str, lineno: int | None = None):
        raise MeshFormatError(msg, line=lineno)

    def read_count(value: str, lineno: int, label: str) -> int:
        try:
            count = int(value)
        except ValueError:
            error(f"{label} requires an integer count, got '{value}'", lineno)
        if count < 0:
            error(f"{label} count must be nonnegative, got {count}", lineno)
        return count

    while pos < len(lines):
        lineno, content = lines[pos]
        if "=" not in content:
            error(f"expected a section header, got '{content}'", lineno)
        key, _, value = content.partition("=")
        key = key.strip().upper()
        value = value.strip()
        pos += 1

        if key == "NDIME":
            ndime = read_count(value, lineno, "NDIME")
            if ndime != 2:
                error(f"only NDIME= 2 meshes are supported, got {ndime}", lineno)
        elif key == "NELEM":
            count = read_count(value, lineno, "NELEM")
            elements = []
            for k in range(count):
                if pos >= len(lines):
                    error(f"element section ended early: expected {count} elements, got {k}", lineno)
                elineno, econtent = lines[pos]
                parts = econtent.split()
                try:
                    values = [int(p) for p in parts]
                except ValueError:
                    error(f"element section ended early: expected {count} elements, got {k} "
                          f"(non-element line '{econtent}')", elineno)
                code = values[0]
                if code == TRIANGLE:
                    nverts = 3
                elif code == QUADRILATERAL:
                    nverts = 4
                else:
                    error(f"unknown element type code {code}", elineno)
                if len(values) < 1 + nverts:
                    error(f"element of type {code} needs {nverts} vertex indices", elineno)
                elements.append(tuple(values[1:1 + nverts]))
                element_lines.append(elineno)
                pos += 1
        elif key == "NPOIN":
            count = read_count(value, lineno, "NPOIN")
            coords = np.empty((count, 2), dtype=np.float64)
            for k in range(count):
                if pos >= len(lines):
                    error(f"point section ended early: expected {count} points, got {k}", lineno)
                plineno, pcontent = lines[pos]
                parts = pcontent.split()
                try:
                    coords[k, 0] = float(parts[0])
                    coords[k, 1] = float(parts[1])
                except (ValueError, IndexError):
                    error(f"point section ended early: expected {count} points, got {k} "
                          f"(non-point line '{pcontent}')", plineno)
                pos += 1
            nodes = coords
        elif key == "NMARK":
            count = read_count(value, lineno, "NMARK")
            markers = []
            for _ in range(count):
                if pos >= len(lines):
                    error(f"marker section ended early: expected {count} markers", lineno)
                mlineno, mcontent = lines[pos]
                mkey, _, mvalue = mcontent.partition("=")
                if mkey.strip().upper() != "MARKER_TAG":
                    error(f"expected MARKER_TAG=, got '{mcontent}'", mlineno)
                tag = mvalue.strip()
                pos += 1
                if pos >= len(lines):
                    error(f"marker '{tag}' is missing MARKER_ELEMS", mlineno)
                elineno, econtent = lines[pos]
                ekey, _, evalue = econtent.partition("=")
                if ekey.strip().upper() != "MARKER_ELEMS":
                    error(f"expected MARKER_ELEMS= for marker '{tag}', got '{econtent}'", elineno)
                nsegs = read_count(evalue.strip(), elineno, "MARKER_ELEMS")
                pos += 1
                segments: list[tuple[int, int]] = []
                for k in range(nsegs):
                    if pos >= len(lines):
                        error(f"marker '{tag}' ended early: expected {nsegs} segments, got {k}",
                              elineno)
                    slineno, scontent = lines[pos]
                    parts = scontent.split()
                    try:
                        values = [int(p) for p in parts]
                    except ValueError:
                        error(f"marker '{tag}' ended early: expected {nsegs} segments, got {k}",
                              slineno)
                    if values[0] != LINE:
                        error(f"marker '{tag}': unknown element type code {values[0]} "
                              f"(only line segments, code {LINE}, are allowed)", slineno)
                    if len(values) < 3:
                        error(f"marker '{tag}': segment needs 2 vertex indices", slineno)
                    segments.append((values[1], values[2]))
                    pos += 1
                markers.append(Marker(tag, segments))
        else:
            error(f"unknown section '{key}'", lineno)

    if ndime is None:
        error("missing required section NDIME")
    if elements is None:
        error("missing required section NELEM")
    if nodes is None:
        error("missing required section NPOIN")

    n = len(nodes)
    for elem, elineno in zip(elements, element_lines):
        if any(v < 0 or v >= n for v in elem):
            error(f"element references node index outside [0, {n}): {elem}", elineno)

    return Mesh(nodes=nodes, elements=elements, markers=markers or [])


def write_su2(mesh: Mesh) -> str:
    """Serialize a Mesh to SU2 ASCII text such that parse_su2 round-trips exactly.

    Coordinates are written with 17 significant digits, which is enough to
    reproduce any float64 bit pattern on re-parse.
    """
    out: list[str] = []
    out.append("NDIME= 2")
    out.append(f"NELEM= {len(mesh.elements)}")
    for i, elem in enumerate(mesh.elements):
        code = TRIANGLE if len(elem) == 3 else QUADRILATERAL
        out.append(" ".join([str(code), *(str(v) for v in elem), str(i)]))
    out.append(f"NPOIN= {len(mesh.nodes)}")
    for i, (x, y) in enumerate(mesh.nodes):
        out.append(f"{x:.17g} {y:.17g} {i}")
    out.append(f"NMARK= {len(mesh.markers)}")
    for m in mesh.markers:
        out.append(f"MARKER_TAG= {m.tag}")
        out.append(f"MARKER_ELEMS= {len(m.segments)}")
        for a, b in m.segments:
            out.append(f"{LINE} {a} {b}")
    return "\n".join(out) + "\n"


def mesh_hash(mesh: Mesh) -> str:
    """SHA-256 of the canonical SU2 serialization; used to key cached fields."""
    return hashlib.sha256(write_su2(mesh).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Mesh operations


def triangulate(mesh: Mesh) -> Mesh:
    """Split every quadrilateral (a, b, c, d) into (a, b, c) and (a, c, d).

    Triangles pass through untouched; the node array is shared. The diagonal
    runs between the first and third stored vertices.
    """
    elements: list[tuple[int, ...]] = []
    for i, elem in enumerate(mesh.elements):
        if len(elem) == 3:
            elements.append(elem)
        else:
            a, b, c, d = elem
            if len({a, b, c, d}) != 4:
                raise MeshFormatError(f"degenerate quadrilateral {i} with repeated vertex: {elem}")
            elements.append((a, b, c))
            elements.append((a, c, d))
    return Mesh(nodes=mesh.nodes, elements=elements,
                markers=[Marker(m.tag, list(m.segments)) for m in mesh.markers])


def build_graph(mesh: Mesh) -> Graph:
    """Undirected graph whose edges are the union of all triangle sides."""
    tri = mesh.element_array()
    sides = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0)
    sides = np.sort(sides, axis=1)
    edges = np.unique(sides, axis=0)
    return Graph(num_nodes=mesh.num_nodes, edges=edges)


def signed_distance(query: np.ndarray, mesh: Mesh, marker_tag: str) -> np.ndarray:
    """Distance from each query point to the named marker polyline.

    For external-flow meshes every node lies outside the body, so the value
    returned is the unsigned minimum distance over the marker's segments.
    """
    marker = mesh.marker(marker_tag)
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    segs = np.asarray(marker.segments, dtype=np.int64)
    a = mesh.nodes[segs[:, 0]]                       # (S, 2)
    b = mesh.nodes[segs[:, 1]]
    ab = b - a                                       # (S, 2)
    ab_sq = np.einsum("sd,sd->s", ab, ab)            # (S,)
    ap = query[:, None, :] - a[None, :, :]           # (Q, S, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("qsd,sd->qs", ap, ab) / ab_sq
    t = np.where(ab_sq > 0.0, t, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    diff = query[:, None, :] - closest
    dist = np.sqrt(np.einsum("qsd,qsd->qs", diff, diff))
    return dist.min(axis=1)


def knn(query: np.ndarray, reference: np.ndarray, k: int):
    """Indices and squared distances of the k nearest reference points.

    Results are sorted by ascending squared distance; exact ties are broken
    by ascending reference index, so the output is deterministic.
    """
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(reference):
        raise ValueError(f"k={k} exceeds reference size {len(reference)}")
    diff = query[:, None, :] - reference[None, :, :]
    d2 = np.einsum("qrd,qrd->qr", diff, diff)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(d2, order, axis=1)


def element_orientations(nodes: np.ndarray, elements) -> np.ndarray:
    """Per-triangle cross product (x_j - x_i) x (x_k - x_i); sign encodes winding."""
    nodes = np.asarray(nodes, dtype=np.float64)
    tri = np.asarray(elements, dtype=np.int64).reshape(-1, 3)
    pi = nodes[tri[:, 0]]
    pj = nodes[tri[:, 1]]
    pk = nodes[tri[:, 2]]
    e1 = pj - pi
    e2 = pk - pi
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
