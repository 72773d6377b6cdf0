"""Triangulated closed-surface geometry: generation, file I/O, validation, moments.

A SurfaceMesh is a flat-panel triangulation of a closed orientable surface,
oriented so that panel normals point outward (enforced by the signed-volume
test at construction, never trusted from the input file).  All downstream
boundary-operator assembly collocates at panel centroids, so the panel
centroid/area/normal caches are computed once here and frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

MAX_SUBDIVISIONS = 7


class MeshError(Exception):
    """Invalid mesh topology, geometry, or file content."""


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed triangulated surface with cached panel geometry.

    Attributes:
        vertices: (nv, 3) float array.
        triangles: (nt, 3) int array, counter-clockwise seen from outside.
        centroids: (nt, 3) panel centroids.
        areas: (nt,) panel areas, all positive.
        normals: (nt, 3) unit outward normals.
        area: total surface area.
        volume: enclosed volume from the divergence identity.
        diameter: maximum pairwise vertex distance.

    Instances are immutable after construction (arrays are read-only) and
    safe for concurrent reads.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    centroids: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    area: float
    volume: float
    diameter: float

    @property
    def n_panels(self) -> int:
        return self.triangles.shape[0]

    def panel_vertices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-panel vertex triples (v0, v1, v2), each (nt, 3)."""
        tri = self.triangles
        return (self.vertices[tri[:, 0]], self.vertices[tri[:, 1]],
                self.vertices[tri[:, 2]])

    def panel_diameters(self) -> np.ndarray:
        """Longest edge of each panel."""
        v0, v1, v2 = self.panel_vertices()
        e = np.stack([np.linalg.norm(v1 - v0, axis=1),
                      np.linalg.norm(v2 - v1, axis=1),
                      np.linalg.norm(v0 - v2, axis=1)])
        return e.max(axis=0)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def build_mesh(vertices: np.ndarray, triangles: np.ndarray) -> SurfaceMesh:
    """Validate raw arrays and construct a SurfaceMesh.

    Raises MeshError on out-of-range indices, degenerate panels, non-manifold
    or unmatched edges, or inward orientation (negative signed volume).
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError(f"vertex array must be (n, 3), got {vertices.shape}")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError(f"triangle array must be (n, 3), got {triangles.shape}")
    nv = vertices.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        bad = np.argwhere((triangles < 0) | (triangles >= nv))[0]
        raise MeshError(f"triangle {bad[0]} references vertex index "
                        f"{triangles[bad[0], bad[1]]} outside [0, {nv})")
    if triangles.shape[0] < 4:
        raise MeshError("a closed surface needs at least 4 triangles")

    _check_manifold(triangles)

    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    cross = np.cross(v1 - v0, v2 - v0)
    two_areas = np.linalg.norm(cross, axis=1)
    if np.any(two_areas <= 1e-14):
        bad = int(np.argmin(two_areas))
        raise MeshError(f"panel {bad} is degenerate (area {two_areas[bad] / 2:g})")
    areas = 0.5 * two_areas
    normals = cross / two_areas[:, None]
    centroids = (v0 + v1 + v2) / 3.0

    volume = float(np.sum(np.einsum("ij,ij->i", centroids, normals) * areas) / 3.0)
    if volume <= 0.0:
        raise MeshError(f"inward orientation: signed volume {volume:g} <= 0 "
                        "(triangles must be counter-clockwise from outside)")

    return SurfaceMesh(
        vertices=_freeze(vertices),
        triangles=_freeze(triangles),
        centroids=_freeze(centroids),
        areas=_freeze(areas),
        normals=_freeze(normals),
        area=float(areas.sum()),
        volume=volume,
        diameter=_diameter(vertices),
    )


def _check_manifold(triangles: np.ndarray) -> None:
    """Every undirected edge must be used exactly twice, once per direction."""
    counts: dict[tuple[int, int], list[int]] = {}
    for t, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            counts.setdefault(key, []).append(1 if u < v else -1)
    for (u, v), orients in counts.items():
        if len(orients) != 2:
            raise MeshError(f"non-manifold edge ({u}, {v}): shared by "
                            f"{len(orients)} triangles, expected 2")
        if sum(orients) != 0:
            raise MeshError(f"edge ({u}, {v}) traversed twice in the same "
                            "direction: inconsistent orientation")


def _diameter(vertices: np.ndarray) -> float:
    # Brute force over vertex pairs; meshes stay small at desk scale.
    best = 0.0
    chunk = 512
    for i in range(0, len(vertices), chunk):
        d = np.linalg.norm(vertices[i:i + chunk, None, :] - vertices[None, :, :],
                           axis=2)
        best = max(best, float(d.max()))
    return best


def geometric_moments(mesh: SurfaceMesh) -> tuple[float, float, float]:
    """Return (area, volume, diameter) of a validated mesh."""
    return mesh.area, mesh.volume, mesh.diameter


# ----------------------------------------------------------------------------
# Generators


_ICO_VERTS = np.array([
    [-1, GOLDEN, 0], [1, GOLDEN, 0], [-1, -GOLDEN, 0], [1, -GOLDEN, 0],
    [0, -1, GOLDEN], [0, 1, GOLDEN], [0, -1, -GOLDEN], [0, 1, -GOLDEN],
    [GOLDEN, 0, -1], [GOLDEN, 0, 1], [-GOLDEN, 0, -1], [-GOLDEN, 0, 1],
], dtype=float)

_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def make_icosphere(radius: float, subdivisions: int) -> SurfaceMesh:
    """Subdivided icosahedron with all vertices projected onto the sphere.

    Produces 20 * 4**subdivisions panels.  Deterministic vertex ordering.
    """
    if radius <= 0:
        raise MeshError(f"radius must be positive, got {radius}")
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise MeshError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], "
                        f"got {subdivisions}")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    vertices = radius * np.asarray(verts)
    return build_mesh(vertices, np.asarray(faces, dtype=np.int64))


def make_ellipsoid(semi_axes: tuple[float, float, float],
                   subdivisions: int) -> SurfaceMesh:
    """Icosphere stretched onto an axis-aligned ellipsoid."""
    a, b, c = semi_axes
    if min(a, b, c) <= 0:
        raise MeshError(f"semi-axes must be positive, got {semi_axes}")
    sphere = make_icosphere(1.0, subdivisions)
    return build_mesh(sphere.vertices * np.array([a, b, c]), sphere.triangles)


def affine_transform(mesh: SurfaceMesh, matrix: np.ndarray | None = None,
                     shift: np.ndarray | None = None) -> SurfaceMesh:
    """Rebuild the mesh with vertices mapped through x -> matrix @ x + shift.

    The linear part must be orientation-preserving (det > 0); the rebuilt
    mesh is re-validated from scratch.
    """
    v = mesh.vertices
    if matrix is not None:
        matrix = np.asarray(matrix, dtype=float)
        if np.linalg.det(matrix) <= 0:
            raise MeshError("transform must preserve orientation (det > 0)")
        v = v @ matrix.T
    if shift is not None:
        v = v + np.asarray(shift, dtype=float)
    return build_mesh(v, mesh.triangles)


def scale_about(mesh: SurfaceMesh, factor: float, center: np.ndarray) -> SurfaceMesh:
    """Uniform scaling x -> center + factor * (x - center)."""
    if factor <= 0:
        raise MeshError(f"scale factor must be positive, got {factor}")
    center = np.asarray(center, dtype=float)
    return build_mesh(center + factor * (mesh.vertices - center), mesh.triangles)


def surface_centroid(mesh: SurfaceMesh) -> np.ndarray:
    """Area-weighted centroid of the surface."""
    return mesh.areas @ mesh.centroids / mesh.area


# ----------------------------------------------------------------------------
# File I/O (ASCII OFF and OBJ)


def load_mesh(path: str, fmt: str | None = None) -> SurfaceMesh:
    """Read an ASCII OFF or OBJ file (triangles only) and validate it.

    The format is inferred from the extension unless ``fmt`` ("off"/"obj")
    is given.
    """
    if fmt is None:
        lower = str(path).lower()
        if lower.endswith(".off"):
            fmt = "off"
        elif lower.endswith(".obj"):
            fmt = "obj"
        else:
            raise MeshError(f"cannot infer format of {path!r}; pass fmt=")
    fmt = fmt.lower()
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    if fmt == "off":
        vertices, triangles = _parse_off(text)
    elif fmt == "obj":
        vertices, triangles = _parse_obj(text)
    else:
        raise MeshError(f"unsupported format {fmt!r}")
    return build_mesh(vertices, triangles)


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _parse_off(text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshError("empty OFF file") from None
    if header != "OFF":
        # Tolerate counts folded onto the header line ("OFF 8 12 18").
        if header.startswith("OFF"):
            header = header[3:].strip()
        else:
            raise MeshError(f"line {lineno}: expected OFF header, got {header!r}")
    if not header or header == "OFF":
        lineno, header = next(lines, (None, None))
        if header is None:
            raise MeshError("OFF file ends before the counts line")
    try:
        nv, nf = [int(tok) for tok in header.split()[:2]]
    except ValueError:
        raise MeshError(f"line {lineno}: malformed OFF counts line {header!r}") from None

    vertices = np.empty((nv, 3))
    for i in range(nv):
        lineno, line = next(lines, (None, None))
        if line is None:
            raise MeshError(f"OFF file ends inside vertex block ({i}/{nv} read)")
        parts = line.split()
        if len(parts) < 3:
            raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
        try:
            vertices[i] = [float(p) for p in parts[:3]]
        except ValueError:
            raise MeshError(f"line {lineno}: bad vertex coordinate in {line!r}") from None

    triangles = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, line = next(lines, (None, None))
        if line is None:
            raise MeshError(f"OFF file ends inside face block ({i}/{nf} read)")
        parts = line.split()
        try:
            count = int(parts[0])
            idx = [int(p) for p in parts[1:1 + count]]
        except (ValueError, IndexError):
            raise MeshError(f"line {lineno}: malformed face {line!r}") from None
        if count != 3 or len(idx) != 3:
            raise MeshError(f"line {lineno}: only triangular faces supported, "
                            f"got {count} vertices")
        triangles[i] = idx
    return vertices, triangles


def _parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    for lineno, line in _content_lines(text):
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshError(f"line {lineno}: bad vertex in {line!r}") from None
        elif tag == "f":
            if len(parts) != 4:
                raise MeshError(f"line {lineno}: only triangular faces supported")
            idx = []
            for p in parts[1:]:
                tok = p.split("/", 1)[0]
                try:
                    k = int(tok)
                except ValueError:
                    raise MeshError(f"line {lineno}: bad face index {p!r}") from None
                if k <= 0:
                    raise MeshError(f"line {lineno}: only positive 1-based "
                                    "indices supported")
                idx.append(k - 1)
            triangles.append(idx)
        # other tags (vn, vt, usemtl, ...) are ignored
    if not vertices or not triangles:
        raise MeshError("OBJ file contains no usable v/f records")
    return np.asarray(vertices), np.asarray(triangles, dtype=np.int64)


def save_off(mesh: SurfaceMesh, path: str) -> None:
    """Write the mesh as ASCII OFF (round-trips through load_mesh)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
