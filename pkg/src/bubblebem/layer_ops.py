"""Collocation assembly of Helmholtz boundary operators on flat-panel meshes.

Discretization: piecewise-constant densities, collocation at panel centroids,
a fixed 6-point degree-4 symmetric triangle rule for regular integrals, and
closed-form integration of the 1/|x-y| part on the singular self panel.  The
oscillatory factor is split off as (e^{izr}-1)/r, which is bounded and handled
by the regular rule.

Matrix convention: entry (i, j) approximates the integral of the kernel over
panel j, observed at the centroid of panel i, so matrices act directly on
per-panel coefficient vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .mesh import SurfaceMesh

TRACE = "H+1/2"      # Dirichlet-trace-like data
DENSITY = "H-1/2"    # surface-density-like data

SERIES_MAX_ORDER = 6

_ROW_CHUNK = 128

# Degree-4 symmetric triangle rule (6 points); weights sum to 1.
_QA, _QB, _QWA = 0.816847572980459, 0.091576213509771, 0.109951743655322
_QC, _QD, _QWB = 0.108103018168070, 0.445948490915965, 0.223381589678011
_QUAD_BARY = np.array([
    [_QA, _QB, _QB], [_QB, _QA, _QB], [_QB, _QB, _QA],
    [_QC, _QD, _QD], [_QD, _QC, _QD], [_QD, _QD, _QC],
])
_QUAD_W = np.array([_QWA, _QWA, _QWA, _QWB, _QWB, _QWB])


class SpaceTagError(ValueError):
    """Operator or density used with an incompatible trace-space role."""


@dataclass
class BoundaryDensity:
    """Per-panel coefficients of a piecewise-constant boundary function."""

    values: np.ndarray
    space: str = DENSITY

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1:
            raise ValueError("density coefficients must be a 1-d array")
        if self.space not in (TRACE, DENSITY):
            raise SpaceTagError(f"unknown space tag {self.space!r}")


@dataclass
class BoundaryOperator:
    """Dense operator between the discrete trace spaces of one mesh."""

    matrix: np.ndarray
    domain: str
    codomain: str
    wavenumber: complex | None = None
    label: str = "composite"

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"operator {self.label!r} has non-finite entries")
        self.matrix = m

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other: "BoundaryOperator") -> "BoundaryOperator":
        if not isinstance(other, BoundaryOperator):
            return NotImplemented
        if other.codomain != self.domain:
            raise SpaceTagError(
                f"cannot compose {self.label!r} (domain {self.domain}) with "
                f"{other.label!r} (codomain {other.codomain})")
        wn = self.wavenumber if self.wavenumber == other.wavenumber else None
        return BoundaryOperator(self.matrix @ other.matrix, domain=other.domain,
                                codomain=self.codomain, wavenumber=wn)

    def apply(self, density: BoundaryDensity) -> BoundaryDensity:
        if density.space != self.domain:
            raise SpaceTagError(
                f"operator {self.label!r} expects {self.domain} input, "
                f"got {density.space}")
        return BoundaryDensity(self.matrix @ density.values, space=self.codomain)


def save_operator(op: BoundaryOperator, path: str) -> None:
    """Dump the matrix as row-major little-endian (re, im) float64 pairs.

    A JSON sidecar ``<path>.meta.json`` records shape, tags, wavenumber and
    label so the dump is self-describing.
    """
    flat = np.ascontiguousarray(op.matrix, dtype=np.complex128)
    pairs = flat.view(np.float64).astype("<f8")
    pairs.tofile(path)
    wn = op.wavenumber
    meta = {
        "shape": list(op.matrix.shape),
        "domain": op.domain,
        "codomain": op.codomain,
        "wavenumber": None if wn is None else [complex(wn).real, complex(wn).imag],
        "label": op.label,
        "layout": "row-major little-endian float64 (re, im) pairs",
    }
    with open(path + ".meta.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=1)


def load_operator(path: str) -> BoundaryOperator:
    with open(path + ".meta.json", "r", encoding="ascii") as fh:
        meta = json.load(fh)
    n0, n1 = meta["shape"]
    pairs = np.fromfile(path, dtype="<f8")
    matrix = pairs.view(np.complex128).reshape(n0, n1)
    wn = meta["wavenumber"]
    return BoundaryOperator(matrix, domain=meta["domain"], codomain=meta["codomain"],
                            wavenumber=None if wn is None else complex(*wn),
                            label=meta["label"])


# ----------------------------------------------------------------------------
# Quadrature and singular integration


def panel_quadrature(mesh: SurfaceMesh) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes (nt, 6, 3) and weights (nt, 6) for every panel."""
    v0, v1, v2 = mesh.panel_vertices()
    nodes = (_QUAD_BARY[None, :, 0, None] * v0[:, None, :]
             + _QUAD_BARY[None, :, 1, None] * v1[:, None, :]
             + _QUAD_BARY[None, :, 2, None] * v2[:, None, :])
    weights = mesh.areas[:, None] * _QUAD_W[None, :]
    return nodes, weights


def triangle_inverse_distance_integral(points: np.ndarray, v0: np.ndarray,
                                       v1: np.ndarray, v2: np.ndarray,
                                       normals: np.ndarray) -> np.ndarray:
    """Closed-form integral of 1/|p-y| over flat triangles, one p per triangle.

    Arbitrary observation points are allowed; the formula sums per-edge
    log terms and an out-of-plane solid-angle correction.
    """
    points = np.atleast_2d(points)
    d = np.einsum("ij,ij->i", points - v0, normals)
    abs_d = np.abs(d)
    total = np.zeros(len(points))
    for a, b in ((v0, v1), (v1, v2), (v2, v0)):
        tangent = b - a
        tangent = tangent / np.linalg.norm(tangent, axis=1)[:, None]
        outward = np.cross(tangent, normals)
        sm = np.einsum("ij,ij->i", a - points, tangent)
        sp = np.einsum("ij,ij->i", b - points, tangent)
        t0 = np.einsum("ij,ij->i", a - points, outward)
        rm = np.linalg.norm(points - a, axis=1)
        rp = np.linalg.norm(points - b, axis=1)
        r0sq = t0 * t0 + d * d
        # log argument degenerates only for p on the edge line; clamp keeps
        # the 0*log(0) limit finite without branching
        num = np.maximum(rp + sp, 1e-300)
        den = np.maximum(rm + sm, 1e-300)
        total += t0 * np.log(num / den)
        total -= abs_d * (np.arctan2(t0 * sp, r0sq + abs_d * rp)
                          - np.arctan2(t0 * sm, r0sq + abs_d * rm))
    return total


def _self_panel_inverse_distance(mesh: SurfaceMesh) -> np.ndarray:
    """Exact ∫_T 1/(4π|c_T - y|) dσ(y) for every panel from its centroid."""
    v0, v1, v2 = mesh.panel_vertices()
    return triangle_inverse_distance_integral(mesh.centroids, v0, v1, v2,
                                              mesh.normals) / (4.0 * np.pi)


# ----------------------------------------------------------------------------
# Operator assembly


def _check_im(z: complex) -> complex:
    z = complex(z)
    if z.imag < 0:
        raise ValueError(f"wavenumber must satisfy Im z >= 0, got {z}")
    return z


def assemble_single_layer(mesh: SurfaceMesh, z: complex) -> BoundaryOperator:
    """Single-layer boundary operator S_z with kernel e^{iz r}/(4π r)."""
    z = _check_im(z)
    nodes, weights = panel_quadrature(mesh)
    n = mesh.n_panels
    flat_nodes = nodes.reshape(-1, 3)
    flat_w = weights.reshape(-1)
    out = np.empty((n, n), dtype=complex)
    use_complex = z != 0
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        r = np.linalg.norm(mesh.centroids[lo:hi, None, :] - flat_nodes[None, :, :],
                           axis=2)
        if use_complex:
            vals = np.exp(1j * z * r)
            vals /= r
        else:
            vals = 1.0 / r
        vals *= flat_w
        out[lo:hi] = vals.reshape(hi - lo, n, 6).sum(axis=2) / (4.0 * np.pi)

    # Self panel: the 1/r part integrates in closed form; the remainder
    # (e^{izr}-1)/(4πr) is bounded and the regular rule applies.
    diag = _self_panel_inverse_distance(mesh).astype(complex)
    if use_complex:
        idx = np.arange(n)
        rself = np.linalg.norm(mesh.centroids[:, None, :] - nodes[idx], axis=2)
        smooth = np.expm1(1j * z * rself) / (4.0 * np.pi * rself)
        diag = diag + np.sum(smooth * weights, axis=1)
    out[np.arange(n), np.arange(n)] = diag
    return BoundaryOperator(out, domain=DENSITY, codomain=TRACE,
                            wavenumber=z, label="S")


def assemble_double_layer(mesh: SurfaceMesh, z: complex) -> BoundaryOperator:
    """Double-layer boundary operator K_z, kernel ν(y)·∇_y e^{iz r}/(4π r).

    The flat-panel self term of the static kernel vanishes, so the diagonal
    is set by the solid-angle rule: each row applied to the constant density
    1 gives -1/2 at z = 0.  For z != 0 the diagonal correction is the regular
    quadrature of the smooth difference kernel (identically zero on exactly
    flat panels).
    """
    z = _check_im(z)
    nodes, weights = panel_quadrature(mesh)
    n = mesh.n_panels
    flat_nodes = nodes.reshape(-1, 3)
    flat_w = weights.reshape(-1)
    # ν(y) is constant on each source panel
    flat_nu = np.repeat(mesh.normals, 6, axis=0)
    out = np.empty((n, n), dtype=complex)
    static_rowsum = np.empty(n)
    use_complex = z != 0
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        diff = mesh.centroids[lo:hi, None, :] - flat_nodes[None, :, :]
        r = np.linalg.norm(diff, axis=2)
        numer = np.einsum("ijk,jk->ij", diff, flat_nu)
        static = numer / (4.0 * np.pi * r ** 3)
        static *= flat_w
        block0 = static.reshape(hi - lo, n, 6).sum(axis=2)
        if use_complex:
            vals = static * ((1.0 - 1j * z * r) * np.exp(1j * z * r))
            block = vals.reshape(hi - lo, n, 6).sum(axis=2)
        else:
            block = block0.astype(complex)
        rows = np.arange(lo, hi)
        block0[rows - lo, rows] = 0.0
        block[rows - lo, rows] = 0.0
        out[lo:hi] = block
        static_rowsum[lo:hi] = block0.sum(axis=1)

    diag = (-0.5 - static_rowsum).astype(complex)
    if use_complex:
        idx = np.arange(n)
        diff = mesh.centroids[:, None, :] - nodes[idx]
        r = np.linalg.norm(diff, axis=2)
        numer = np.einsum("ijk,ik->ij", diff, mesh.normals)
        smooth = numer * ((1.0 - 1j * z * r) * np.exp(1j * z * r) - 1.0)
        smooth /= 4.0 * np.pi * r ** 3
        diag = diag + np.sum(smooth * weights, axis=1)
    out[np.arange(n), np.arange(n)] = diag
    return BoundaryOperator(out, domain=TRACE, codomain=TRACE,
                            wavenumber=z, label="K")


def _series_range_check(n: int, low: int) -> None:
    if not low <= n <= SERIES_MAX_ORDER:
        raise ValueError(f"series order must be in [{low}, {SERIES_MAX_ORDER}], "
                         f"got {n}")


def assemble_series_term_S(mesh: SurfaceMesh, n: int) -> BoundaryOperator:
    """Coefficient operator of z^n in the single-layer expansion.

    Kernel (i^n / 4π n!) |x-y|^{n-1}; smooth for n >= 1, so one regular rule
    serves all panels including the self panel.
    """
    _series_range_check(n, 1)
    nodes, weights = panel_quadrature(mesh)
    npan = mesh.n_panels
    flat_nodes = nodes.reshape(-1, 3)
    flat_w = weights.reshape(-1)
    coeff = (1j ** n) / (4.0 * np.pi * float(math.factorial(n)))
    out = np.empty((npan, npan), dtype=complex)
    for lo in range(0, npan, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, npan)
        r = np.linalg.norm(mesh.centroids[lo:hi, None, :] - flat_nodes[None, :, :],
                           axis=2)
        vals = r ** (n - 1) if n > 1 else np.ones_like(r)
        vals = vals * flat_w
        out[lo:hi] = coeff * vals.reshape(hi - lo, npan, 6).sum(axis=2)
    return BoundaryOperator(out, domain=DENSITY, codomain=TRACE,
                            wavenumber=None, label=f"S_({n})")


def assemble_series_term_K(mesh: SurfaceMesh, n: int) -> BoundaryOperator:
    """Coefficient operator of z^n in the double-layer expansion.

    Kernel -(n-1)(i^n / 4π n!) ν(y)·(x-y) |x-y|^{n-3}; bounded for n = 2,
    smooth for n >= 3, and identically zero on flat self panels.
    """
    _series_range_check(n, 2)
    nodes, weights = panel_quadrature(mesh)
    npan = mesh.n_panels
    flat_nodes = nodes.reshape(-1, 3)
    flat_w = weights.reshape(-1)
    flat_nu = np.repeat(mesh.normals, 6, axis=0)
    coeff = -(n - 1) * (1j ** n) / (4.0 * np.pi * float(math.factorial(n)))
    out = np.empty((npan, npan), dtype=complex)
    for lo in range(0, npan, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, npan)
        diff = mesh.centroids[lo:hi, None, :] - flat_nodes[None, :, :]
        r = np.linalg.norm(diff, axis=2)
        numer = np.einsum("ijk,jk->ij", diff, flat_nu)
        vals = numer * r ** (n - 3)
        vals *= flat_w
        block = coeff * vals.reshape(hi - lo, npan, 6).sum(axis=2)
        # flat self panel: ν ⟂ (x-y) exactly; drop the rounding residue
        rows = np.arange(lo, hi)
        block[rows - lo, rows] = 0.0
        out[lo:hi] = block
    return BoundaryOperator(out, domain=TRACE, codomain=TRACE,
                            wavenumber=None, label=f"K_({n})")


def eval_single_layer_potential(mesh: SurfaceMesh,
                                density: BoundaryDensity | np.ndarray,
                                z: complex, points: np.ndarray) -> np.ndarray:
    """Off-surface single-layer potential of a panel density.

    Points must keep at least one panel diameter of clearance from the
    surface; near-surface evaluation is out of scope.
    """
    z = _check_im(z)
    if isinstance(density, BoundaryDensity):
        if density.space != DENSITY:
            raise SpaceTagError("single-layer potential expects an "
                                f"{DENSITY} density, got {density.space}")
        coeff = density.values
    else:
        coeff = np.asarray(density)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_clearance(mesh, points)
    nodes, weights = panel_quadrature(mesh)
    flat_nodes = nodes.reshape(-1, 3)
    flat_w = weights.reshape(-1)
    out = np.empty(len(points), dtype=complex)
    for lo in range(0, len(points), _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, len(points))
        r = np.linalg.norm(points[lo:hi, None, :] - flat_nodes[None, :, :], axis=2)
        vals = np.exp(1j * z * r) / (4.0 * np.pi * r) * flat_w
        panel_ints = vals.reshape(hi - lo, mesh.n_panels, 6).sum(axis=2)
        out[lo:hi] = panel_ints @ coeff
    return out


def _check_clearance(mesh: SurfaceMesh, points: np.ndarray) -> None:
    clearance = float(mesh.panel_diameters().max())
    for lo in range(0, len(points), _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, len(points))
        d = np.linalg.norm(points[lo:hi, None, :] - mesh.centroids[None, :, :],
                           axis=2).min(axis=1)
        if np.any(d < clearance):
            bad = lo + int(np.argmin(d))
            raise ValueError(
                f"evaluation point {bad} is {d.min():.3g} from the surface, "
                f"closer than one panel diameter ({clearance:.3g})")
