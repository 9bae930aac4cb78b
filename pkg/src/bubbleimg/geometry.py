"""Shape ingestion, surface/volume quadrature and the Minnaert geometry factor.

A shape ``B`` is a closed, outward-oriented triangle mesh that contains the
origin.  Bubbles are ``D = z + eps * B``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numba
import numpy as np

from .errors import GeometryError, ResolutionError

# --------------------------------------------------------------------------
# triangle quadrature (barycentric points, weights summing to one)

_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    3: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
}


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    pts = [[1 / 3, 1 / 3, 1 / 3]]
    pts += [[a1, b1, b1], [b1, a1, b1], [b1, b1, a1]]
    pts += [[a2, b2, b2], [b2, a2, b2], [b2, b2, a2]]
    w = [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
    return np.array(pts), np.array(w)


_TRI_RULES[7] = _dunavant5()


def triangle_rule(order: int):
    """Barycentric points and weights of the ``order``-point Gauss rule (1, 3 or 7)."""
    try:
        bary, w = _TRI_RULES[order]
    except KeyError:
        raise ValueError(f"quadrature order must be one of 1, 3, 7; got {order}") from None
    return bary.copy(), w.copy()


# --------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class ShapeMesh:
    """Closed triangle surface with outward normals."""

    vertices: np.ndarray
    triangles: np.ndarray
    sphere: tuple | None = None  # (center, radius) when the mesh tessellates an exact sphere

    @cached_property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def scaled(self, s: float) -> "ShapeMesh":
        s = float(s)
        sph = None if self.sphere is None else (np.asarray(self.sphere[0]) * s, self.sphere[1] * s)
        return ShapeMesh(self.vertices * s, self.triangles, sph)

    def rotated(self, rot: np.ndarray) -> "ShapeMesh":
        rot = np.asarray(rot, dtype=float)
        sph = None if self.sphere is None else (rot @ np.asarray(self.sphere[0]), self.sphere[1])
        return ShapeMesh(self.vertices @ rot.T, self.triangles, sph)

    def translated(self, t) -> "ShapeMesh":
        t = np.asarray(t, dtype=float)
        sph = None if self.sphere is None else (np.asarray(self.sphere[0]) + t, self.sphere[1])
        return ShapeMesh(self.vertices + t, self.triangles, sph)

    def flat(self) -> "ShapeMesh":
        """The same polyhedron without the exact-sphere hint."""
        return ShapeMesh(self.vertices, self.triangles)

    def quadrature(self, order: int = 3, exact: bool = True):
        """Surface nodes, outward normals and weights (``order`` points per triangle).

        Nodes are grouped by triangle: node ``k`` belongs to triangle ``k // order``.
        With ``exact`` and a sphere hint, nodes are pushed radially onto the sphere.
        """
        bary, w = triangle_rule(order)
        return self._map_rule(bary, w, np.arange(self.n_triangles), exact)

    def _map_rule(self, bary, w, tris, exact):
        corners = self.corners[tris]
        pts = np.einsum("qk,tkd->tqd", bary, corners).reshape(-1, 3)
        wts = (self.areas[tris][:, None] * w[None, :]).reshape(-1)
        nrm = np.repeat(self.normals[tris], len(w), axis=0)
        if exact and self.sphere is not None:
            c, rad = np.asarray(self.sphere[0], dtype=float), float(self.sphere[1])
            rel = pts - c
            dist = np.linalg.norm(rel, axis=1)
            # area element of the central projection: R^2 (x.n) / |x|^3
            wts = wts * rad ** 2 * np.einsum("ij,ij->i", rel, nrm) / dist ** 3
            nrm = rel / dist[:, None]
            pts = c + rad * nrm
        return pts, nrm, wts

    def touching(self) -> list[np.ndarray]:
        """For every triangle, the triangles sharing at least one vertex with it (itself included)."""
        by_vertex: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                by_vertex[v].append(t)
        return [np.unique(np.concatenate([by_vertex[v] for v in tri])) for tri in self.triangles]


def validate_mesh(mesh: ShapeMesh, require_origin: bool = True) -> ShapeMesh:
    """Check closedness, orientability, outward orientation and (optionally) that 0 is inside."""
    tri = np.asarray(mesh.triangles)
    if tri.ndim != 2 or tri.shape[1] != 3 or len(tri) < 4:
        raise GeometryError("mesh needs at least 4 triangles given as index triples")
    if tri.min() < 0 or tri.max() >= mesh.n_vertices:
        raise GeometryError("triangle index out of range")
    if np.any(mesh.areas <= 0):
        raise GeometryError("degenerate (zero-area) triangle")
    # every directed edge must appear once, and its reverse once
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    keys = directed[:, 0].astype(np.int64) * mesh.n_vertices + directed[:, 1]
    rev = directed[:, 1].astype(np.int64) * mesh.n_vertices + directed[:, 0]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts != 1):
        raise GeometryError("mesh is non-orientable or has non-manifold edges")
    if not np.all(np.isin(rev, uniq)):
        raise GeometryError("mesh is open (boundary edges present)")
    if mesh.signed_volume() <= 0:
        raise GeometryError("negative signed volume: normals point inwards")
    if require_origin and abs(winding_number(mesh, np.zeros((1, 3)))[0] - 1.0) > 1e-6:
        raise GeometryError("shape does not contain the origin")
    return mesh


def winding_number(mesh: ShapeMesh, points: np.ndarray) -> np.ndarray:
    """Generalized winding number (solid angle / 4 pi) of ``points`` w.r.t. the mesh."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return _winding(np.ascontiguousarray(mesh.corners), points)


@numba.njit(cache=True)
def _winding(corners, points):
    out = np.zeros(points.shape[0])
    for i in range(points.shape[0]):
        acc = 0.0
        for t in range(corners.shape[0]):
            ax = corners[t, 0, 0] - points[i, 0]
            ay = corners[t, 0, 1] - points[i, 1]
            az = corners[t, 0, 2] - points[i, 2]
            bx = corners[t, 1, 0] - points[i, 0]
            by = corners[t, 1, 1] - points[i, 1]
            bz = corners[t, 1, 2] - points[i, 2]
            cx = corners[t, 2, 0] - points[i, 0]
            cy = corners[t, 2, 1] - points[i, 1]
            cz = corners[t, 2, 2] - points[i, 2]
            la = math.sqrt(ax * ax + ay * ay + az * az)
            lb = math.sqrt(bx * bx + by * by + bz * bz)
            lc = math.sqrt(cx * cx + cy * cy + cz * cz)
            num = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (ax * cx + ay * cy + az * cz) * lb + (bx * cx + by * cy + bz * cz) * la)
            acc += 2.0 * math.atan2(num, den)
        out[i] = acc / (4.0 * math.pi)
    return out


def _solid_angles(rel: np.ndarray) -> np.ndarray:
    """Signed solid angles (Van Oosterom-Strackee) of triangles with corners ``rel`` seen from 0."""
    a, b, c = rel[:, 0], rel[:, 1], rel[:, 2]
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
           + np.einsum("ij,ij->i", a, c) * lb + np.einsum("ij,ij->i", b, c) * la)
    return 2.0 * np.arctan2(num, den)


def icosphere(subdiv: int) -> ShapeMesh:
    """Unit icosphere with ``10 * 4**subdiv + 2`` vertices."""
    if subdiv < 0:
        raise ValueError("subdiv must be >= 0")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
             [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
             [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    v = np.array(verts, dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array(faces, dtype=np.int64)
    for _ in range(subdiv):
        v, f = _subdivide(v, f, project=True)
    return ShapeMesh(v, f, (np.zeros(3), 1.0))


def _subdivide(v, f, project):
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    if project:
        mids /= np.linalg.norm(mids, axis=1)[:, None]
    nf = len(f)
    m01, m12, m20 = (inv[k * nf:(k + 1) * nf] + len(v) for k in range(3))
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    nfaces = np.concatenate([
        np.stack([a, m01, m20], 1), np.stack([b, m12, m01], 1),
        np.stack([c, m20, m12], 1), np.stack([m01, m12, m20], 1)])
    return np.vstack([v, mids]), nfaces


def read_off(path) -> ShapeMesh:
    """Parse an ASCII OFF file (triangular faces only)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read mesh file {path}: {exc}") from exc
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    tokens = " ".join(ln for ln in lines if ln).split()
    if not tokens or tokens[0] != "OFF":
        raise GeometryError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise GeometryError(f"{path}: only triangular faces are supported")
            faces.append([int(x) for x in tokens[pos + 1:pos + 4]])
            pos += 4
    except (IndexError, ValueError) as exc:
        raise GeometryError(f"{path}: malformed OFF data ({exc})") from exc
    return ShapeMesh(verts, np.array(faces, dtype=np.int64))


def write_off(mesh: ShapeMesh, path) -> None:
    rows = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    rows += [" ".join(repr(float(x)) for x in p) for p in mesh.vertices]
    rows += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    Path(path).write_text("\n".join(rows) + "\n")


def cube_mesh(side: float = 1.0) -> ShapeMesh:
    """Axis-aligned cube centred at the origin (12 triangles, outward)."""
    s = side / 2.0
    v = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = []
    for a, b, c, d in quads:
        f += [[a, b, c], [a, c, d]]
    return ShapeMesh(v, np.array(f, dtype=np.int64))


_SPHERE_RE = re.compile(r"^\s*sphere\s*\(\s*(?:subdiv\s*=\s*)?(\d+)\s*\)\s*$")


def load_shape(ref) -> ShapeMesh:
    """Load ``"sphere(subdiv=n)"`` / ``"sphere(n)"`` or an OFF file path; validated."""
    if isinstance(ref, ShapeMesh):
        return validate_mesh(ref)
    m = _SPHERE_RE.match(str(ref))
    if m:
        return validate_mesh(icosphere(int(m.group(1))))
    if str(ref).strip() == "cube":
        return validate_mesh(cube_mesh())
    return validate_mesh(read_off(ref))


def shape_measures(mesh: ShapeMesh, exact: bool = True) -> tuple[float, float]:
    """Volume (divergence theorem) and surface area.

    Polyhedra are integrated exactly; with a sphere hint (and ``exact``) the
    integrals run over the sphere itself.
    """
    if exact and mesh.sphere is not None:
        pts, nrm, wts = mesh.quadrature(7)
        rel = pts - np.asarray(mesh.sphere[0], dtype=float)
        return float(np.sum(np.einsum("ij,ij->i", rel, nrm) * wts) / 3.0), float(wts.sum())
    # x.nu is constant on a flat face: use the centroid (origin-independent result)
    vol = float(np.sum(np.einsum("ij,ij->i", mesh.centroids, mesh.normals) * mesh.areas) / 3.0)
    return vol, float(mesh.areas.sum())


# --------------------------------------------------------------------------
# Minnaert geometry factor


@numba.njit(cache=True)
def _pair_sum(xp, xn, xw, yp, yw):
    total = 0.0
    for i in range(xp.shape[0]):
        acc = 0.0
        for j in range(yp.shape[0]):
            dx = xp[i, 0] - yp[j, 0]
            dy = xp[i, 1] - yp[j, 1]
            dz = xp[i, 2] - yp[j, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r > 0.0:
                acc += yw[j] * (dx * xn[i, 0] + dy * xn[i, 1] + dz * xn[i, 2]) / r
        total += xw[i] * acc
    return total


@numba.njit(cache=True)
def _near_correction(xp, xn, xw, fp, fn, fw, yp, yw, ptr, idx, q, qf):
    total = 0.0
    for t in range(ptr.shape[0] - 1):
        for k in range(ptr[t], ptr[t + 1]):
            ty = idx[k]
            for j in range(ty * q, (ty + 1) * q):
                coarse = 0.0
                for i in range(t * q, (t + 1) * q):
                    dx = xp[i, 0] - yp[j, 0]
                    dy = xp[i, 1] - yp[j, 1]
                    dz = xp[i, 2] - yp[j, 2]
                    r = math.sqrt(dx * dx + dy * dy + dz * dz)
                    if r > 0.0:
                        coarse += xw[i] * (dx * xn[i, 0] + dy * xn[i, 1] + dz * xn[i, 2]) / r
                fine = 0.0
                for i in range(t * qf, (t + 1) * qf):
                    dx = fp[i, 0] - yp[j, 0]
                    dy = fp[i, 1] - yp[j, 1]
                    dz = fp[i, 2] - yp[j, 2]
                    r = math.sqrt(dx * dx + dy * dy + dz * dz)
                    if r > 0.0:
                        fine += fw[i] * (dx * fn[i, 0] + dy * fn[i, 1] + dz * fn[i, 2]) / r
                total += yw[j] * (fine - coarse)
    return total


def refined_rule(order: int, levels: int):
    """Barycentric rule of the reference triangle split 4-fold ``levels`` times."""
    v = np.eye(3)
    f = np.array([[0, 1, 2]])
    for _ in range(levels):
        v, f = _subdivide(v, f, project=False)
    bary, w = triangle_rule(order)
    pts = np.einsum("qk,tkd->tqd", bary, v[f]).reshape(-1, 3)
    return pts, np.tile(w, len(f)) / len(f)


def mu_shape(mesh: ShapeMesh, quad_order: int = 3, refine_levels: int = 2) -> float:
    """Geometry factor ``(1/|dB|) * int int (x-y).nu(x) / |x-y| dsigma(x) dsigma(y)``.

    The integrand is bounded, so a tensor-product Gauss rule is used everywhere; for
    touching triangle pairs the x-triangle is subdivided ``4**refine_levels``-fold to
    resolve the derivative kink at ``x = y``.
    """
    bary, w = triangle_rule(quad_order)
    tris = np.arange(mesh.n_triangles)
    pts, nrm, wts = mesh._map_rule(bary, w, tris, True)
    fb, fw = refined_rule(quad_order, refine_levels)
    fpts, fnrm, fwts = mesh._map_rule(fb, fw, tris, True)
    near = mesh.touching()
    ptr = np.concatenate([[0], np.cumsum([len(n) for n in near])]).astype(np.int64)
    idx = np.concatenate(near).astype(np.int64)
    total = _pair_sum(pts, nrm, wts, pts, wts)
    total += _near_correction(pts, nrm, wts, fpts, fnrm, fwts, pts, wts, ptr, idx,
                              len(w), len(fw))
    return total / float(wts.sum())


# --------------------------------------------------------------------------
# voxelization


@dataclass(frozen=True, eq=False)
class Voxelization:
    """Cubic cells of side ``h`` covering a shape, with inside-fraction weights.

    ``index`` holds integer grid coordinates; cell centres are
    ``origin + (index + 0.5) * h``.
    """

    h: float
    origin: np.ndarray
    shape: tuple
    index: np.ndarray
    weights: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (self.index + 0.5) * self.h

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @property
    def volume(self) -> float:
        return float(self.weights.sum() * self.h ** 3)

    def scaled(self, s: float) -> "Voxelization":
        return Voxelization(self.h * s, self.origin * s, self.shape, self.index, self.weights)


@numba.njit(cache=True)
def _column_crossings(corners, normals_z, xs, ys, max_cross):
    nx, ny = xs.shape[0], ys.shape[0]
    count = np.zeros((nx, ny), dtype=np.int64)
    zc = np.zeros((nx, ny, max_cross))
    sg = np.zeros((nx, ny, max_cross))
    x0, dxs = xs[0], xs[1] - xs[0] if nx > 1 else 1.0
    y0, dys = ys[0], ys[1] - ys[0] if ny > 1 else 1.0
    for t in range(corners.shape[0]):
        nz = normals_z[t]
        if nz == 0.0:
            continue
        ax, ay, az = corners[t, 0, 0], corners[t, 0, 1], corners[t, 0, 2]
        bx, by, bz = corners[t, 1, 0], corners[t, 1, 1], corners[t, 1, 2]
        cx, cy, cz = corners[t, 2, 0], corners[t, 2, 1], corners[t, 2, 2]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if det == 0.0:
            continue
        i0 = max(int(math.floor((min(ax, bx, cx) - x0) / dxs)), 0)
        i1 = min(int(math.ceil((max(ax, bx, cx) - x0) / dxs)), nx - 1)
        j0 = max(int(math.floor((min(ay, by, cy) - y0) / dys)), 0)
        j1 = min(int(math.ceil((max(ay, by, cy) - y0) / dys)), ny - 1)
        for i in range(i0, i1 + 1):
            px = xs[i]
            for j in range(j0, j1 + 1):
                py = ys[j]
                l1 = ((px - ax) * (cy - ay) - (cx - ax) * (py - ay)) / det
                l2 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / det
                l0 = 1.0 - l1 - l2
                if l0 >= 0.0 and l1 >= 0.0 and l2 >= 0.0:
                    k = count[i, j]
                    if k < max_cross:
                        zc[i, j, k] = l0 * az + l1 * bz + l2 * cz
                        sg[i, j, k] = 1.0 if nz > 0 else -1.0
                    count[i, j] = k + 1
    return count, zc, sg


@numba.njit(cache=True)
def _fill(count, zc, sg, zs):
    nx, ny = count.shape
    nz = zs.shape[0]
    inside = np.zeros((nx, ny, nz), dtype=np.bool_)
    for i in range(nx):
        for j in range(ny):
            m = count[i, j]
            if m == 0:
                continue
            for k in range(nz):
                w = 0.0
                for c in range(m):
                    if zc[i, j, c] > zs[k]:
                        w += sg[i, j, c]
                inside[i, j, k] = w > 0.5
    return inside


def voxelize(mesh: ShapeMesh, h: float, subsample: int = 4, box=None) -> Voxelization:
    """Fill the shape with cubic cells of side ``h``.

    Cells are aligned with the lower corner of ``box`` (default: bounding box).
    Inside-fractions come from ``subsample**3`` points per cell classified by the
    signed crossing count (winding number) along vertical rays, or by the exact
    sphere when the mesh carries one.
    """
    lo, hi = mesh.bounds()
    if mesh.sphere is not None:
        c, rad = np.asarray(mesh.sphere[0], dtype=float), float(mesh.sphere[1])
        lo, hi = c - rad, c + rad
    if box is not None:
        blo, bhi = (np.asarray(b, dtype=float) for b in box)
        if np.any(hi <= blo) or np.any(lo >= bhi):
            raise ResolutionError("shape does not intersect the voxelization box")
        lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
    extent = float(np.min(hi - lo))
    if h > extent / 4.0 + 1e-12:
        raise ResolutionError(f"cell size {h} exceeds bounding-box extent / 4 = {extent / 4}")
    shape = tuple(int(math.ceil((hi[d] - lo[d]) / h - 1e-9)) for d in range(3))
    s = int(subsample)
    off = (np.arange(s) + 0.5) / s
    # tiny irrational shifts keep rays off edges and vertices of axis-aligned meshes
    jitter = np.array([math.pi, math.e, math.sqrt(2.0)]) * 1e-10 * h
    axes = [lo[d] + ((np.arange(shape[d])[:, None] + off[None, :]) * h).reshape(-1) + jitter[d]
            for d in range(3)]
    if mesh.sphere is not None:
        c, rad = np.asarray(mesh.sphere[0], dtype=float), float(mesh.sphere[1])
        inside = ((axes[0][:, None, None] - c[0]) ** 2 + (axes[1][None, :, None] - c[1]) ** 2
                  + (axes[2][None, None, :] - c[2]) ** 2) < rad ** 2
    else:
        count, zc, sg = _column_crossings(mesh.corners, mesh.normals[:, 2].copy(),
                                          axes[0], axes[1], 64)
        if count.max() > 64:
            raise GeometryError("too many ray crossings; mesh is too convoluted for voxelization")
        inside = _fill(count, zc, sg, axes[2])
    frac = inside.reshape(shape[0], s, shape[1], s, shape[2], s).mean(axis=(1, 3, 5))
    idx = np.argwhere(frac > 0)
    if len(idx) == 0:
        raise ResolutionError("voxelization is empty")
    return Voxelization(float(h), lo.astype(float), shape, idx.astype(np.int64),
                        frac[tuple(idx.T)].astype(float))
