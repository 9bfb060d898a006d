"""Closed triangulated surfaces, trace spaces and triangle quadrature.

Points are plain ``(3,)`` float arrays; a mesh is a pair of arrays
``vertices (nV, 3)`` and ``triangles (nT, 3)``. Triangles are oriented so
that their normals point out of the bounded interior domain.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.special import roots_jacobi, roots_legendre

#: Refinement levels above this raise instead of exhausting memory.
MAX_LEVEL = 8


class MeshError(ValueError):
    """Raised for invalid meshes and malformed mesh files."""


@dataclass(frozen=True)
class RefinementInfo:
    """Parent relations of a uniformly refined mesh.

    ``vertex_parents[k]`` holds the two coarse vertices whose midpoint is
    fine vertex ``k`` (both equal to ``k`` for inherited vertices);
    ``triangle_parent[t]`` is the coarse triangle containing fine triangle
    ``t``.
    """

    n_coarse_vertices: int
    n_coarse_triangles: int
    vertex_parents: np.ndarray
    triangle_parent: np.ndarray


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Closed, consistently oriented triangle surface.

    ``sphere_id`` tags vertices that lie on a registered sphere
    ``spheres[k] = (center, radius)`` so refinement can project new
    vertices back onto it (-1 means flat geometry).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    sphere_id: np.ndarray | None = None
    spheres: tuple = ()
    refinement: RefinementInfo | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.sphere_id is None:
            object.__setattr__(self, "sphere_id", np.full(len(v), -1, dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (nT, 3, 3)."""
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

    @cached_property
    def diameters(self) -> np.ndarray:
        c = self.corners
        e = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (nE, 2)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def signed_volume(self) -> float:
        """Enclosed volume from the divergence theorem (positive when normals point out)."""
        return float(np.sum(self.centroids * self.normals, axis=1) @ self.areas / 3.0)

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label per triangle."""
        t = self.triangles
        rows = np.repeat(np.arange(len(t)), 3)
        adj = sparse.csr_matrix(
            (np.ones(rows.size), (rows, t.ravel())), shape=(len(t), self.n_vertices)
        )
        _, labels = connected_components(adj @ adj.T, directed=False)
        return labels

    def validate(self) -> None:
        """Check watertightness, orientation, non-degeneracy and outward normals."""
        if self.n_triangles == 0:
            raise MeshError("empty mesh")
        scale = max(float(np.ptp(self.vertices, axis=0).max()), 1.0)
        if np.any(self.areas <= 1e-14 * scale**2):
            raise MeshError("degenerate triangle")
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise MeshError("open surface: every edge must be shared by exactly two triangles")
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        if np.any(dcounts != 1):
            raise MeshError("inconsistent orientation")
        labels = self.components
        vol = np.sum(self.centroids * self.normals, axis=1) * self.areas / 3.0
        for k in np.unique(labels):
            if vol[labels == k].sum() <= 0:
                raise MeshError("normals point into the interior")


def _check_level(level: int) -> int:
    level = int(level)
    if level < 0:
        raise MeshError("level must be non-negative")
    if level > MAX_LEVEL:
        raise MeshError(f"level {level} exceeds the configured cap {MAX_LEVEL}")
    return level


def generate_cube_mesh(half_width: float = 1.0, level: int = 0) -> TriangleMesh:
    """Boundary of ``[-w, w]^3`` with every face split into a ``2^level`` grid of squares."""
    if half_width <= 0:
        raise MeshError("half_width must be positive")
    n = 2 ** _check_level(level)
    index: dict[tuple[int, int, int], int] = {}
    verts = []
    tris = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    # tangent axes (u, v) with e_u x e_v = +e_axis
    tangents = {0: (1, 2), 1: (2, 0), 2: (0, 1)}
    for axis in range(3):
        for side in (0, n):
            u, v = tangents[axis]
            if side == 0:
                u, v = v, u
            for i, j in itertools.product(range(n), range(n)):
                quad = []
                for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = [0, 0, 0]
                    p[axis] = side
                    p[u] = i + di
                    p[v] = j + dj
                    quad.append(vid(tuple(p)))
                a, b, c, d = quad
                tris.append((a, b, c))
                tris.append((a, c, d))
    v = -half_width + 2.0 * half_width * np.asarray(verts, dtype=float) / n
    mesh = TriangleMesh(v, np.asarray(tris))
    mesh.validate()
    return mesh


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def generate_sphere_mesh(radius: float = 1.0, center=(0.0, 0.0, 0.0), level: int = 0) -> TriangleMesh:
    """Icosphere: icosahedron refined ``level`` times with vertices projected to the sphere."""
    if radius <= 0:
        raise MeshError("radius must be positive")
    level = _check_level(level)
    center = np.asarray(center, dtype=float)
    v, f = _icosahedron()
    mesh = TriangleMesh(
        center + radius * v, f, sphere_id=np.zeros(len(v), dtype=np.int64), spheres=((center, float(radius)),)
    )
    for _ in range(level):
        mesh = refine(mesh)
    mesh.validate()
    return mesh


def generate_two_balls_mesh(distance: float, radius: float = 1.0, level: int = 0) -> TriangleMesh:
    """Disjoint union of two icospheres centred at ``(+-distance/2, 0, 0)``."""
    if distance <= 2 * radius:
        raise MeshError("balls overlap")
    a = generate_sphere_mesh(radius, (-distance / 2, 0.0, 0.0), level)
    b = generate_sphere_mesh(radius, (distance / 2, 0.0, 0.0), level)
    return merge_meshes(a, b)


def merge_meshes(*meshes: TriangleMesh) -> TriangleMesh:
    verts, tris, sid, spheres = [], [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        ids = m.sphere_id.copy()
        ids[ids >= 0] += len(spheres)
        sid.append(ids)
        spheres.extend(m.spheres)
        offset += m.n_vertices
    mesh = TriangleMesh(np.vstack(verts), np.vstack(tris), np.concatenate(sid), tuple(spheres))
    mesh.validate()
    return mesh


def refine(mesh: TriangleMesh, project: bool = True) -> TriangleMesh:
    """Split every triangle into four through its edge midpoints.

    Midpoints are shared by edge index, so no floating-point welding is
    involved. Midpoints of edges whose endpoints lie on the same
    registered sphere are projected onto it when ``project`` is set.
    Children of coarse triangle ``t`` are fine triangles ``4t .. 4t+3``.
    """
    nv = mesh.n_vertices
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    edges, inverse = np.unique(e, axis=0, return_inverse=True)
    inverse = inverse.reshape(3, -1).T + nv  # midpoint ids of edges (01, 12, 20)
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    sid = mesh.sphere_id
    mid_sid = np.where(sid[edges[:, 0]] == sid[edges[:, 1]], sid[edges[:, 0]], -1)
    if project:
        for k, (c, r) in enumerate(mesh.spheres):
            sel = mid_sid == k
            d = mid[sel] - c
            mid[sel] = c + r * d / np.linalg.norm(d, axis=1)[:, None]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = inverse[:, 0], inverse[:, 1], inverse[:, 2]
    children = np.stack(
        [
            np.stack([a, ab, ca], 1),
            np.stack([ab, b, bc], 1),
            np.stack([ca, bc, c], 1),
            np.stack([ab, bc, ca], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parents = np.concatenate([np.stack([np.arange(nv)] * 2, 1), edges])
    info = RefinementInfo(nv, mesh.n_triangles, parents, np.repeat(np.arange(mesh.n_triangles), 4))
    return TriangleMesh(
        np.vstack([mesh.vertices, mid]),
        children,
        np.concatenate([sid, mid_sid]),
        mesh.spheres,
        info,
    )


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OFF file with round-trip precision."""
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges)}"]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII OFF triangle mesh and validate it."""
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or rows[0][0] != "OFF":
        raise MeshError("malformed header: expected 'OFF'")
    head = rows[0][1:] or (rows[1] if len(rows) > 1 else [])
    body = rows[1:] if rows[0][1:] else rows[2:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise MeshError("malformed header: missing vertex/face counts") from None
    if len(body) < nv + nf:
        raise MeshError("malformed file: fewer lines than announced")
    try:
        verts = np.array([[float(s) for s in r[:3]] for r in body[:nv]])
    except ValueError:
        raise MeshError("malformed vertex line") from None
    if verts.shape != (nv, 3):
        raise MeshError("malformed vertex line")
    faces = []
    for r in body[nv : nv + nf]:
        if int(r[0]) != 3 or len(r) < 4:
            raise MeshError("non-triangular face")
        f = [int(s) for s in r[1:4]]
        if min(f) < 0 or max(f) >= nv:
            raise MeshError("index out of range")
        faces.append(f)
    mesh = TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    mesh.validate()
    return mesh


# --------------------------------------------------------------------------
# trace spaces


class FunctionSpace:
    """Piecewise constant (P0) or continuous piecewise linear (P1) functions.

    Both spaces, and the discontinuous linears ("DP1", used internally for
    data and for assembly), are represented through the sparse map
    ``to_dp1`` from space coefficients to per-triangle corner values, so a
    DP1 Galerkin matrix ``A`` restricts to ``to_dp1.T @ A @ to_dp1``.
    """

    KINDS = ("P0", "P1", "DP1")

    def __init__(self, mesh: TriangleMesh, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown space {kind!r}")
        self.mesh = mesh
        self.kind = kind

    def __repr__(self):
        return f"FunctionSpace({self.kind}, ndof={self.ndof})"

    def __eq__(self, other):
        return isinstance(other, FunctionSpace) and other.mesh is self.mesh and other.kind == self.kind

    def __hash__(self):
        return hash((id(self.mesh), self.kind))

    @property
    def ndof(self) -> int:
        return {"P0": self.mesh.n_triangles, "P1": self.mesh.n_vertices, "DP1": 3 * self.mesh.n_triangles}[self.kind]

    @cached_property
    def to_dp1(self) -> sparse.csr_matrix:
        nt = self.mesh.n_triangles
        rows = np.arange(3 * nt)
        if self.kind == "P0":
            cols = np.repeat(np.arange(nt), 3)
        elif self.kind == "P1":
            cols = self.mesh.triangles.ravel()
        else:
            cols = rows
        return sparse.csr_matrix((np.ones(3 * nt), (rows, cols)), shape=(3 * nt, self.ndof))

    def evaluate(self, coefficients, bary: np.ndarray) -> np.ndarray:
        """Values at barycentric points ``bary (k, 3)`` of every triangle, shape (nT, k)."""
        corner = (self.to_dp1 @ np.asarray(coefficients)).reshape(-1, 3)
        return corner @ np.asarray(bary).T

    def project(self, func, order: int = 8) -> np.ndarray:
        """L2 projection of ``func(points, normals) -> values`` sampled at quadrature nodes."""
        from .assembly import assemble_mass

        rhs = sample_inner_products(self, func, order)
        m = assemble_mass(self, self).data
        if self.kind == "P0":
            return rhs / m.diagonal()
        return sparse.linalg.spsolve(sparse.csc_matrix(m), rhs)


def sample_inner_products(space: FunctionSpace, func, order: int = 8) -> np.ndarray:
    """``<func, basis_i>`` for every basis function, with ``func`` sampled at quadrature nodes."""
    mesh = space.mesh
    rule = triangle_rule(order)
    bary = rule.barycentric
    pts = np.einsum("kj,tjd->tkd", bary, mesh.corners)
    nrm = np.broadcast_to(mesh.normals[:, None, :], pts.shape)
    vals = np.asarray(func(pts.reshape(-1, 3), nrm.reshape(-1, 3))).reshape(pts.shape[:2])
    local = 2.0 * mesh.areas[:, None] * np.einsum("k,tk,kj->tj", rule.weights, vals, bary)
    return space.to_dp1.T @ local.ravel()


def surface_points(mesh: TriangleMesh, order: int):
    """Quadrature nodes, weights and per-node normals over the whole mesh."""
    rule = triangle_rule(order)
    pts = np.einsum("kj,tjd->tkd", rule.barycentric, mesh.corners).reshape(-1, 3)
    w = (2.0 * mesh.areas[:, None] * rule.weights[None, :]).ravel()
    nrm = np.repeat(mesh.normals, len(rule.weights), axis=0)
    return pts, w, nrm


# --------------------------------------------------------------------------
# triangle quadrature on the reference triangle (0,0), (1,0), (0,1)


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def barycentric(self) -> np.ndarray:
        """Nodes as barycentric coordinates (1 - s - t, s, t)."""
        s, t = self.points[:, 0], self.points[:, 1]
        return np.stack([1.0 - s - t, s, t], axis=1)


def _orbit(a: float, w: float):
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)], [w] * 3


def _symmetric_rule(order: int):
    if order == 1:
        return [(1 / 3, 1 / 3)], [0.5]
    if order == 2:
        return _orbit(1 / 6, 1 / 6)
    if order in (3, 4):
        p1, w1 = _orbit(0.44594849091596488632, 0.22338158967801146570 / 2)
        p2, w2 = _orbit(0.091576213509770743460, 0.10995174365532186764 / 2)
        return p1 + p2, w1 + w2
    if order == 5:
        s = np.sqrt(15.0)
        p1, w1 = _orbit((6 - s) / 21, (155 - s) / 2400)
        p2, w2 = _orbit((6 + s) / 21, (155 + s) / 2400)
        return [(1 / 3, 1 / 3)] + p1 + p2, [9 / 80] + w1 + w2
    return None


def triangle_rule(order: int) -> TriangleRule:
    """Positive rule exact for polynomials of total degree ``<= order``.

    Low orders use symmetric rules; higher orders use the collapsed
    (Stroud conical) product of Gauss-Jacobi and Gauss-Legendre points.
    """
    order = int(order)
    if order < 1 or order > 40:
        raise ValueError(f"unsupported triangle rule order {order}")
    sym = _symmetric_rule(order)
    if sym is not None:
        pts, w = sym
        return TriangleRule(np.array(pts, dtype=float), np.array(w, dtype=float), order)
    n = order // 2 + 1
    xj, wj = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
    xl, wl = roots_legendre(n)
    u = (xj + 1.0) / 2.0
    wu = wj / 4.0
    v = (xl + 1.0) / 2.0
    wv = wl / 2.0
    s = (u[:, None] * np.ones_like(v)[None, :]).ravel()
    t = ((1.0 - u)[:, None] * v[None, :]).ravel()
    w = (wu[:, None] * wv[None, :]).ravel()
    return TriangleRule(np.stack([s, t], axis=1), w, order)
