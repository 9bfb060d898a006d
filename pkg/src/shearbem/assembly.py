"""Galerkin matrices of the single layer (V) and double layer (K) operators.

Every kernel part is assembled once into "master" matrices on the
discontinuous piecewise linear space DP1 (three corner functions per
triangle). P0 and P1 matrices follow by the sparse restriction
``R_X^T A R_Y`` of :class:`~shearbem.geometry.FunctionSpace`. The value and
normal-derivative kernels are evaluated in the same pass, so one sweep
gives both V and K.

Singular pairs (identical, shared edge, shared vertex) use the
Sauter-Schwab coordinate transformations; other pairs use tensor products
of triangle rules, with a finer rule for near pairs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from numba import prange
from scipy import sparse

from .geometry import FunctionSpace, TriangleMesh, triangle_rule
from .kernel import (
    KernelParams,
    bem_kernel_params,
    diff_sum,
    diff_table,
    gsing_scalar,
    tail_sum,
    tail_table,
)
from .quadrature import (
    QuadratureRule1D,
    composite_graded,
    tail_rule_plain,
    windowed_tail_rule,
)

log = logging.getLogger(__name__)

KIND_SING, KIND_DIFF, KIND_TAIL, KIND_HELMHOLTZ, KIND_LAPLACE = range(5)
_KINDS = {"sing": KIND_SING, "diff": KIND_DIFF, "tail": KIND_TAIL, "helmholtz": KIND_HELMHOLTZ, "laplace": KIND_LAPLACE}

#: Dense storage cap on the number of degrees of freedom.
MAX_DENSE_DOFS = 20000


@dataclass(frozen=True)
class SauterSchwabConfig:
    """Quadrature orders per pair class.

    ``identical``, ``edge`` and ``vertex`` are Gauss points per direction
    of the 4D Sauter-Schwab cubes; ``near`` and ``far`` are degrees of the
    triangle rules whose tensor product integrates regular pairs. A pair
    is near when the gap between bounding spheres is below
    ``theta * max(diam)``. ``regular_only`` treats every pair as regular,
    which suits smooth kernels such as the tail.
    """

    identical: int = 5
    edge: int = 5
    vertex: int = 4
    near: int = 4
    far: int = 3
    theta: float = 1.0
    regular_only: bool = False

    def __post_init__(self):
        if min(self.identical, self.edge, self.vertex, self.near, self.far) < 1:
            raise ValueError("quadrature orders must be >= 1")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")

    def doubled(self) -> "SauterSchwabConfig":
        return SauterSchwabConfig(
            2 * self.identical, 2 * self.edge, 2 * self.vertex, 2 * self.near, 2 * self.far, self.theta, self.regular_only
        )


#: Defaults for the closed-form singular part.
SS_SING = SauterSchwabConfig()
#: The difference kernel is bounded, so lower orders suffice.
SS_DIFF = SauterSchwabConfig(identical=3, edge=3, vertex=3, near=3, far=2)
#: The tail kernel is smooth everywhere.
SS_TAIL = SauterSchwabConfig(near=2, far=2, regular_only=True)


@dataclass
class GalerkinMatrix:
    """Dense (or, for mass matrices, sparse) Galerkin matrix with provenance tags."""

    data: np.ndarray
    row_space: FunctionSpace
    col_space: FunctionSpace
    op: str
    part: str
    params: KernelParams | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other: "GalerkinMatrix") -> "GalerkinMatrix":
        if (other.row_space, other.col_space, other.op) != (self.row_space, self.col_space, self.op):
            raise ValueError("cannot add matrices of different spaces or operators")
        part = "total" if self.part != other.part else self.part
        return GalerkinMatrix(self.data + other.data, self.row_space, self.col_space, self.op, part, self.params)

    def dense(self) -> np.ndarray:
        return self.data.toarray() if sparse.issparse(self.data) else np.asarray(self.data)


# --------------------------------------------------------------------------
# Sauter-Schwab reference rules on T = {0 <= x2 <= x1 <= 1}


def _gauss01(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def _cube(q):
    x, w = _gauss01(q)
    g = np.meshgrid(x, x, x, x, indexing="ij")
    wg = np.meshgrid(w, w, w, w, indexing="ij")
    pts = [a.ravel() for a in g]
    return pts, np.prod([a.ravel() for a in wg], axis=0)


def _pack(parts):
    """Stack (x1, x2, y1, y2, w) blocks into an (n, 5) array."""
    return np.ascontiguousarray(np.concatenate([np.stack(p, axis=1) for p in parts]))


@lru_cache(maxsize=None)
def ss_identical(q: int) -> np.ndarray:
    (xi, e1, e2, e3), w = _cube(q)
    w = w * xi**3 * e1**2 * e2
    maps = [
        ((xi, xi * (1 - e1 + e1 * e2)), (xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        ((xi, xi * e1 * (1 - e2 + e2 * e3)), (xi * (1 - e1 * e2), xi * e1 * (1 - e2))),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * (1 - e2))),
    ]
    parts = []
    for X, Y in maps:
        parts.append((X[0], X[1], Y[0], Y[1], w))
        parts.append((Y[0], Y[1], X[0], X[1], w))
    return _pack(parts)


@lru_cache(maxsize=None)
def ss_edge(q: int) -> np.ndarray:
    """Pairs sharing the edge P0-P1 (same orientation in both triangles)."""
    (xi, e1, e2, e3), w = _cube(q)
    w1 = w * xi**3 * e1**2
    w2 = w1 * e2
    parts = [
        (xi, xi * e1 * e3, xi * (1 - e1 * e2), xi * e1 * (1 - e2), w1),
        (xi, xi * e1, xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3), w2),
        (xi * (1 - e1 * e2), xi * e1 * (1 - e2), xi, xi * e1 * e2 * e3, w2),
        (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3), xi, xi * e1, w2),
        (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3), xi, xi * e1 * e2, w2),
    ]
    return _pack(parts)


@lru_cache(maxsize=None)
def ss_vertex(q: int) -> np.ndarray:
    """Pairs sharing the vertex P0."""
    (xi, e1, e2, e3), w = _cube(q)
    w = w * xi**3 * e2
    return _pack([(xi, xi * e1, xi * e2, xi * e2 * e3, w), (xi * e2, xi * e2 * e3, xi, xi * e1, w)])


@lru_cache(maxsize=None)
def _tri_rule_arrays(order: int):
    r = triangle_rule(order)
    return np.ascontiguousarray(r.barycentric), np.ascontiguousarray(r.weights)


# --------------------------------------------------------------------------
# numba engine


@numba.njit(cache=True)
def _keval(kind, kp, tab, x0, x1, x2, y0, y1, y2, n0, n1, n2):
    d1 = x0 - y0
    d2 = x1 - y1
    d3 = x2 - y2
    s2 = x1 + y1
    if kind == 0:
        v, g1, g2, g3 = gsing_scalar(kp[0], kp[1], kp[2], kp[3] != 0.0, d1, d2, d3, s2)
        return v, g1 * n0 + g2 * n1 + g3 * n2
    if kind == 1:
        return diff_sum(tab, kp[0], d1, d2, d3, s2, n0, n1, n2)
    if kind == 2:
        return tail_sum(tab, d1, d2, d3, s2, n0, n1, n2)
    r = np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
    dn = d1 * n0 + d2 * n1 + d3 * n2
    if kind == 3:
        e = np.exp(-r) / (4.0 * np.pi * r)
        return e + 0j, e * (1.0 + r) / (r * r) * dn + 0j
    e = 1.0 / (4.0 * np.pi * r)
    return e + 0j, e / (r * r) * dn + 0j


@numba.njit(cache=True)
def _ss_block(kind, kp, tab, ref, Pi, Pj, pi, pj, nj, scale, out_v, out_k, ti, tj, want_k):
    """Accumulate one Sauter-Schwab pair; ``pi``/``pj`` map reference to local vertex indices."""
    bv = np.zeros((3, 3), dtype=np.complex128)
    bk = np.zeros((3, 3), dtype=np.complex128)
    for m in range(ref.shape[0]):
        xh1 = ref[m, 0]
        xh2 = ref[m, 1]
        yh1 = ref[m, 2]
        yh2 = ref[m, 3]
        lx0 = 1.0 - xh1
        lx1 = xh1 - xh2
        lx2 = xh2
        ly0 = 1.0 - yh1
        ly1 = yh1 - yh2
        ly2 = yh2
        x0 = lx0 * Pi[pi[0], 0] + lx1 * Pi[pi[1], 0] + lx2 * Pi[pi[2], 0]
        x1 = lx0 * Pi[pi[0], 1] + lx1 * Pi[pi[1], 1] + lx2 * Pi[pi[2], 1]
        x2 = lx0 * Pi[pi[0], 2] + lx1 * Pi[pi[1], 2] + lx2 * Pi[pi[2], 2]
        y0 = ly0 * Pj[pj[0], 0] + ly1 * Pj[pj[1], 0] + ly2 * Pj[pj[2], 0]
        y1 = ly0 * Pj[pj[0], 1] + ly1 * Pj[pj[1], 1] + ly2 * Pj[pj[2], 1]
        y2 = ly0 * Pj[pj[0], 2] + ly1 * Pj[pj[1], 2] + ly2 * Pj[pj[2], 2]
        v, k = _keval(kind, kp, tab, x0, x1, x2, y0, y1, y2, nj[0], nj[1], nj[2])
        w = ref[m, 4]
        lx = (lx0, lx1, lx2)
        ly = (ly0, ly1, ly2)
        for a in range(3):
            for b in range(3):
                c = w * lx[a] * ly[b]
                bv[a, b] += c * v
                if want_k:
                    bk[a, b] += c * k
    for a in range(3):
        for b in range(3):
            out_v[3 * ti + pi[a], 3 * tj + pj[b]] = scale * bv[a, b]
            if want_k:
                out_k[3 * ti + pi[a], 3 * tj + pj[b]] = scale * bk[a, b]


@numba.njit(cache=True)
def _regular_block(kind, kp, tab, bx, wx, by, wy, Pi, Pj, nj, scale, out_v, out_k, ti, tj, want_k):
    bv = np.zeros((3, 3), dtype=np.complex128)
    bk = np.zeros((3, 3), dtype=np.complex128)
    for p in range(bx.shape[0]):
        x0 = bx[p, 0] * Pi[0, 0] + bx[p, 1] * Pi[1, 0] + bx[p, 2] * Pi[2, 0]
        x1 = bx[p, 0] * Pi[0, 1] + bx[p, 1] * Pi[1, 1] + bx[p, 2] * Pi[2, 1]
        x2 = bx[p, 0] * Pi[0, 2] + bx[p, 1] * Pi[1, 2] + bx[p, 2] * Pi[2, 2]
        for q in range(by.shape[0]):
            y0 = by[q, 0] * Pj[0, 0] + by[q, 1] * Pj[1, 0] + by[q, 2] * Pj[2, 0]
            y1 = by[q, 0] * Pj[0, 1] + by[q, 1] * Pj[1, 1] + by[q, 2] * Pj[2, 1]
            y2 = by[q, 0] * Pj[0, 2] + by[q, 1] * Pj[1, 2] + by[q, 2] * Pj[2, 2]
            v, k = _keval(kind, kp, tab, x0, x1, x2, y0, y1, y2, nj[0], nj[1], nj[2])
            w = wx[p] * wy[q]
            for a in range(3):
                for b in range(3):
                    c = w * bx[p, a] * by[q, b]
                    bv[a, b] += c * v
                    if want_k:
                        bk[a, b] += c * k
    for a in range(3):
        for b in range(3):
            out_v[3 * ti + a, 3 * tj + b] = scale * bv[a, b]
            if want_k:
                out_k[3 * ti + a, 3 * tj + b] = scale * bk[a, b]


@numba.njit(parallel=True, cache=True)
def _assemble_dp1(
    kind, kp, tab, corners, tris, normals, areas, centers, radii, diams,
    ref_id, ref_edge, ref_vert, bn, wn, bf, wf, theta, regular_only, want_k, out_v, out_k,
):
    nt = tris.shape[0]
    for i in prange(nt):
        pi = np.empty(3, dtype=np.int64)
        pj = np.empty(3, dtype=np.int64)
        Pi = corners[i]
        for j in range(nt):
            Pj = corners[j]
            nj = normals[j]
            scale = 4.0 * areas[i] * areas[j]
            nshared = 0
            for a in range(3):
                for b in range(3):
                    if tris[i, a] == tris[j, b]:
                        nshared += 1
            if regular_only or nshared == 0:
                dx = centers[i, 0] - centers[j, 0]
                dy = centers[i, 1] - centers[j, 1]
                dz = centers[i, 2] - centers[j, 2]
                gap = np.sqrt(dx * dx + dy * dy + dz * dz) - radii[i] - radii[j]
                if gap < theta * max(diams[i], diams[j]):
                    _regular_block(kind, kp, tab, bn, wn, bn, wn, Pi, Pj, nj, scale, out_v, out_k, i, j, want_k)
                else:
                    _regular_block(kind, kp, tab, bf, wf, bf, wf, Pi, Pj, nj, scale, out_v, out_k, i, j, want_k)
                continue
            if nshared == 3:
                for a in range(3):
                    pi[a] = a
                    pj[a] = a
                _ss_block(kind, kp, tab, ref_id, Pi, Pj, pi, pj, nj, scale, out_v, out_k, i, j, want_k)
            elif nshared == 2:
                # shared vertices first, in the same order in both triangles
                m = 0
                for a in range(3):
                    for b in range(3):
                        if tris[i, a] == tris[j, b]:
                            pi[m] = a
                            pj[m] = b
                            m += 1
                pi[2] = 3 - pi[0] - pi[1]
                pj[2] = 3 - pj[0] - pj[1]
                _ss_block(kind, kp, tab, ref_edge, Pi, Pj, pi, pj, nj, scale, out_v, out_k, i, j, want_k)
            else:
                for a in range(3):
                    for b in range(3):
                        if tris[i, a] == tris[j, b]:
                            pi[0] = a
                            pj[0] = b
                pi[1] = (pi[0] + 1) % 3
                pi[2] = (pi[0] + 2) % 3
                pj[1] = (pj[0] + 1) % 3
                pj[2] = (pj[0] + 2) % 3
                _ss_block(kind, kp, tab, ref_vert, Pi, Pj, pi, pj, nj, scale, out_v, out_k, i, j, want_k)


def _mesh_arrays(mesh: TriangleMesh):
    c = mesh.centroids
    radii = np.linalg.norm(mesh.corners - c[:, None, :], axis=2).max(axis=1)
    return (
        np.ascontiguousarray(mesh.corners),
        np.ascontiguousarray(mesh.triangles),
        np.ascontiguousarray(mesh.normals),
        np.ascontiguousarray(mesh.areas),
        np.ascontiguousarray(c),
        radii,
        np.ascontiguousarray(mesh.diameters),
    )


def _kernel_vector(params: KernelParams | None):
    if params is None:
        return np.zeros(4)
    return np.array([params.pe, params.omega, params.tau0, 1.0 if params.shear else 0.0])


def check_dense_size(n: int, cap: int = MAX_DENSE_DOFS) -> None:
    if n > cap:
        raise MemoryError(f"{n} degrees of freedom exceed the dense storage cap {cap}")


def assemble_dp1(
    mesh: TriangleMesh,
    kind: str,
    params: KernelParams | None = None,
    ss_config: SauterSchwabConfig | None = None,
    time_rule: QuadratureRule1D | None = None,
    want_k: bool = True,
    scale: float = 1.0,
):
    """DP1 master matrices ``(V, K)`` for one kernel part.

    ``kind`` is ``"sing"``, ``"diff"``, ``"tail"`` (all need ``params``;
    the last two a ``time_rule``), ``"helmholtz"`` or ``"laplace"``.
    ``K`` is ``None`` when ``want_k`` is false.
    """
    code = _KINDS[kind]
    if ss_config is None:
        ss_config = {KIND_DIFF: SS_DIFF, KIND_TAIL: SS_TAIL}.get(code, SS_SING)
    n = 3 * mesh.n_triangles
    check_dense_size(n)
    tab = np.zeros((1, 7))
    if code in (KIND_DIFF, KIND_TAIL):
        if params is None or time_rule is None:
            raise ValueError(f"{kind} part needs kernel params and a time rule")
        if code == KIND_TAIL and params.omega > 0 and not time_rule.descriptor.startswith("windowed"):
            raise ValueError("the oscillatory tail needs a windowed time rule")
        if code == KIND_DIFF and not params.shear:
            z = np.zeros((n, n), dtype=complex)
            return z, (z.copy() if want_k else None)
        table = diff_table if code == KIND_DIFF else tail_table
        tab = table(params, time_rule.nodes, time_rule.weights)
    elif code == KIND_SING and params is None:
        raise ValueError("singular part needs kernel params")
    bn, wn = _tri_rule_arrays(ss_config.near)
    bf, wf = _tri_rule_arrays(ss_config.far)
    out_v = np.zeros((n, n), dtype=complex)
    out_k = np.zeros((n, n), dtype=complex) if want_k else np.zeros((1, 1), dtype=complex)
    _assemble_dp1(
        code, _kernel_vector(params), tab, *_mesh_arrays(mesh),
        ss_identical(ss_config.identical), ss_edge(ss_config.edge), ss_vertex(ss_config.vertex),
        bn, wn, bf, wf, float(ss_config.theta), bool(ss_config.regular_only), bool(want_k), out_v, out_k,
    )
    if scale != 1.0:
        out_v *= scale
        if want_k:
            out_k *= scale
    return out_v, (out_k if want_k else None)


def restrict(master: np.ndarray, row_space: FunctionSpace, col_space: FunctionSpace) -> np.ndarray:
    """``R_row^T A R_col`` for a DP1 master matrix."""
    a = master
    if col_space.kind != "DP1":
        a = np.asarray((col_space.to_dp1.T @ a.T).T)
    if row_space.kind != "DP1":
        a = np.asarray(row_space.to_dp1.T @ a)
    return np.ascontiguousarray(a)


def _wrap(master, row_space, col_space, op, part, params):
    if row_space.mesh is not col_space.mesh:
        raise ValueError("row and column spaces must live on the same mesh")
    return GalerkinMatrix(restrict(master, row_space, col_space), row_space, col_space, op, part, params)


def _check_op(op_tag):
    if op_tag not in ("V", "K"):
        raise ValueError("op_tag must be 'V' or 'K'")


def assemble_sing(mesh, row_space, col_space, params: KernelParams, op_tag: str = "V",
                  ss_config: SauterSchwabConfig = SS_SING, scale: float = 1.0) -> GalerkinMatrix:
    """Galerkin matrix of the closed-form singular kernel part."""
    _check_op(op_tag)
    v, k = assemble_dp1(mesh, "sing", params, ss_config, want_k=op_tag == "K", scale=scale)
    return _wrap(v if op_tag == "V" else k, row_space, col_space, op_tag, "sing", params)


def assemble_diff(mesh, row_space, col_space, params: KernelParams, op_tag: str, time_rule: QuadratureRule1D,
                  ss_config: SauterSchwabConfig = SS_DIFF, scale: float = 1.0) -> GalerkinMatrix:
    """Galerkin matrix of the time-integrated difference kernel."""
    _check_op(op_tag)
    v, k = assemble_dp1(mesh, "diff", params, ss_config, time_rule, want_k=op_tag == "K", scale=scale)
    return _wrap(v if op_tag == "V" else k, row_space, col_space, op_tag, "diff", params)


def assemble_tail(mesh, row_space, col_space, params: KernelParams, op_tag: str, tail_rule: QuadratureRule1D,
                  ss_config: SauterSchwabConfig = SS_TAIL, scale: float = 1.0) -> GalerkinMatrix:
    """Galerkin matrix of the time-integrated tail ``(tau0, inf)``."""
    _check_op(op_tag)
    v, k = assemble_dp1(mesh, "tail", params, ss_config, tail_rule, want_k=op_tag == "K", scale=scale)
    return _wrap(v if op_tag == "V" else k, row_space, col_space, op_tag, "tail", params)


def assemble_helmholtz_metric(mesh, space: FunctionSpace | None = None,
                              ss_config: SauterSchwabConfig = SS_SING) -> GalerkinMatrix:
    """Single layer matrix of exp(-r)/(4 pi r), the reference metric for density errors."""
    space = space or FunctionSpace(mesh, "P0")
    v, _ = assemble_dp1(mesh, "helmholtz", None, ss_config, want_k=False)
    # the kernel is symmetric; the pair rules are not, so average the two triangles
    v = 0.5 * (v + v.T)
    return _wrap(v, space, space, "Helmholtz-V", "total", None)


def assemble_mass(row_space: FunctionSpace, col_space: FunctionSpace) -> GalerkinMatrix:
    """Sparse mass matrix ``<phi_j, psi_i>`` between two spaces on one mesh."""
    mesh = row_space.mesh
    if col_space.mesh is not mesh:
        raise ValueError("spaces live on different meshes")
    # local DP1 mass: area/12 * [[2,1,1],[1,2,1],[1,1,2]]
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    nt = mesh.n_triangles
    blocks = mesh.areas[:, None, None] * local[None]
    rows = (3 * np.arange(nt))[:, None, None] + np.arange(3)[None, :, None]
    cols = (3 * np.arange(nt))[:, None, None] + np.arange(3)[None, None, :]
    m = sparse.csr_matrix(
        (blocks.ravel(), (np.broadcast_to(rows, blocks.shape).ravel(), np.broadcast_to(cols, blocks.shape).ravel())),
        shape=(3 * nt, 3 * nt),
    )
    data = (row_space.to_dp1.T @ m @ col_space.to_dp1).tocsr()
    return GalerkinMatrix(data, row_space, col_space, "mass", "total")


# --------------------------------------------------------------------------
# complete operators


@dataclass(frozen=True)
class TimeRules:
    """Time rules for the difference part and the tail."""

    diff: QuadratureRule1D
    tail: QuadratureRule1D


def production_rules(pe: float, omega: float, tau0: float = 1.0, *, sigma: float = 0.17, nu: int = 2, N: int = 7,
                     tail_n: int = 24, tail_exponent: float = 0.5, L: float | None = None, c: float = 0.5,
                     points_per_unit: float = 1.0, strength: float = 1.0) -> TimeRules:
    """Time rules sized so their error sits well below the discretization error.

    The difference part uses a graded composite rule on ``(0, tau0)``. The
    stationary tail uses plain Gauss in ``u = tau^{-1/2}``, in which the
    shear kernel is smooth. The oscillatory tail is windowed with
    ``L = clamp(64 / omega_s, 32, 256) * tau0``, where ``omega_s`` is the
    frequency of the scaled kernel. Its truncation error is set by the
    window, so a budget of one point per unit length (panels then limited
    by the phase cap ``2 / omega_s``) loses nothing.
    """
    params, _ = bem_kernel_params(pe, omega, tau0)
    diff = composite_graded(sigma, nu, N, 0.0, tau0)
    if params.omega == 0:
        tail = tail_rule_plain(tau0, tail_n, tail_exponent)
    else:
        if L is None:
            L = min(256.0, max(32.0, 64.0 / params.omega)) * tau0
        tail = windowed_tail_rule(tau0, L, c, int(math.ceil(points_per_unit * L)), params.omega, strength)
    return TimeRules(diff, tail)


@dataclass(frozen=True)
class AssemblyConfig:
    sing: SauterSchwabConfig = SS_SING
    diff: SauterSchwabConfig = SS_DIFF
    tail: SauterSchwabConfig = SS_TAIL


class BoundaryOperators:
    """Total V and K of the physical kernel on a mesh, kept as DP1 masters.

    ``pe`` and ``omega`` are physical; the scaled-time kernel and its
    prefactor come from :func:`~shearbem.kernel.bem_kernel_params`.
    """

    def __init__(self, mesh: TriangleMesh, pe: float, omega: float, rules: TimeRules, tau0: float = 1.0,
                 config: AssemblyConfig = AssemblyConfig(), helmholtz: bool = False):
        self.mesh = mesh
        self.pe = pe
        self.omega = omega
        self.params, self.scale = bem_kernel_params(pe, omega, tau0)
        self.rules = rules
        v, k = assemble_dp1(mesh, "sing", self.params, config.sing, scale=self.scale)
        if self.params.shear:
            dv, dk = assemble_dp1(mesh, "diff", self.params, config.diff, rules.diff, scale=self.scale)
            v += dv
            k += dk
            del dv, dk
        tv, tk = assemble_dp1(mesh, "tail", self.params, config.tail, rules.tail, scale=self.scale)
        v += tv
        k += tk
        del tv, tk
        self.V_dp1 = v
        self.K_dp1 = k
        self._cache = {}

    def V(self, row: FunctionSpace, col: FunctionSpace) -> GalerkinMatrix:
        return self._get("V", row, col)

    def K(self, row: FunctionSpace, col: FunctionSpace) -> GalerkinMatrix:
        return self._get("K", row, col)

    def _get(self, op, row, col):
        key = (op, row.kind, col.kind)
        if key not in self._cache:
            master = self.V_dp1 if op == "V" else self.K_dp1
            self._cache[key] = _wrap(master, row, col, op, "total", self.params)
        return self._cache[key]


# --------------------------------------------------------------------------
# export


_MAGIC = b"SBEMMAT1"


def save_matrix(path, matrix) -> None:
    """Binary dump: 8-byte magic, int64 rows and cols, row-major complex128 entries."""
    a = np.ascontiguousarray(matrix.dense() if isinstance(matrix, GalerkinMatrix) else matrix, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array(a.shape, dtype="<i8").tobytes())
        fh.write(a.astype("<c16").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a matrix dump")
        shape = tuple(np.frombuffer(fh.read(16), dtype="<i8"))
        return np.frombuffer(fh.read(), dtype="<c16").reshape(shape).copy()


def save_matrix_csv(path, matrix) -> None:
    """Debug CSV: row, col, re, im for every entry."""
    a = matrix.dense() if isinstance(matrix, GalerkinMatrix) else np.asarray(matrix)
    i, j = np.indices(a.shape)
    with open(path, "w") as fh:
        fh.write("# schema=v1\nrow,col,re,im\n")
        for r, c, v in zip(i.ravel(), j.ravel(), a.ravel()):
            fh.write(f"{r},{c},{v.real:.17g},{v.imag:.17g}\n")


def set_threads(n: int | None) -> None:
    """Set the number of assembly threads (bounded by numba's configured maximum)."""
    if n:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


__all__ = [
    "AssemblyConfig", "BoundaryOperators", "GalerkinMatrix", "SauterSchwabConfig", "TimeRules",
    "assemble_diff", "assemble_dp1", "assemble_helmholtz_metric", "assemble_mass", "assemble_sing",
    "assemble_tail", "load_matrix", "production_rules", "restrict", "save_matrix", "save_matrix_csv", "set_threads",
    "ss_edge", "ss_identical", "ss_vertex",
]
