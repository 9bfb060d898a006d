"""Boundary integral formulations, dense solves and potential evaluation.

Sign conventions. ``n`` is the unit normal pointing out of the bounded
domain ``Omega_i``; the conormal derivative is ``q = n . (grad Psi - v Psi)``
and ``g`` is the Dirichlet trace. With ``S``/``D`` the single/double layer
potentials (the double layer kernel is ``d Ghat / d n_y``),

    interior:  Psi = S q - D g,       exterior:  Psi = D g - S q,

and the boundary equations are

    ============  ========================  ========================
    kind          interior                  exterior
    ============  ========================  ========================
    SL-direct     V q = (+M/2 + K) g        V q = (-M/2 + K) g
    DL-direct     (+M/2 + K) g = V q        (-M/2 + K) g = V q
    SL-indirect   V lam = g, Psi = S lam    same
    DL-indirect   (-M/2 + K) phi = g        (+M/2 + K) phi = g
    ============  ========================  ========================

Legal discretizations: SL-direct and SL-indirect in P0, DL-indirect in P1,
DL-direct in P0 or P1 (trial and test space are equal).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np
import scipy.linalg
from numba import prange

from .assembly import BoundaryOperators, assemble_mass
from .geometry import FunctionSpace, TriangleMesh, sample_inner_products as sampled_inner_products, triangle_rule
from .kernel import bem_kernel_params, diff_sum, diff_table, gsing_scalar, tail_sum, tail_table

log = logging.getLogger(__name__)

KINDS = ("SL-direct", "DL-direct", "SL-indirect", "DL-indirect")
SIDES = ("interior", "exterior")
LEGAL_SPACES = {"SL-direct": ("P0",), "DL-direct": ("P0", "P1"), "SL-indirect": ("P0",), "DL-indirect": ("P1",)}


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Formulation:
    kind: str
    side: str = "interior"
    space: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown formulation {self.kind!r}")
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        space = self.space or LEGAL_SPACES[self.kind][0]
        if space not in LEGAL_SPACES[self.kind]:
            raise ValueError(f"{self.kind} cannot be discretized in {space}")
        object.__setattr__(self, "space", space)

    @property
    def problem(self) -> str:
        """``"neumann"`` for DL-direct, ``"dirichlet"`` otherwise."""
        return "neumann" if self.kind == "DL-direct" else "dirichlet"

    @property
    def direct(self) -> bool:
        return self.kind.endswith("-direct")

    @property
    def label(self) -> str:
        return f"{self.kind}/{self.side}/{self.space}"


@dataclass
class BoundaryDensity:
    """Solution coefficients together with their space and meaning.

    ``meaning`` is ``"q"`` (conormal derivative), ``"g"`` (Dirichlet trace),
    ``"lambda"`` (single layer density) or ``"phi"`` (double layer density).
    """

    coefficients: np.ndarray
    space: FunctionSpace
    meaning: str

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError("coefficient count does not match the space")

    def dp1(self) -> np.ndarray:
        return self.space.to_dp1 @ self.coefficients


# --------------------------------------------------------------------------
# analytic solutions


@dataclass(frozen=True)
class AnalyticSolution:
    """Exact solution with value and gradient callables on ``(n, 3)`` arrays."""

    value: Callable
    gradient: Callable
    descriptor: str

    def dirichlet(self, points, normals=None):
        return self.value(points)

    def conormal(self, pe: float) -> Callable:
        """Boundary function ``q = n . (grad Psi - v Psi)`` for shear rate ``pe``."""

        def q(points, normals):
            grad = self.gradient(points)
            val = self.value(points)
            return np.sum(normals * grad, axis=1) - pe * points[:, 1] * normals[:, 0] * val

        return q


def analytic_harmonic_poly() -> AnalyticSolution:
    """yz + y^2 - z^2 + y^3 z - y z^3, harmonic and independent of x."""

    def value(p):
        p = np.atleast_2d(p)
        y, z = p[:, 1], p[:, 2]
        return (y * z + y**2 - z**2 + y**3 * z - y * z**3).astype(complex)

    def gradient(p):
        p = np.atleast_2d(p)
        y, z = p[:, 1], p[:, 2]
        gy = z + 2 * y + 3 * y**2 * z - z**3
        gz = y - 2 * z + y**3 - 3 * y * z**2
        return np.stack([np.zeros_like(y), gy, gz], axis=1).astype(complex)

    return AnalyticSolution(value, gradient, "harmonic polynomial yz+y^2-z^2+y^3z-yz^3")


def analytic_plane_wave(omega: float) -> AnalyticSolution:
    """exp(-kappa x2) with kappa = sqrt(i omega); solves i omega Psi - Laplace Psi = 0."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    kappa = np.sqrt(omega) * np.exp(1j * np.pi / 4)

    def value(p):
        return np.exp(-kappa * np.atleast_2d(p)[:, 1])

    def gradient(p):
        p = np.atleast_2d(p)
        v = np.exp(-kappa * p[:, 1])
        return np.stack([np.zeros_like(v), -kappa * v, np.zeros_like(v)], axis=1)

    return AnalyticSolution(value, gradient, f"plane wave exp(-sqrt(i*{omega:g}) x2)")


def colloid_flux(pe: float) -> Callable:
    """Boundary data ``-Pe n1 x2`` of the sheared hard-sphere problem."""
    return lambda points, normals: -pe * normals[:, 0] * points[:, 1] + 0j


# --------------------------------------------------------------------------
# boundary data


def dp1_projection(mesh: TriangleMesh, func: Callable, order: int = 8) -> np.ndarray:
    """Element-wise L2 projection of ``func(points, normals)`` onto DP1 (corner values)."""
    rule = triangle_rule(order)
    bary = rule.barycentric
    pts = np.einsum("kj,tjd->tkd", bary, mesh.corners)
    nrm = np.broadcast_to(mesh.normals[:, None, :], pts.shape)
    vals = np.asarray(func(pts.reshape(-1, 3), nrm.reshape(-1, 3)), dtype=complex).reshape(pts.shape[:2])
    rhs = np.einsum("k,tk,kj->tj", rule.weights, vals, bary)
    # reference mass matrix of the barycentric basis (area 1/2)
    local = (np.ones((3, 3)) + np.eye(3)) / 24.0
    return np.linalg.solve(local, rhs.T).T.ravel()


@dataclass
class BoundaryData:
    """Dirichlet or conormal boundary data as a callable ``f(points, normals)``."""

    func: Callable
    kind: str  # "dirichlet" or "neumann"
    order: int = 8

    def dp1(self, mesh):
        return dp1_projection(mesh, self.func, self.order)


def _spaces(form: Formulation, mesh):
    sp = FunctionSpace(mesh, form.space)
    return sp, FunctionSpace(mesh, "DP1")


def build_rhs(form: Formulation, ops: BoundaryOperators, data: BoundaryData) -> np.ndarray:
    """Right-hand side of the discrete boundary equation."""
    if data.kind != form.problem:
        raise ValueError(f"{form.kind} needs {form.problem} data, got {data.kind}")
    mesh = ops.mesh
    sp, dp1 = _spaces(form, mesh)
    if form.kind == "SL-direct":
        sign = 0.5 if form.side == "interior" else -0.5
        g = data.dp1(mesh)
        return sign * sampled_inner_products(sp, data.func, data.order) + ops.K(sp, dp1).data @ g
    if form.kind == "DL-direct":
        return ops.V(sp, dp1).data @ data.dp1(mesh)
    return sampled_inner_products(sp, data.func, data.order)


def build_system(form: Formulation, ops: BoundaryOperators) -> np.ndarray:
    """System matrix in the trial space of the formulation."""
    sp, _ = _spaces(form, ops.mesh)
    if form.kind in ("SL-direct", "SL-indirect"):
        return ops.V(sp, sp).data.copy()
    m = assemble_mass(sp, sp).dense()
    if form.kind == "DL-direct":
        sign = 0.5 if form.side == "interior" else -0.5
    else:
        sign = -0.5 if form.side == "interior" else 0.5
    return sign * m + ops.K(sp, sp).data


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    growth: float
    rcond: float


def dense_solve(A, b, *, growth_limit: float = 1e8, rcond_limit: float = 1e-12) -> SolveResult:
    """LU with partial pivoting; warns on large pivot growth or near singularity."""
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("need a square matrix and a matching right-hand side")
    dtype = np.result_type(A, b, np.complex128)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A.astype(dtype), check_finite=True)
    diag = np.abs(np.diag(lu))
    zero = np.flatnonzero(diag == 0)
    if zero.size:
        raise np.linalg.LinAlgError(f"matrix is singular: zero pivot in column {int(zero[0])}")
    amax = np.abs(A).max()
    growth = float(np.abs(np.triu(lu)).max() / amax) if amax > 0 else 1.0
    anorm = np.abs(A).sum(axis=0).max()
    gecon = scipy.linalg.lapack.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, anorm, norm="1")
    if growth > growth_limit or rcond < rcond_limit:
        warnings.warn(
            f"ill-conditioned system: pivot growth {growth:.2e}, reciprocal condition {rcond:.2e}",
            IllConditionedWarning,
            stacklevel=2,
        )
    x = scipy.linalg.lu_solve((lu, piv), b.astype(dtype))
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(A @ x - b) / nb) if nb > 0 else float(np.linalg.norm(A @ x))
    return SolveResult(x, res, growth, float(rcond))


def solve_bie(form: Formulation, ops: BoundaryOperators, data: BoundaryData, *, mean_value: complex = 0.0,
              residual_tol: float = 1e-10) -> BoundaryDensity:
    """Assemble the right-hand side and system, solve, and wrap the density.

    The interior Neumann problem at ``omega = 0`` has a one-dimensional
    kernel. It is then solved in bordered form with the side condition
    ``int_Gamma g ds = mean_value`` (zero for the validation solutions).
    """
    A = build_system(form, ops)
    b = build_rhs(form, ops, data)
    sp, _ = _spaces(form, ops.mesh)
    bordered = form.kind == "DL-direct" and form.side == "interior" and ops.omega == 0
    if bordered:
        ones = sampled_inner_products(sp, lambda p, n: np.ones(len(p)), 2).real
        n = len(b)
        Ab = np.zeros((n + 1, n + 1), dtype=complex)
        Ab[:n, :n] = A
        Ab[:n, n] = ones
        Ab[n, :n] = ones
        A = Ab
        b = np.append(b, mean_value)
    res = dense_solve(A, b)
    if res.residual > residual_tol:
        raise np.linalg.LinAlgError(f"relative residual {res.residual:.2e} above {residual_tol:.0e}")
    x = res.x[:-1] if bordered else res.x
    meaning = {"SL-direct": "q", "DL-direct": "g", "SL-indirect": "lambda", "DL-indirect": "phi"}[form.kind]
    return BoundaryDensity(x, sp, meaning)


# --------------------------------------------------------------------------
# potentials


@numba.njit(cache=True)
def _total_kernel(kp, scale, tabd, tabt, has_diff, x0, x1, x2, y0, y1, y2, n0, n1, n2):
    d1 = x0 - y0
    d2 = x1 - y1
    d3 = x2 - y2
    s2 = x1 + y1
    v, g1, g2, g3 = gsing_scalar(kp[0], kp[1], kp[2], kp[3] != 0.0, d1, d2, d3, s2)
    k = g1 * n0 + g2 * n1 + g3 * n2
    if has_diff:
        dv, dk = diff_sum(tabd, kp[0], d1, d2, d3, s2, n0, n1, n2)
        v += dv
        k += dk
    tv, tk = tail_sum(tabt, d1, d2, d3, s2, n0, n1, n2)
    return scale * (v + tv), scale * (k + tk)


@numba.njit(parallel=True, cache=True)
def _potential(points, corners, normals, areas, dens, double, kp, scale, tabd, tabt, has_diff,
               bary, wts, eta, maxdepth, out, status):
    npt = points.shape[0]
    nt = corners.shape[0]
    cap = 3 * maxdepth + 4
    for p in prange(npt):
        x0 = points[p, 0]
        x1 = points[p, 1]
        x2 = points[p, 2]
        stack = np.empty((cap, 3, 3))
        depth = np.empty(cap, dtype=np.int64)
        acc = 0j
        for j in range(nt):
            P = corners[j]
            n0 = normals[j, 0]
            n1 = normals[j, 1]
            n2 = normals[j, 2]
            for a in range(3):
                for b in range(3):
                    stack[0, a, b] = 1.0 if a == b else 0.0
            depth[0] = 0
            top = 1
            while top > 0:
                top -= 1
                B = stack[top].copy()
                dep = depth[top]
                # physical corners of the sub-triangle
                c = np.zeros((3, 3))
                for a in range(3):
                    for k in range(3):
                        for m in range(3):
                            c[a, m] += B[a, k] * P[k, m]
                cx = (c[0, 0] + c[1, 0] + c[2, 0]) / 3.0
                cy = (c[0, 1] + c[1, 1] + c[2, 1]) / 3.0
                cz = (c[0, 2] + c[1, 2] + c[2, 2]) / 3.0
                diam = 0.0
                rad = 0.0
                for a in range(3):
                    e0 = c[a, 0] - c[(a + 1) % 3, 0]
                    e1 = c[a, 1] - c[(a + 1) % 3, 1]
                    e2 = c[a, 2] - c[(a + 1) % 3, 2]
                    diam = max(diam, math.sqrt(e0 * e0 + e1 * e1 + e2 * e2))
                    r0 = c[a, 0] - cx
                    r1 = c[a, 1] - cy
                    r2 = c[a, 2] - cz
                    rad = max(rad, math.sqrt(r0 * r0 + r1 * r1 + r2 * r2))
                dist = math.sqrt((x0 - cx) ** 2 + (x1 - cy) ** 2 + (x2 - cz) ** 2) - rad
                if dist < eta * diam:
                    if dep < maxdepth:
                        # split into four children through the edge midpoints
                        for child in range(4):
                            for a in range(3):
                                for m in range(3):
                                    if child == 3:
                                        va = 0.5 * (B[a, m] + B[(a + 1) % 3, m])
                                    elif a == 0:
                                        va = B[child, m]
                                    elif a == 1:
                                        va = 0.5 * (B[child, m] + B[(child + 1) % 3, m])
                                    else:
                                        va = 0.5 * (B[child, m] + B[(child + 2) % 3, m])
                                    stack[top, a, m] = va
                            depth[top] = dep + 1
                            top += 1
                        continue
                    if dist < 1e-3 * diam:
                        status[p] = 1
                area = areas[j] / 4.0**dep
                for q in range(bary.shape[0]):
                    mu0 = 0.0
                    mu1 = 0.0
                    mu2 = 0.0
                    for a in range(3):
                        mu0 += bary[q, a] * B[a, 0]
                        mu1 += bary[q, a] * B[a, 1]
                        mu2 += bary[q, a] * B[a, 2]
                    y0 = mu0 * P[0, 0] + mu1 * P[1, 0] + mu2 * P[2, 0]
                    y1 = mu0 * P[0, 1] + mu1 * P[1, 1] + mu2 * P[2, 1]
                    y2 = mu0 * P[0, 2] + mu1 * P[1, 2] + mu2 * P[2, 2]
                    rho = mu0 * dens[j, 0] + mu1 * dens[j, 1] + mu2 * dens[j, 2]
                    v, k = _total_kernel(kp, scale, tabd, tabt, has_diff, x0, x1, x2, y0, y1, y2, n0, n1, n2)
                    w = 2.0 * area * wts[q]
                    if double:
                        acc += w * k * rho
                    else:
                        acc += w * v * rho
        out[p] = acc


@dataclass(frozen=True)
class PotentialConfig:
    """Adaptive quadrature for off-surface evaluation.

    A (sub)triangle closer than ``eta`` times its diameter is split, up to
    ``max_depth`` times; leaves use a triangle rule of degree ``order``.
    """

    order: int = 4
    eta: float = 2.0
    max_depth: int = 8


def eval_potential(kind: str, density, points, pe: float, omega: float, rules, tau0: float = 1.0,
                   config: PotentialConfig = PotentialConfig(), mesh: TriangleMesh | None = None,
                   on_boundary: str = "raise") -> np.ndarray:
    """Single (``"single"``) or double (``"double"``) layer potential at off-surface points.

    ``density`` is a :class:`BoundaryDensity` or DP1 corner values (then
    ``mesh`` is required). ``rules`` are the time rules of the kernel split.
    Points too close to the boundary raise, or give NaN when
    ``on_boundary="nan"``.
    """
    if on_boundary not in ("raise", "nan"):
        raise ValueError("on_boundary must be 'raise' or 'nan'")
    if kind not in ("single", "double"):
        raise ValueError("kind must be 'single' or 'double'")
    if isinstance(density, BoundaryDensity):
        mesh = density.space.mesh
        dp1 = density.dp1()
    else:
        dp1 = np.asarray(density, dtype=complex)
        if mesh is None:
            raise ValueError("mesh is required for raw DP1 coefficients")
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    params, scale = bem_kernel_params(pe, omega, tau0)
    tabd = diff_table(params, rules.diff.nodes, rules.diff.weights)
    tabt = tail_table(params, rules.tail.nodes, rules.tail.weights)
    r = triangle_rule(config.order)
    out = np.zeros(len(points), dtype=complex)
    status = np.zeros(len(points), dtype=np.int64)
    _potential(
        points, np.ascontiguousarray(mesh.corners), np.ascontiguousarray(mesh.normals), mesh.areas,
        np.ascontiguousarray(dp1.reshape(-1, 3)), kind == "double",
        np.array([params.pe, params.omega, params.tau0, 1.0 if params.shear else 0.0]), scale,
        tabd, tabt, params.shear, np.ascontiguousarray(r.barycentric), r.weights,
        config.eta, config.max_depth, out, status,
    )
    if status.any() and on_boundary == "nan":
        out[status != 0] = np.nan
    elif status.any():
        bad = int(np.flatnonzero(status)[0])
        raise ValueError(f"evaluation point {bad} lies (nearly) on the boundary")
    return out


def evaluate_solution(form: Formulation, density: BoundaryDensity, data: BoundaryData, points, pe: float,
                      omega: float, rules, tau0: float = 1.0, config: PotentialConfig = PotentialConfig(),
                      on_boundary: str = "raise"):
    """Field values from a solved density through the matching representation formula."""
    mesh = density.space.mesh
    kw = dict(pe=pe, omega=omega, rules=rules, tau0=tau0, config=config, on_boundary=on_boundary)
    if form.kind == "SL-indirect":
        return eval_potential("single", density, points, **kw)
    if form.kind == "DL-indirect":
        return eval_potential("double", density, points, **kw)
    known = data.dp1(mesh)
    if form.kind == "SL-direct":
        s = eval_potential("single", density, points, **kw)
        d = eval_potential("double", known, points, mesh=mesh, **kw)
    else:
        s = eval_potential("single", known, points, mesh=mesh, **kw)
        d = eval_potential("double", density, points, **kw)
    return s - d if form.side == "interior" else d - s


def save_density_csv(path, density: BoundaryDensity) -> None:
    """CSV rows ``dof, re, im`` with a schema header."""
    with open(path, "w") as fh:
        fh.write(f"# schema=v1 space={density.space.kind} meaning={density.meaning}\ndof,re,im\n")
        for i, c in enumerate(density.coefficients):
            fh.write(f"{i},{c.real:.17g},{c.imag:.17g}\n")
