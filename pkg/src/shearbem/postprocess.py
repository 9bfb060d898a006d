"""Error norms, the stress moment Q_ij and convergence tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry import FunctionSpace, TriangleMesh, triangle_rule


def point_eval_error(numerical, reference) -> float:
    """Relative Euclidean error over a set of evaluation points."""
    numerical = np.asarray(numerical)
    reference = np.asarray(reference)
    if numerical.shape != reference.shape:
        raise ValueError("length mismatch")
    nref = np.linalg.norm(reference)
    if nref == 0:
        raise ValueError("reference values are all zero")
    return float(np.linalg.norm(numerical - reference) / nref)


def _quad_form(A, x) -> float:
    return float(np.real(np.vdot(x, A @ x)))


def density_error_Hminus(lam_h, lam_ref, V0) -> float:
    """Relative error in the energy norm of the SPD metric ``V0`` (P0 densities)."""
    V0 = np.asarray(V0)
    delta = np.asarray(lam_h) - np.asarray(lam_ref)
    den = _quad_form(V0, np.asarray(lam_ref))
    if den <= 0:
        raise ValueError("reference density has zero norm")
    return math.sqrt(max(_quad_form(V0, delta), 0.0) / den)


def density_error_Hplus(phi_h, phi_ref, V0, M) -> float:
    """Relative error in the dual norm ``<M d, V0^{-1} M d>``.

    ``M`` is the mixed mass matrix from the density space into P0, so the
    norm is computed by one Cholesky solve with the P0 metric.
    """
    V0 = np.asarray(V0)
    M = M.dense() if hasattr(M, "dense") else (M.toarray() if hasattr(M, "toarray") else np.asarray(M))
    chol = scipy.linalg.cho_factor(0.5 * (V0 + V0.T).real)

    def norm2(x):
        y = M @ x
        return float(np.real(np.vdot(y, scipy.linalg.cho_solve(chol, y))))

    den = norm2(np.asarray(phi_ref, dtype=complex))
    if den <= 0:
        raise ValueError("reference density has zero norm")
    return math.sqrt(max(norm2(np.asarray(phi_h, dtype=complex) - phi_ref), 0.0) / den)


def stress_component(density, i: int, j: int, order: int = 4) -> float:
    """Q_ij = int_Gamma phi x_i x_j ds for a real (stationary) density.

    ``i`` and ``j`` are 1-based coordinate indices.
    """
    if not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError("indices must be 1, 2 or 3")
    if order < 4:
        raise ValueError("use a triangle rule of degree >= 4")
    mesh = density.space.mesh
    rule = triangle_rule(order)
    b = rule.barycentric
    pts = np.einsum("kj,tjd->tkd", b, mesh.corners)
    phi = np.einsum("kj,tj->tk", b, density.dp1().reshape(-1, 3))
    vals = 2.0 * mesh.areas[:, None] * rule.weights[None, :] * phi * pts[..., i - 1] * pts[..., j - 1]
    return float(np.real(vals.sum()))


def estimate_eoc(errors, hs) -> list[float]:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}) for consecutive levels."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if len(errors) != len(hs):
        raise ValueError("length mismatch")
    if np.any(errors <= 0) or np.any(np.diff(hs) >= 0):
        raise ValueError("need positive errors and strictly decreasing h")
    return list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))


def richardson(values, hs, order: float = 2.0) -> float:
    """Extrapolate the last two values assuming error ~ h^order."""
    v1, v2 = values[-2], values[-1]
    r = (hs[-2] / hs[-1]) ** order
    return float((r * v2 - v1) / (r - 1.0))


# --------------------------------------------------------------------------
# transfer between nested meshes


def prolongate(coefficients, space_kind: str, fine: TriangleMesh) -> np.ndarray:
    """Exact injection of coarse P0/P1 coefficients into the next refinement ``fine``."""
    info = fine.refinement
    if info is None:
        raise ValueError("mesh carries no refinement information")
    c = np.asarray(coefficients)
    if space_kind == "P0":
        if len(c) != info.n_coarse_triangles:
            raise ValueError("coefficient count does not match the coarse mesh")
        return c[info.triangle_parent]
    if space_kind == "P1":
        if len(c) != info.n_coarse_vertices:
            raise ValueError("coefficient count does not match the coarse mesh")
        return 0.5 * (c[info.vertex_parents[:, 0]] + c[info.vertex_parents[:, 1]])
    raise ValueError(f"unknown space {space_kind!r}")


def prolongate_to(coefficients, space_kind: str, chain: list[TriangleMesh]) -> np.ndarray:
    """Inject through a sequence of refinements ``chain`` (each refining the previous)."""
    for m in chain:
        coefficients = prolongate(coefficients, space_kind, m)
    return coefficients


# --------------------------------------------------------------------------
# reports


@dataclass
class ConvergenceReport:
    """Per-level error records with EOCs; one report per curve."""

    metadata: dict
    records: list = field(default_factory=list)

    def add(self, h: float, dof: int, **metrics) -> None:
        self.records.append({"h": float(h), "dof": int(dof), **{k: float(v) for k, v in metrics.items()}})
        self.records.sort(key=lambda r: -r["h"])

    @property
    def metrics(self) -> list[str]:
        names = []
        for r in self.records:
            names += [k for k in r if k not in ("h", "dof") and k not in names]
        return names

    def eoc(self, metric: str) -> list[float]:
        rows = [r for r in self.records if metric in r and np.isfinite(r[metric]) and r[metric] > 0]
        if len(rows) < 2:
            return []
        return estimate_eoc([r[metric] for r in rows], [r["h"] for r in rows])

    def rows(self) -> list[dict]:
        out = []
        for k, r in enumerate(self.records):
            row = dict(r)
            for m in self.metrics:
                e = self.eoc(m)
                row[f"eoc_{m}"] = e[k - 1] if 0 < k <= len(e) else float("nan")
            out.append(row)
        return out

    def to_csv(self, path=None) -> str:
        cols = ["h", "dof"] + self.metrics + [f"eoc_{m}" for m in self.metrics]
        buf = io.StringIO()
        buf.write("# schema=v1\n")
        for k in sorted(self.metadata):
            buf.write(f"# {k}={self.metadata[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows():
            w.writerow([_fmt(row.get(c, float("nan"))) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        head = ", ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        lines = [head]
        for row in self.rows():
            lines.append("  " + "  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(v)
    if isinstance(v, float) and not np.isfinite(v):
        return "nan"
    return f"{v:.10e}"


__all__ = [
    "ConvergenceReport", "density_error_Hminus", "density_error_Hplus", "estimate_eoc", "point_eval_error",
    "prolongate", "prolongate_to", "richardson", "stress_component",
]
