"""Experiment driver: ``bem <experiment> --config <path> [--out DIR] [--threads N] [--paper-scale]``.

Each experiment writes per-curve CSV files and a ``summary.csv`` with one
row per checked property into the output directory. The exit code is 0
exactly when every check passes.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, ExperimentConfig

log = logging.getLogger("shearbem")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.10e}"
    return str(v)


def write_table(path, columns, rows, cfg: ExperimentConfig, meta: dict | None = None) -> None:
    """CSV with a ``# schema=v1`` line, metadata and the resolved config as comments."""
    lines = ["# schema=v1", f"# experiment = {cfg.kind}"]
    lines += [f"# {k} = {_fmt(v)}" for k, v in (meta or {}).items()]
    lines += [f"# config {line}" for line in cfg.echo()]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(r[c]) for c in columns) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


class Summary:
    """Collected pass/fail checks of one experiment."""

    columns = ("check", "value", "threshold", "passed")

    def __init__(self):
        self.rows = []

    def check(self, name: str, value, threshold: str, passed: bool) -> bool:
        passed = bool(passed)
        self.rows.append({"check": name, "value": value, "threshold": threshold, "passed": passed})
        log.debug("%s %s: %s (%s)", "PASS" if passed else "FAIL", name, _fmt(value), threshold)
        return passed

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def write(self, path, cfg) -> None:
        write_table(path, self.columns, self.rows, cfg)


# --------------------------------------------------------------------------
# shared helpers


def _rules(cfg, pe, omega):
    from .assembly import production_rules

    L = cfg.get("quadrature.window_L")
    return production_rules(
        pe, omega, cfg.get_float("params.tau0"),
        sigma=cfg.get_float("quadrature.sigma"), nu=cfg.get_int("quadrature.nu"), N=cfg.get_int("quadrature.diff_N"),
        tail_n=cfg.get_int("quadrature.tail_n"), tail_exponent=cfg.get_float("quadrature.tail_exponent"),
        L=None if L == "auto" else float(L), c=cfg.get_float("quadrature.window_c"),
        points_per_unit=cfg.get_float("quadrature.points_per_unit"),
        strength=cfg.get_float("quadrature.window_strength"),
    )


def build_meshes(cfg) -> list:
    """Meshes of the configured level range as one refinement chain."""
    from .geometry import generate_cube_mesh, generate_sphere_mesh, generate_two_balls_mesh, load_mesh, refine

    levels = cfg.get_ints("geometry.levels") if "geometry.levels" in cfg.values else [cfg.get_int("geometry.level")]
    mesh_file = cfg.get("geometry.mesh_file")
    if mesh_file:
        mesh = load_mesh(mesh_file)
        for _ in range(levels[0]):
            mesh = refine(mesh)
    else:
        shape = cfg.get("geometry.shape")
        if shape == "cube":
            mesh = generate_cube_mesh(1.0, levels[0])
        elif shape == "sphere":
            mesh = generate_sphere_mesh(1.0, (0.0, 0.0, 0.0), levels[0])
        else:
            mesh = generate_two_balls_mesh(cfg.get_float("geometry.distance"), 1.0, levels[0])
    out = [(levels[0], mesh)]
    for lev in levels[1:]:
        for _ in range(lev - out[-1][0]):
            mesh = refine(mesh, project=bool(mesh.spheres))
        out.append((lev, mesh))
    return out


def _slope(xs, ys) -> float:
    import numpy as np

    return float(-np.polyfit(np.log(xs), np.log(ys), 1)[0])


# --------------------------------------------------------------------------
# experiments


def run_window_conv(cfg, out: Path, summary: Summary) -> None:
    """Sharp vs windowed truncation of int_1^inf exp(-i w t) t^{-3/2} dt."""
    import numpy as np
    from scipy import integrate

    from .quadrature import truncated_rule, windowed_tail_rule

    om = cfg.get_float("params.omega")
    tau0 = cfg.get_float("params.tau0")
    ppu = cfg.get_float("study.points_per_unit")
    c = cfg.get_float("quadrature.window_c")
    strength = cfg.get_float("quadrature.window_strength")
    f = lambda t: np.exp(-1j * om * t) * t**-1.5  # noqa: E731
    kw = dict(epsabs=1e-12, limlst=200, limit=500)
    g = lambda s: (tau0 + s) ** -1.5  # noqa: E731
    a = integrate.quad(g, 0, np.inf, weight="cos", wvar=om, **kw)[0]
    b = integrate.quad(g, 0, np.inf, weight="sin", wvar=om, **kw)[0]
    oracle = np.exp(-1j * om * tau0) * complex(a, -b)

    def windowed(L):
        return windowed_tail_rule(tau0, L, c, int(np.ceil(ppu * L)), om, strength).integrate(f)

    Lb = cfg.get_float("study.benchmark_L")
    bench = windowed(Lb)
    rows = []
    for L in cfg.get_floats("study.L"):
        w = windowed(L)
        s = truncated_rule(tau0, L, int(np.ceil(ppu * L)), om).integrate(f)
        rows.append({"L": L, "err_sharp": abs(s - oracle) / abs(oracle), "err_windowed": abs(w - bench) / abs(bench),
                     "err_windowed_oracle": abs(w - oracle) / abs(oracle)})
    write_table(out / "window_conv.csv", ("L", "err_sharp", "err_windowed", "err_windowed_oracle"), rows, cfg,
                {"oracle_re": oracle.real, "oracle_im": oracle.imag})
    sharp_L = cfg.get_floats("study.sharp_L")
    sl = [r for r in rows if r["L"] in sharp_L]
    slope = _slope([r["L"] for r in sl], [r["err_sharp"] for r in sl])
    target, tol = cfg.get_float("study.slope"), cfg.get_float("study.slope_tolerance")
    summary.check("sharp truncation slope", slope, f"{target} +- {tol}", abs(slope - target) <= tol)
    Lc = cfg.get_float("study.check_L")
    wc = next(r["err_windowed"] for r in rows if r["L"] == Lc)
    tol = cfg.get_float("study.windowed_tolerance")
    summary.check(f"windowed error at L={Lc:g} vs L={Lb:g}", wc, f"< {tol:g}", wc < tol)
    eb = abs(bench - oracle) / abs(oracle)
    tol = cfg.get_float("study.oracle_tolerance")
    summary.check(f"benchmark L={Lb:g} vs adaptive oracle", eb, f"< {tol:g}", eb < tol)
    worse = [r["L"] for r in rows if r["L"] >= 8 and r["L"] < Lb and r["err_windowed_oracle"] > r["err_sharp"]]
    summary.check("windowed error <= sharp error for L >= 8", float(len(worse)), "0 violations", not worse)


def run_fs_check(cfg, out: Path, summary: Summary) -> None:
    """Kernel transform at a probe pair: windowed tail vs adaptive oracle, sweeping L."""
    import numpy as np

    from .kernel import KernelParams, eval_Ghat_reference, eval_Gsing_hat, integrate_time_part
    from .quadrature import composite_graded, tail_rule_plain, windowed_tail_rule

    pe = cfg.get_float("params.pe")
    tau0 = cfg.get_float("params.tau0")
    ppu = cfg.get_float("study.points_per_unit")
    c = cfg.get_float("quadrature.window_c")
    strength = cfg.get_float("quadrature.window_strength")
    floor = cfg.get_float("study.floor")
    pairs = [(np.array([0.5, -0.1, 0.2]), np.array([0.25, -0.05, 0.1]))]
    rng = np.random.default_rng(cfg.get_int("run.seed"))
    for _ in range(cfg.get_int("study.random_pairs")):
        pairs.append((rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)))
    diff_rule = composite_graded(cfg.get_float("quadrature.sigma"), cfg.get_int("quadrature.nu"),
                                 cfg.get_int("study.diff_N"), 0.0, tau0)
    eye = np.eye(3)

    def total(params, x, y, tail_rule):
        s = eval_Gsing_hat(params, x, y)
        val, grad = s.value, s.grad_y.copy()
        for part, rule in (("diff", diff_rule), ("tail", tail_rule)):
            v, _ = integrate_time_part(params, part, rule, x, y)
            val += v[0]
            for k in range(3):
                grad[k] += integrate_time_part(params, part, rule, x, y, eye[k])[1][0]
        return val, grad

    rows = []
    needed = {}
    for om in cfg.get_floats("params.omega"):
        params = KernelParams(pe, om, tau0)
        for ip, (x, y) in enumerate(pairs):
            ref = eval_Ghat_reference(params, x, y, tol=1e-13)

            def errors(rule):
                v, g = total(params, x, y, rule)
                return (abs(v - ref.value) / abs(ref.value),
                        float(np.linalg.norm(g - ref.grad_y) / np.linalg.norm(ref.grad_y)))

            if om == 0:
                rule = tail_rule_plain(tau0, cfg.get_int("study.tail_n"), cfg.get_float("quadrature.tail_exponent"))
                ev, eg = errors(rule)
                rows.append({"omega": om, "pair": ip, "L": float("inf"), "nodes": len(rule), "err_value": ev,
                             "err_grad": eg})
                if ip == 0:
                    tol = cfg.get_float("study.stationary_tolerance")
                    summary.check("omega=0 stationary tail vs oracle", max(ev, eg), f"< {tol:g}", max(ev, eg) < tol)
                continue
            errs = []
            for L in cfg.get_floats("study.L"):
                rule = windowed_tail_rule(tau0, L, c, int(np.ceil(ppu * L)), om, strength)
                ev, eg = errors(rule)
                rows.append({"omega": om, "pair": ip, "L": L, "nodes": len(rule), "err_value": ev, "err_grad": eg})
                errs.append((L, max(ev, eg)))
            if ip:
                continue
            e = [max(v, floor) for _, v in errs]
            bad = sum(1 for a, b in zip(e, e[1:]) if b > a * (1 + 1e-6))
            summary.check(f"omega={om:g}: error non-increasing in L (floor {floor:g})", float(bad), "0 violations",
                          bad == 0)
            tol = cfg.get_float("study.tolerance")
            summary.check(f"omega={om:g}: error at L={errs[-1][0]:g}", errs[-1][1], f"< {tol:g}", errs[-1][1] < tol)
            needed[om] = next((L for L, v in errs if v < 1e-6), float("inf"))
    rows.sort(key=lambda r: (r["omega"], r["pair"], r["L"]))
    write_table(out / "fs_check.csv", ("omega", "pair", "L", "nodes", "err_value", "err_grad"), rows, cfg,
                {"pe": pe, "x": "0.5 -0.1 0.2", "y": "0.25 -0.05 0.1"})
    oms = sorted(needed)
    if len(oms) > 1:
        req = [needed[o] for o in oms]
        ok = all(a >= b for a, b in zip(req, req[1:]))
        summary.check("L needed for 1e-6 shrinks as omega grows", " ".join(f"{o:g}:{r:g}" for o, r in zip(oms, req)),
                      "non-increasing in omega", ok)


def run_quad_conv(cfg, out: Path, summary: Summary) -> None:
    """Frobenius errors of the diff/tail Galerkin matrices vs time-quadrature budget."""
    import numpy as np

    from .assembly import SauterSchwabConfig, assemble_dp1, restrict
    from .geometry import FunctionSpace
    from .kernel import bem_kernel_params
    from .quadrature import (composite_graded, gauss_legendre, tail_rule_plain, tail_rule_stationary,
                             windowed_tail_rule)

    (level, mesh), = build_meshes(cfg)
    p0 = FunctionSpace(mesh, "P0")
    pe = cfg.get_float("params.pe")
    tau0 = cfg.get_float("params.tau0")
    sigma = cfg.get_float("quadrature.sigma")
    ss = SauterSchwabConfig(*cfg.get_ints("study.ss_orders"))
    near, far = cfg.get_ints("study.tail_orders")
    ss_tail = SauterSchwabConfig(near=near, far=far, regular_only=True)
    rtol = cfg.get_float("study.rate_tolerance")
    nmin = cfg.get_int("study.rate_min_n")
    parts = cfg.get_list("study.parts")
    meta = {"elements": mesh.n_triangles, "pe": pe}

    def frob(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    def curve(name, params, part, cfg_ss, rules, bench, key):
        t = time.time()
        vb, kb = (restrict(m, p0, p0) for m in assemble_dp1(mesh, part, params, cfg_ss, bench))
        rows = []
        for arg, rule in rules:
            v, k = (restrict(m, p0, p0) for m in assemble_dp1(mesh, part, params, cfg_ss, rule))
            rows.append({key: arg, "nodes": len(rule), "err_V": frob(v, vb), "err_K": frob(k, kb)})
        write_table(out / f"{name}.csv", (key, "nodes", "err_V", "err_K"), rows, cfg,
                    {**meta, "omega": params.omega, "benchmark": bench.descriptor, "benchmark_nodes": len(bench)})
        log.info("%s done in %.1fs", name, time.time() - t)
        return rows

    def rates(rows, targets, label):
        sel = [r for r in rows if r["nodes"] >= nmin]
        for op, target in zip(("V", "K"), targets):
            errs = [r[f"err_{op}"] for r in sel]
            s = _slope([r["nodes"] for r in sel], errs)
            summary.check(f"{label} plain Gauss rate {op}", s, f"{target:g} +- {rtol:g}", abs(s - target) <= rtol)

    def superalgebraic(rows, label, floor=1e-14):
        sel = [r for r in rows if r["err_V"] > floor]
        if len(sel) < 4:
            summary.check(f"{label} composite super-algebraic", float(len(sel)), ">= 4 points above floor", False)
            return
        n = np.array([r["nodes"] for r in sel], float)
        e = np.array([r["err_V"] for r in sel])
        local = -np.diff(np.log(e)) / np.diff(np.log(n))
        summary.check(f"{label} composite local rate grows", f"{local[0]:.3f} -> {local[-1]:.3f}",
                      "last > first", local[-1] > local[0])

    for om in cfg.get_floats("params.omega"):
        params, _ = bem_kernel_params(pe, om, tau0)
        tag = f"omega{om:g}"
        if "diff" in parts:
            nu = cfg.get_int("quadrature.nu")
            bench = composite_graded(sigma, nu, cfg.get_int("study.diff_benchmark_N"), 0, tau0)
            plain = curve(f"quad_diff_{tag}_plain", params, "diff", ss,
                          [(n, gauss_legendre(n, 0, tau0)) for n in cfg.get_ints("study.diff_plain_n")], bench, "n")
            comp = curve(f"quad_diff_{tag}_composite", params, "diff", ss,
                         [(N, composite_graded(sigma, nu, N, 0, tau0)) for N in cfg.get_ints("study.diff_composite_N")],
                         bench, "N")
            rates(plain, cfg.get_floats("study.rate_diff"), f"diff omega={om:g}")
            target = cfg.get_float("study.diff_target_points")
            best = [r for r in comp if r["nodes"] <= target]
            err = best[-1]["err_V"] if best else float("inf")
            tol = cfg.get_float("study.diff_tolerance")
            summary.check(f"diff omega={om:g} composite V error with <= {target:g} points", err, f"<= {tol:g}",
                          err <= tol)
            superalgebraic(comp, f"diff omega={om:g}")
        if "tail" in parts and om == 0:
            p = cfg.get_float("study.tail_exponent")
            nu = cfg.get_int("study.tail_nu")
            bench = tail_rule_stationary(tau0, sigma, nu, cfg.get_int("study.tail_benchmark_N"), p)
            plain = curve(f"quad_tail_{tag}_plain", params, "tail", ss_tail,
                          [(n, tail_rule_plain(tau0, n, p)) for n in cfg.get_ints("study.tail_plain_n")], bench, "n")
            comp = curve(f"quad_tail_{tag}_composite", params, "tail", ss_tail,
                         [(N, tail_rule_stationary(tau0, sigma, nu, N, p)) for N in cfg.get_ints("study.tail_composite_N")],
                         bench, "N")
            rates(plain, cfg.get_floats("study.rate_tail"), "tail omega=0")
            target = cfg.get_float("study.tail_target_points")
            best = [r for r in comp if r["nodes"] <= target]
            for op in ("V", "K"):
                err = best[-1][f"err_{op}"] if best else float("inf")
                tol = cfg.get_float(f"study.tail_tolerance_{op}")
                summary.check(f"tail omega=0 composite {op} error with <= {target:g} points", err, f"<= {tol:g}",
                              err <= tol)
            superalgebraic(comp, "tail omega=0")
        elif "tail" in parts:
            ppu = cfg.get_float("study.points_per_unit")
            c = cfg.get_float("quadrature.window_c")
            strength = cfg.get_float("quadrature.window_strength")

            def wrule(L):
                return windowed_tail_rule(tau0, L, c, int(np.ceil(ppu * L)), params.omega, strength)

            Lb = cfg.get_float("study.window_benchmark_L")
            rows = curve(f"quad_tail_{tag}_windowed", params, "tail", ss_tail,
                         [(L, wrule(L)) for L in cfg.get_floats("study.window_L")], wrule(Lb), "L")
            Lc = cfg.get_float("study.window_check_L")
            tol = cfg.get_float("study.window_tolerance")
            hit = [r for r in rows if r["L"] == Lc]
            for op in ("V", "K"):
                err = hit[0][f"err_{op}"] if hit else float("inf")
                summary.check(f"tail omega={om:g} windowed {op} at L={Lc:g} vs L={Lb:g}", err, f"< {tol:g}",
                              err < tol)


def _circle(n, radius):
    import numpy as np

    th = 2 * np.pi * np.arange(n) / n
    return np.stack([np.zeros(n), radius * np.cos(th), radius * np.sin(th)], axis=1)


def run_interior_validate(cfg, out: Path, summary: Summary) -> None:
    """Interior Dirichlet/Neumann problems with known solutions on a cube sequence."""
    import numpy as np

    from .assembly import BoundaryOperators, assemble_helmholtz_metric, assemble_mass
    from .geometry import FunctionSpace
    from .postprocess import (ConvergenceReport, density_error_Hminus, density_error_Hplus, estimate_eoc,
                              point_eval_error, prolongate_to)
    from .solve import (BoundaryData, Formulation, analytic_harmonic_poly, analytic_plane_wave, evaluate_solution,
                        solve_bie)

    meshes = build_meshes(cfg)
    tau0 = cfg.get_float("params.tau0")
    forms = []
    for item in cfg.get_list("formulations.list"):
        kind, _, space = item.partition("/")
        forms.append(Formulation(kind.strip(), "interior", space.strip() or None))
    points = _circle(cfg.get_int("study.circle_points"), cfg.get_float("study.circle_radius"))
    runs = [(pe, 0.0, analytic_harmonic_poly()) for pe in cfg.get_floats("params.pe")]
    omega_pe = cfg.get_float("params.omega_pe")
    runs += [(omega_pe, om, analytic_plane_wave(om)) for om in cfg.get_floats("params.omega") if om > 0]

    fine = meshes[-1][1]
    p0f, p1f = FunctionSpace(fine, "P0"), FunctionSpace(fine, "P1")
    metric = assemble_helmholtz_metric(fine, p0f).dense().real
    masses = {"P0": assemble_mass(p0f, p0f).dense(), "P1": assemble_mass(p0f, p1f).dense()}
    point_errors = {}
    for pe, om, sol in runs:
        exact = sol.value(points)
        dens = {f.label: [] for f in forms}
        errs = {f.label: [] for f in forms}
        for lev, mesh in meshes:
            t = time.time()
            rules = _rules(cfg, pe, om)
            ops = BoundaryOperators(mesh, pe, om, rules, tau0)
            for f in forms:
                data = (BoundaryData(sol.dirichlet, "dirichlet") if f.problem == "dirichlet"
                        else BoundaryData(sol.conormal(pe), "neumann"))
                d = solve_bie(f, ops, data)
                vals = evaluate_solution(f, d, data, points, pe, om, rules, tau0)
                errs[f.label].append(point_eval_error(vals, exact))
                dens[f.label].append(d)
            log.info("Pe=%g omega=%g level %d: %d elements in %.1fs", pe, om, lev, mesh.n_triangles, time.time() - t)
        tag = f"pe{pe:g}_omega{om:g}"
        for f in forms:
            rep = ConvergenceReport({"formulation": f.label, "pe": pe, "omega": om, "solution": sol.descriptor})
            ref = dens[f.label][-1].coefficients
            for k, ((lev, mesh), d) in enumerate(zip(meshes, dens[f.label])):
                chain = [m for _, m in meshes[k + 1:]]
                # refinement steps between listed levels are not stored, so only
                # consecutive levels can be transferred exactly
                lifted = prolongate_to(d.coefficients, f.space, chain) if _consecutive(meshes, k) else None
                if lifted is None or k == len(meshes) - 1:
                    derr = float("nan")
                elif d.meaning in ("q", "lambda") and f.space == "P0":
                    derr = density_error_Hminus(lifted, ref, metric)
                else:
                    derr = density_error_Hplus(lifted, ref, metric, masses[f.space])
                rep.add(mesh.h, d.space.ndof, point_error=errs[f.label][k], density_error=derr)
            write_table(out / f"interior_{tag}_{f.kind}_{f.space}.csv",
                        ["h", "dof", "point_error", "density_error", "eoc_point_error", "eoc_density_error"],
                        rep.rows(), cfg, rep.metadata)
            e = errs[f.label]
            mono = all(b < a for a, b in zip(e, e[1:]))
            summary.check(f"{tag} {f.label} point errors decrease", " ".join(f"{v:.3e}" for v in e),
                          "strictly decreasing", mono)
            point_errors[(pe, om, f.label)] = e
        hs = [m.h for _, m in meshes]
        if len(hs) > 1:
            for layer in ("SL", "DL"):
                dl = [f for f in forms if f.kind == f"{layer}-direct"]
                il = [f for f in forms if f.kind == f"{layer}-indirect"]
                if not dl or not il:
                    continue
                rd = min(estimate_eoc(errs[f.label], hs)[-1] for f in dl)
                ri = max(estimate_eoc(errs[f.label], hs)[-1] for f in il)
                summary.check(f"{tag} {layer} direct EOC >= indirect EOC (finest pair)", f"{rd:.3f} vs {ri:.3f}",
                              "direct >= indirect", rd >= ri)
    band = cfg.get_float("study.laplace_band")
    pes = cfg.get_floats("params.pe")
    if 0.0 in pes and 0.25 in pes:
        worst = 0.0
        for f in forms:
            a = np.array(point_errors[(0.0, 0.0, f.label)])
            b = np.array(point_errors[(0.25, 0.0, f.label)])
            worst = max(worst, float(np.max(np.abs(np.log10(a / b)))))
        summary.check("Laplace run tracks Pe=0.25 curves", worst, f"<= {band:g} decades", worst <= band)


def _consecutive(meshes, k) -> bool:
    levels = [lev for lev, _ in meshes[k:]]
    return all(b == a + 1 for a, b in zip(levels, levels[1:]))


def run_exterior_colloid(cfg, out: Path, summary: Summary) -> None:
    """Sheared hard sphere: Q_12 under refinement and an XY-plane field snapshot."""
    import numpy as np

    from .assembly import BoundaryOperators
    from .kernel import preflight_check
    from .postprocess import ConvergenceReport, richardson, stress_component
    from .solve import BoundaryData, Formulation, colloid_flux, solve_bie

    meshes = build_meshes(cfg)
    tau0 = cfg.get_float("params.tau0")
    form = Formulation("DL-direct", "exterior", "P1")
    pes = cfg.get_floats("params.pe")
    refs = cfg.get_floats("study.q12_reference") if cfg.get("study.q12_reference") != "none" else []
    n = cfg.get_int("output.field_grid")
    ext = cfg.get_float("output.field_extent")
    field_level = cfg.get_int("output.field_level")
    for ip, pe in enumerate(pes):
        rules = _rules(cfg, pe, 0.0)
        data = BoundaryData(colloid_flux(pe), "neumann")
        rep = ConvergenceReport({"formulation": form.label, "pe": pe, "omega": 0.0})
        q = []
        field_density = None
        for lev, mesh in meshes:
            preflight_check(pe, float(np.ptp(mesh.vertices, axis=0).max()) + 2 * ext)
            t = time.time()
            ops = BoundaryOperators(mesh, pe, 0.0, rules, tau0)
            d = solve_bie(form, ops, data)
            qs = {f"Q{i}{j}": stress_component(d, i, j) for i in (1, 2, 3) for j in (1, 2, 3) if i <= j}
            q.append(qs["Q12"])
            rep.add(mesh.h, d.space.ndof, **qs)
            if lev == field_level:
                field_density = d
            log.info("Pe=%g level %d: Q12=%.6f in %.1fs", pe, lev, qs["Q12"], time.time() - t)
        hs = [m.h for _, m in meshes]
        write_table(out / f"colloid_pe{pe:g}.csv", ["h", "dof"] + [f"Q{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)
                                                                    if i <= j], rep.rows(), cfg, rep.metadata)
        if len(q) >= 3:
            r1 = abs(q[-2] - q[-3]) / abs(q[-1] - q[-2])
            eoc = float(np.log(r1) / np.log(hs[-2] / hs[-1]))
            target, tol = cfg.get_float("study.eoc"), cfg.get_float("study.eoc_tolerance")
            summary.check(f"Pe={pe:g} EOC of Q12 (three finest levels)", eoc, f"{target:g} +- {tol:g}",
                          abs(eoc - target) <= tol)
        if len(q) >= 2 and ip < len(refs):
            qx = richardson(q, hs, 2.0)
            rel = abs(qx - refs[ip]) / abs(refs[ip])
            tol = cfg.get_float("study.relative_tolerance")
            summary.check(f"Pe={pe:g} extrapolated Q12 = {qx:.6f} vs {refs[ip]:g}", rel, f"<= {tol:g} relative",
                          rel <= tol)
        if field_density is not None and n > 0:
            _write_field(cfg, out / f"field_pe{pe:g}.csv", field_density, data, form, pe, rules, tau0, n, ext)


def _write_field(cfg, path, density, data, form, pe, rules, tau0, n, ext):
    import numpy as np

    from .solve import evaluate_solution

    mesh = density.space.mesh
    xs = np.linspace(-ext, ext, n)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    inside = _inside(mesh, pts)
    vals = np.full(len(pts), np.nan + 0j)
    t = time.time()
    vals[~inside] = evaluate_solution(form, density, data, pts[~inside], pe, 0.0, rules, tau0, on_boundary="nan")
    log.info("field snapshot: %d points in %.1fs", int((~inside).sum()), time.time() - t)
    rows = [{"x": p[0], "y": p[1], "re": v.real, "im": v.imag} for p, v in zip(pts, vals)]
    write_table(path, ("x", "y", "re", "im"), rows, cfg,
                {"elements": mesh.n_triangles, "grid": n, "extent": ext, "masked": "interior points are nan"})


def _inside(mesh, pts):
    """Winding-number test (solid angle sum) for a closed oriented surface."""
    import numpy as np

    w = np.zeros(len(pts))
    for c in np.array_split(np.arange(mesh.n_triangles), max(1, mesh.n_triangles // 256)):
        a = mesh.corners[c, 0][None] - pts[:, None]
        b = mesh.corners[c, 1][None] - pts[:, None]
        d = mesh.corners[c, 2][None] - pts[:, None]
        la, lb, ld = (np.linalg.norm(v, axis=2) for v in (a, b, d))
        num = np.einsum("pti,pti->pt", a, np.cross(b, d))
        den = (la * lb * ld + np.einsum("pti,pti->pt", a, b) * ld + np.einsum("pti,pti->pt", b, d) * la
               + np.einsum("pti,pti->pt", d, a) * lb)
        w += 2 * np.arctan2(num, den).sum(axis=1)
    return w / (4 * np.pi) > 0.5


RUNNERS = {
    "fs-check": run_fs_check,
    "quad-conv": run_quad_conv,
    "window-conv": run_window_conv,
    "interior-validate": run_interior_validate,
    "exterior-colloid": run_exterior_colloid,
}


def _configure_threads(n: int) -> None:
    # single-threaded BLAS keeps dense solves bitwise reproducible
    for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    from .assembly import set_threads

    set_threads(n)


def run(kind: str, cfg: ExperimentConfig, out: Path) -> Summary:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_text())
    summary = Summary()
    t = time.time()
    RUNNERS[kind](cfg, out, summary)
    summary.write(out / "summary.csv", cfg)
    log.info("%s finished in %.1fs", kind, time.time() - t)
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bem", description="Boundary element experiments for the sheared "
                                 "Smoluchowski equation in the frequency domain.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, help="assembly threads (overrides run.threads)")
    ap.add_argument("--paper-scale", action="store_true", help="use the largest level ranges that fit the dense cap")
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config, kind=args.experiment, paper_scale=args.paper_scale,
                                         overrides={"output.dir": args.out, "run.threads": args.threads})
    except (OSError, ConfigError) as exc:
        print(f"bem: {exc}", file=sys.stderr)
        return 2
    _configure_threads(cfg.get_int("run.threads"))
    summary = run(args.experiment, cfg, Path(cfg.get("output.dir")))
    for r in summary.rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']}: {_fmt(r['value'])} ({r['threshold']})")
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
