import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laplace_reference import laplace_single_layer_p0
from shearbem.assembly import (
    MAX_DENSE_DOFS,
    SS_DIFF,
    SS_TAIL,
    AssemblyConfig,
    BoundaryOperators,
    GalerkinMatrix,
    SauterSchwabConfig,
    assemble_diff,
    assemble_dp1,
    assemble_helmholtz_metric,
    assemble_mass,
    assemble_sing,
    assemble_tail,
    load_matrix,
    production_rules,
    restrict,
    save_matrix,
    save_matrix_csv,
    ss_edge,
    ss_identical,
    ss_vertex,
)
from shearbem.geometry import FunctionSpace, generate_cube_mesh, generate_sphere_mesh, triangle_rule
from shearbem.kernel import KernelParams, bem_kernel_params, integrate_time_part
from shearbem.quadrature import composite_graded, tail_rule_plain, windowed_tail_rule
from surface_reference import single_layer_row_sum

CUBE0 = generate_cube_mesh(1.0, 0)
CUBE1 = generate_cube_mesh(1.0, 1)
HIGH = SauterSchwabConfig(16, 16, 16, 16, 12)


def spaces(mesh):
    return FunctionSpace(mesh, "P0"), FunctionSpace(mesh, "P1")


# --------------------------------------------------------------------------
# Sauter-Schwab reference rules on T = {0 <= x2 <= x1 <= 1}


@pytest.mark.parametrize("rule", [ss_identical, ss_edge, ss_vertex])
def test_reference_rules_cover_product_of_triangles(rule):
    ref = rule(6)
    x1, x2, y1, y2, w = ref.T
    assert w.sum() == pytest.approx(0.25, abs=1e-14)
    # int_T x1 = 1/3, int_T x2 = 1/6 on the reference triangle of area 1/2
    assert np.sum(w * x1 * y2) == pytest.approx(1 / 18, abs=1e-14)
    assert np.sum(w * x2 * y1**2) == pytest.approx(1 / 6 * 1 / 4, abs=1e-14)
    assert np.all((x2 <= x1 + 1e-15) & (y2 <= y1 + 1e-15))


# --------------------------------------------------------------------------
# singular part


def test_sing_cube_level0_finite_with_positive_diagonal():
    p0, _ = spaces(CUBE0)
    V = assemble_sing(CUBE0, p0, p0, KernelParams(1.0, 0.0)).dense()
    assert V.shape == (12, 12)
    assert np.all(np.isfinite(V))
    d = np.diag(V)
    assert np.all(d.imag == 0) and np.all(d.real > 0)


def test_laplace_oracle_is_symmetric():
    # the oracle backs 1e-8 comparisons, so it must be two orders better
    A = laplace_single_layer_p0(CUBE0.vertices, CUBE0.triangles)
    assert np.abs(A - A.T).max() < 1e-10 * np.abs(A).max()


def test_sing_heat_mode_with_infinite_cutoff_is_laplace():
    # without shear and with tau0 -> infinity the closed form is 1/(4 pi r)
    p0, _ = spaces(CUBE0)
    params, scale = bem_kernel_params(0.0, 0.0, 1e20)
    V = assemble_sing(CUBE0, p0, p0, params, "V", HIGH, scale).dense()
    A = laplace_single_layer_p0(CUBE0.vertices, CUBE0.triangles)
    assert np.abs(V - A).max() < 1e-8 * np.abs(A).max()


def test_laplace_kernel_matches_oracle():
    p0, _ = spaces(CUBE0)
    V, _ = assemble_dp1(CUBE0, "laplace", None, HIGH, want_k=False)
    A = laplace_single_layer_p0(CUBE0.vertices, CUBE0.triangles)
    assert np.abs(restrict(V, p0, p0) - A).max() < 1e-8 * np.abs(A).max()


def test_doubling_sauter_schwab_orders():
    mesh = generate_cube_mesh(1.0, 2)
    params = KernelParams(1.0, 0.0)
    base = SauterSchwabConfig()
    for a, b in zip(assemble_dp1(mesh, "sing", params, base), assemble_dp1(mesh, "sing", params, base.doubled())):
        assert np.linalg.norm(a - b) < 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("mesh", [CUBE1, generate_sphere_mesh(1.0, (0, 0, 0), 2)])
def test_double_layer_of_constant_is_minus_half(mesh):
    # Gauss: int_Gamma d/dn_y 1/(4 pi |x-y|) ds_y = -1/2 on every flat face
    p0, p1 = spaces(mesh)
    _, K = assemble_dp1(mesh, "laplace", None, SauterSchwabConfig(8, 8, 8, 8, 6))
    row = restrict(K, p0, p1) @ np.ones(p1.ndof)
    assert np.abs(row / mesh.areas + 0.5).max() < 1e-6


def test_heat_mode_total_reproduces_gauss_law():
    p0, p1 = spaces(CUBE1)
    ops = BoundaryOperators(CUBE1, 0.0, 0.0, production_rules(0.0, 0.0))
    row = ops.K(p0, p1).dense() @ np.ones(p1.ndof)
    assert np.abs(row / CUBE1.areas + 0.5).max() < 1e-4


# --------------------------------------------------------------------------
# difference part and tail


def test_zero_frequency_parts_are_real():
    p0, p1 = spaces(CUBE1)
    params = KernelParams(1.0, 0.0)
    diff = composite_graded(0.17, 2, 5)
    tail = tail_rule_plain(1.0, 12, 0.5)
    for op in ("V", "K"):
        mats = [
            assemble_sing(CUBE1, p0, p1, params, op),
            assemble_diff(CUBE1, p0, p1, params, op, diff),
            assemble_tail(CUBE1, p0, p1, params, op, tail),
        ]
        for m in mats:
            assert np.all(m.dense().imag == 0)


def test_oscillatory_tail_needs_window():
    p0, _ = spaces(CUBE0)
    with pytest.raises(ValueError, match="windowed"):
        assemble_tail(CUBE0, p0, p0, KernelParams(1.0, 1.0), "V", tail_rule_plain(1.0, 8, 0.5))
    # the windowed rule is accepted
    assemble_tail(CUBE0, p0, p0, KernelParams(1.0, 1.0), "V", windowed_tail_rule(1.0, 16.0, 0.5, 16, 1.0))


def test_heat_mode_has_no_difference_part():
    p0, _ = spaces(CUBE0)
    V = assemble_diff(CUBE0, p0, p0, KernelParams(1.0, 0.0, shear=False), "V", composite_graded(0.17, 2, 3)).dense()
    assert np.all(V == 0)


def test_tail_blocks_follow_argument_order():
    # a far pair integrated by hand with the rule the assembly uses
    mesh = CUBE1
    dp1 = FunctionSpace(mesh, "DP1")
    params = KernelParams(1.0, 0.0)
    rule = tail_rule_plain(1.0, 10, 0.5)
    V = assemble_tail(mesh, dp1, dp1, params, "V", rule).dense()
    K = assemble_tail(mesh, dp1, dp1, params, "K", rule).dense()
    i, j = 0, int(np.argmax(np.linalg.norm(mesh.centroids - mesh.centroids[0], axis=1)))
    tr = triangle_rule(SS_TAIL.far)
    bary = tr.barycentric
    for a, b in ((i, j), (j, i)):
        x = bary @ mesh.corners[a]
        y = bary @ mesh.corners[b]
        X = np.repeat(x, len(y), axis=0)
        Y = np.tile(y, (len(x), 1))
        v, k = integrate_time_part(params, "tail", rule, X, Y, mesh.normals[b])
        w = np.outer(2 * mesh.areas[a] * tr.weights, 2 * mesh.areas[b] * tr.weights).ravel()
        phi = np.einsum("pa,qb->pqab", bary, bary).reshape(-1, 3, 3)
        block_v = np.einsum("n,n,nab->ab", w, v, phi)
        block_k = np.einsum("n,n,nab->ab", w, k, phi)
        np.testing.assert_allclose(V[3 * a:3 * a + 3, 3 * b:3 * b + 3], block_v, rtol=1e-13)
        np.testing.assert_allclose(K[3 * a:3 * a + 3, 3 * b:3 * b + 3], block_k, rtol=1e-12, atol=1e-18)
    # the kernel is not symmetric, so the two blocks differ
    assert not np.allclose(V[3 * i:3 * i + 3, 3 * j:3 * j + 3], V[3 * j:3 * j + 3, 3 * i:3 * i + 3].T, rtol=1e-6)


# --------------------------------------------------------------------------
# mass and metric


def test_p0_mass_on_cube_level0():
    p0, _ = spaces(CUBE0)
    M = assemble_mass(p0, p0).dense()
    np.testing.assert_allclose(M, 2.0 * np.eye(12), atol=1e-14)


def test_p1_mass_row_sums():
    _, p1 = spaces(CUBE1)
    M = assemble_mass(p1, p1).dense()
    expected = np.zeros(p1.ndof)
    np.add.at(expected, CUBE1.triangles.ravel(), np.repeat(CUBE1.areas / 3, 3))
    np.testing.assert_allclose(M.sum(axis=1), expected, rtol=1e-13)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_mixed_mass_total_is_surface_area(level):
    p0, p1 = spaces(generate_cube_mesh(1.0, level))
    assert assemble_mass(p0, p1).dense().sum() == pytest.approx(24.0, rel=1e-14)


def test_mass_rejects_different_meshes():
    with pytest.raises(ValueError):
        assemble_mass(FunctionSpace(CUBE0, "P0"), FunctionSpace(CUBE1, "P0"))


def test_helmholtz_metric_is_spd():
    mesh = generate_cube_mesh(1.0, 2)
    A = assemble_helmholtz_metric(mesh).dense()
    assert np.all(A.imag == 0)
    A = A.real
    assert np.linalg.norm(A - A.T) < 1e-12 * np.linalg.norm(A)
    assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() > 0
    rng = np.random.default_rng(7)
    for _ in range(100):
        v = rng.standard_normal(A.shape[0])
        assert v @ A @ v > 0


# --------------------------------------------------------------------------
# restriction and totals


def test_restriction_to_p1_keeps_constants():
    p0, p1 = spaces(CUBE1)
    dp1 = FunctionSpace(CUBE1, "DP1")
    V, _ = assemble_dp1(CUBE1, "laplace", None, want_k=False)
    np.testing.assert_allclose(restrict(V, dp1, p1) @ np.ones(p1.ndof), V @ np.ones(dp1.ndof), rtol=1e-13)
    np.testing.assert_allclose(
        restrict(V, p0, p0).sum(), V.sum(), rtol=1e-13
    )


def test_operators_equal_sum_of_parts():
    mesh = CUBE1
    pe, om = 1.0, 0.5
    rules = production_rules(pe, om)
    ops = BoundaryOperators(mesh, pe, om, rules)
    params, scale = bem_kernel_params(pe, om)
    dp1 = FunctionSpace(mesh, "DP1")
    total = sum(
        (
            assemble_sing(mesh, dp1, dp1, params, "K", scale=scale).dense(),
            assemble_diff(mesh, dp1, dp1, params, "K", rules.diff, scale=scale).dense(),
            assemble_tail(mesh, dp1, dp1, params, "K", rules.tail, scale=scale).dense(),
        )
    )
    np.testing.assert_allclose(ops.K(dp1, dp1).dense(), total, rtol=1e-13, atol=1e-16)


def test_galerkin_matrix_addition():
    p0, p1 = spaces(CUBE0)
    params = KernelParams(1.0, 0.0)
    a = assemble_sing(CUBE0, p0, p0, params)
    b = assemble_tail(CUBE0, p0, p0, params, "V", tail_rule_plain(1.0, 8, 0.5))
    s = a + b
    assert s.part == "total"
    np.testing.assert_allclose(s.dense(), a.dense() + b.dense())
    with pytest.raises(ValueError):
        a + assemble_sing(CUBE0, p0, p1, params)


def test_dense_cap():
    assert MAX_DENSE_DOFS == 20000
    big = generate_cube_mesh(1.0, 5)  # 12288 triangles, 36864 DP1 dofs
    with pytest.raises(MemoryError):
        assemble_dp1(big, "laplace")


def test_bad_orders_rejected():
    with pytest.raises(ValueError):
        SauterSchwabConfig(identical=0)
    with pytest.raises(ValueError):
        SauterSchwabConfig(theta=-1.0)
    with pytest.raises(ValueError):
        assemble_sing(CUBE0, *spaces(CUBE0), KernelParams(1.0), "W")


# --------------------------------------------------------------------------
# time rules used by the solver


def test_production_rules():
    still = production_rules(1.0, 0.0)
    assert still.tail.descriptor.startswith("tail")
    assert len(still.diff) == 2 * 8 * 9 // 2
    osc = production_rules(1.0, 1.0)
    assert osc.tail.descriptor.startswith("windowed")
    assert osc.tail.b == pytest.approx(64.0)
    assert production_rules(1.0, 0.01).tail.b == pytest.approx(256.0)
    assert production_rules(1.0, 100.0).tail.b == pytest.approx(32.0)
    # the scaled frequency is omega / Pe
    assert production_rules(4.0, 1.0).tail.b == pytest.approx(256.0)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([0.25, 1.0, 4.0]), st.sampled_from([0.25, 1.0, 4.0]))
def test_window_length_in_range(pe, omega):
    rule = production_rules(pe, omega).tail
    assert 32.0 <= rule.b <= 256.0
    assert np.all(np.isfinite(rule.weights)) and np.all(rule.weights >= 0)


# --------------------------------------------------------------------------
# export and determinism


def test_matrix_dump_round_trip(tmp_path):
    p0, _ = spaces(CUBE0)
    V = assemble_sing(CUBE0, p0, p0, KernelParams(1.0, 1.0))
    save_matrix(tmp_path / "v.bin", V)
    raw = (tmp_path / "v.bin").read_bytes()
    assert raw[:8] == b"SBEMMAT1"
    assert np.frombuffer(raw[8:24], dtype="<i8").tolist() == [12, 12]
    np.testing.assert_array_equal(load_matrix(tmp_path / "v.bin"), V.dense())
    save_matrix_csv(tmp_path / "v.csv", V)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[1] == "row,col,re,im" and len(lines) == 2 + 144
    (tmp_path / "bad.bin").write_bytes(b"NOTAMATRIX")
    with pytest.raises(ValueError):
        load_matrix(tmp_path / "bad.bin")


def test_assembly_is_reproducible():
    a = BoundaryOperators(CUBE1, 1.0, 1.0, production_rules(1.0, 1.0))
    b = BoundaryOperators(CUBE1, 1.0, 1.0, production_rules(1.0, 1.0))
    assert np.array_equal(a.V_dp1, b.V_dp1) and np.array_equal(a.K_dp1, b.K_dp1)


_THREAD_SCRIPT = """
import sys
from shearbem.assembly import BoundaryOperators, production_rules, save_matrix
from shearbem.geometry import generate_cube_mesh
ops = BoundaryOperators(generate_cube_mesh(1.0, 1), 1.0, 1.0, production_rules(1.0, 1.0))
save_matrix(sys.argv[1], ops.V_dp1)
save_matrix(sys.argv[2], ops.K_dp1)
"""


def test_assembly_independent_of_thread_count(tmp_path):
    out = {}
    for n in (1, 4):
        env = dict(os.environ, NUMBA_NUM_THREADS=str(n))
        v, k = tmp_path / f"v{n}.bin", tmp_path / f"k{n}.bin"
        subprocess.run([sys.executable, "-c", _THREAD_SCRIPT, str(v), str(k)], env=env, check=True)
        out[n] = (v.read_bytes(), k.read_bytes())
    assert out[1] == out[4]


# --------------------------------------------------------------------------
# parts against direct surface quadrature of the total kernel


def _face_interior_triangles(mesh):
    on_face = np.abs(mesh.corners) > 1 - 1e-12
    return [t for t in range(mesh.n_triangles) if np.all(on_face[t].sum(axis=1) == 1)]


@pytest.mark.slow
@pytest.mark.parametrize("omega", [0.0, 1.0])
def test_row_sums_match_direct_surface_quadrature(omega):
    mesh = generate_cube_mesh(1.0, 2)
    interior = _face_interior_triangles(mesh)
    pick = interior[:: len(interior) // 5][:5]
    pe = 1.0
    params, scale = bem_kernel_params(pe, omega)
    # the oracle uses a finer difference rule than the assembly
    diff = composite_graded(0.17, 2, 9)
    if omega == 0:
        tail = tail_rule_plain(1.0, 48, 0.5)
        rules = production_rules(pe, omega)
    else:
        tail = windowed_tail_rule(1.0, 256.0, 0.5, 256, params.omega)
        rules = production_rules(pe, omega, L=256.0)
    ref = np.array([single_layer_row_sum(mesh, i, params, scale, diff, tail) for i in pick])
    config = AssemblyConfig(
        SauterSchwabConfig(8, 8, 8, 8, 6), SauterSchwabConfig(6, 6, 6, 6, 4),
        SauterSchwabConfig(near=4, far=4, regular_only=True),
    )
    ops = BoundaryOperators(mesh, pe, omega, rules, config=config)
    p0 = FunctionSpace(mesh, "P0")
    got = ops.V(p0, p0).dense()[pick].sum(axis=1)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-6
