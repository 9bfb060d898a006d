"""
Interior Dirichlet problem on a cube
=====================================

A harmonic polynomial solves the stationary sheared equation only at
Pe = 0, so the shear case uses a plane wave that is an exact solution at
frequency omega. We solve the single-layer (indirect) equation on two
cube refinements and compare the potential with the exact solution on a
circle of radius 0.9 inside the cube.
"""
import numpy as np

from shearbem.assembly import BoundaryOperators, production_rules
from shearbem.geometry import generate_cube_mesh
from shearbem.postprocess import estimate_eoc, point_eval_error
from shearbem.solve import BoundaryData, Formulation, analytic_plane_wave, evaluate_solution, solve_bie

pe, omega = 1.0, 1.0
sol = analytic_plane_wave(omega)
theta = 2 * np.pi * np.arange(10) / 10
points = np.stack([np.zeros(10), 0.9 * np.cos(theta), 0.9 * np.sin(theta)], axis=1)
exact = sol.value(points)

form = Formulation("SL-indirect")
data = BoundaryData(sol.dirichlet, "dirichlet")
rules = production_rules(pe, omega)
hs, errors = [], []
for level in (1, 2):
    mesh = generate_cube_mesh(1.0, level)
    ops = BoundaryOperators(mesh, pe, omega, rules)
    density = solve_bie(form, ops, data)
    values = evaluate_solution(form, density, data, points, pe, omega, rules)
    hs.append(mesh.h)
    errors.append(point_eval_error(values, exact))
    print(f"level {level}: {mesh.n_triangles} triangles, h={mesh.h:.3f}, point error {errors[-1]:.3e}")
print(f"estimated order {estimate_eoc(errors, hs)[0]:.2f}")
