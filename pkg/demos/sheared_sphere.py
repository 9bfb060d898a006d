"""
Stress moment of a hard sphere in shear flow
=============================================

The disturbance of the pair density around a hard sphere satisfies an
exterior Neumann problem. We solve the second-kind double-layer equation
on two icosphere levels, compute the moment Q12 of the boundary trace and
extrapolate to zero mesh size assuming second-order convergence.
"""
from shearbem.assembly import BoundaryOperators, production_rules
from shearbem.geometry import generate_sphere_mesh, refine
from shearbem.postprocess import richardson, stress_component
from shearbem.solve import BoundaryData, Formulation, colloid_flux, solve_bie

pe = 1.0
form = Formulation("DL-direct", "exterior", "P1")
data = BoundaryData(colloid_flux(pe), "neumann")
rules = production_rules(pe, 0.0)

mesh = generate_sphere_mesh(1.0, (0.0, 0.0, 0.0), 1)
hs, q12 = [], []
for level in (1, 2):
    density = solve_bie(form, BoundaryOperators(mesh, pe, 0.0, rules), data)
    hs.append(mesh.h)
    q12.append(stress_component(density, 1, 2))
    print(f"level {level}: {mesh.n_triangles} triangles, Q12 = {q12[-1]:.5f}")
    mesh = refine(mesh)
print(f"extrapolated Q12 = {richardson(q12, hs):.5f}")
