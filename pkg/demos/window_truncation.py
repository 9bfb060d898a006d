"""
Sharp versus windowed truncation of an oscillatory tail
========================================================

The model integral int_1^inf exp(-i t) t^{-3/2} dt decays slowly. Cutting
it at L loses a term of order L^{-3/2}. Multiplying the integrand by a
smooth window that switches off between cL and L removes the boundary
term, and the error falls much faster with L.
"""
import numpy as np
from scipy import integrate

from shearbem.quadrature import truncated_rule, windowed_tail_rule

omega = 1.0
f = lambda t: np.exp(-1j * omega * t) * t**-1.5  # noqa: E731

# adaptive Fourier quadrature on the shifted half line
g = lambda s: (1.0 + s) ** -1.5  # noqa: E731
a = integrate.quad(g, 0, np.inf, weight="cos", wvar=omega, epsabs=1e-12, limlst=200)[0]
b = integrate.quad(g, 0, np.inf, weight="sin", wvar=omega, epsabs=1e-12, limlst=200)[0]
exact = np.exp(-1j * omega) * complex(a, -b)
print(f"reference value {exact:.12f}")

print(f"{'L':>6} {'sharp':>10} {'window':>10} {'window x2':>10}")
for L in 2.0 ** np.arange(3, 11):
    n = int(5 * L)
    sharp = truncated_rule(1.0, L, n, omega).integrate(f)
    win = windowed_tail_rule(1.0, L, 0.5, n, omega).integrate(f)
    # the stronger slow-rise form of the same window
    win2 = windowed_tail_rule(1.0, L, 0.1, n, omega, strength=2.0).integrate(f)
    errs = [abs(v - exact) / abs(exact) for v in (sharp, win, win2)]
    print(f"{L:6.0f} " + " ".join(f"{e:10.2e}" for e in errs))
