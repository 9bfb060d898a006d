"""
Evaluating the sheared kernel in the frequency domain
======================================================

The frequency-domain kernel is a time integral over (0, inf) of an
anisotropic Gaussian. It is split at tau0 into a closed-form singular
part, a bounded difference part on (0, tau0) and a smooth tail. This
script evaluates each piece at one point pair and compares the sum with
a brute-force adaptive quadrature of the whole integral.
"""
import numpy as np

from shearbem.kernel import KernelParams, eval_Ghat_reference, eval_Gsing_hat, integrate_time_part
from shearbem.quadrature import composite_graded, tail_rule_plain, windowed_tail_rule

x = np.array([0.4, 0.3, -0.2])
y = np.array([-0.1, 0.5, 0.3])

for pe, omega in [(1.0, 0.0), (1.0, 1.0), (4.0, 0.25)]:
    p = KernelParams(pe, omega, tau0=1.0)
    # graded toward tau = 0, where the difference kernel behaves like sqrt(tau)
    diff_rule = composite_graded(0.17, 2, 13)
    if omega == 0:
        # stationary tail: u = tau^{-1/2} turns the algebraic decay into a smooth integrand
        tail_rule = tail_rule_plain(1.0, 64, 0.5)
    else:
        # oscillatory tail: smooth window instead of a hard cut-off
        # low frequencies decay slowly and need a longer window
        tail_rule = windowed_tail_rule(1.0, 512.0 if omega >= 1 else 1024.0, 0.5, None, omega)
    sing = eval_Gsing_hat(p, x, y).value
    diff = integrate_time_part(p, "diff", diff_rule, x, y)[0][0]
    tail = integrate_time_part(p, "tail", tail_rule, x, y)[0][0]
    ref = eval_Ghat_reference(p, x, y, tol=1e-12).value
    total = sing + diff + tail
    print(f"Pe={pe:g} omega={omega:g}")
    print(f"  singular   {sing:.12f}")
    print(f"  difference {diff:.12f}  ({len(diff_rule)} nodes)")
    print(f"  tail       {tail:.12f}  ({len(tail_rule)} nodes)")
    print(f"  sum        {total:.12f}")
    print(f"  reference  {ref:.12f}   relative gap {abs(total - ref) / abs(ref):.1e}")
