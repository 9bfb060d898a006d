import math

import mpmath
import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy import integrate, special

from shearbem.kernel import (
    KernelParams,
    bem_kernel_params,
    drift_factor,
    eval_f,
    eval_G_diff,
    eval_G_heat,
    eval_G_time,
    eval_Ghat_reference,
    eval_grad_y_G_diff,
    eval_grad_y_G_time,
    eval_Gsing_hat,
    eval_helmholtz_metric_kernel,
    integrate_time_part,
    preflight_check,
)
from shearbem.quadrature import composite_graded, tail_rule_plain, windowed_tail_rule

X = np.array([0.5, -0.1, 0.2])
Y = np.array([0.25, -0.05, 0.1])
EYE = np.eye(3)

points = st.tuples(*[st.floats(-1, 1)] * 3).map(np.array)


def distinct(x, y, rmin=0.05):
    return np.linalg.norm(x - y) > rmin


def split_total(params, x, y, L=None):
    """Closed-form part plus quadratures of the difference part and the tail."""
    diff = composite_graded(0.17, 2, 13, 0.0, params.tau0)
    if params.omega == 0:
        tail = tail_rule_plain(params.tau0, 64, 0.5)
    else:
        L = L or (512.0 if params.omega >= 1 else 1024.0) * params.tau0
        tail = windowed_tail_rule(params.tau0, L, 0.5, None, params.omega)
    s = eval_Gsing_hat(params, x, y)
    val, grad = s.value, s.grad_y.copy()
    for part, rule in (("diff", diff), ("tail", tail)):
        val += integrate_time_part(params, part, rule, x, y)[0][0]
        for k in range(3):
            grad[k] += integrate_time_part(params, part, rule, x, y, EYE[k])[1][0]
    return val, grad


# --------------------------------------------------------------------------
# parameters


def test_params_validation():
    with pytest.raises(ValueError):
        KernelParams(-1.0)
    with pytest.raises(ValueError):
        KernelParams(1.0, -0.1)
    with pytest.raises(ValueError):
        KernelParams(1.0, 0.0, 0.0)


def test_physical_scaling():
    p, s = bem_kernel_params(4.0, 2.0, 1.5)
    assert (p.pe, p.omega, p.tau0, p.shear) == (4.0, 0.5, 1.5, True)
    assert s == 2.0
    p0, s0 = bem_kernel_params(0.0, 1.0)
    assert not p0.shear and s0 == 1.0


def test_preflight_refuses_overflow():
    preflight_check(4.0, 10.0)
    with pytest.raises(ValueError, match="overflow"):
        preflight_check(8.0, 10.0)


# --------------------------------------------------------------------------
# time domain


def test_G_coincident_points():
    tau = 1 / (4 * math.pi)
    g = eval_G_time(KernelParams(1.0), np.zeros(3), np.zeros(3), tau)
    assert g == pytest.approx((1 + tau**2 / 12) ** -0.5, rel=1e-15)


def G_mp(pe, x, y, tau):
    mpmath.mp.dps = 30
    x = [mpmath.mpf(float(v)) for v in x]
    y = [mpmath.mpf(float(v)) for v in y]
    pe, tau = mpmath.mpf(pe), mpmath.mpf(tau)
    d = [a - b for a, b in zip(x, y)]
    s2 = x[1] + y[1]
    D = 1 + tau**2 / 12
    p2 = (d[0] - tau * s2 / 2) ** 2 / D + d[1] ** 2 + d[2] ** 2
    return (4 * mpmath.pi * tau) ** mpmath.mpf(-1.5) / mpmath.sqrt(D) * mpmath.exp(-pe * p2 / (4 * tau))


def test_G_high_precision_probe():
    ref = float(G_mp(1, X, Y, 1))
    assert abs(eval_G_time(KernelParams(1.0), X, Y, 1.0) - ref) <= 1e-14 * ref


@settings(max_examples=40, deadline=None)
@given(points, points, st.floats(1e-3, 50), st.sampled_from([0.25, 1.0, 4.0]))
def test_G_high_precision_random(x, y, tau, pe):
    ref = float(G_mp(pe, x, y, tau))
    got = eval_G_time(KernelParams(pe), x, y, tau)
    assert abs(got - ref) <= 1e-13 * ref + 1e-300


def test_G_zero_pe_is_pure_gaussian_factor():
    tau = 0.7
    g = eval_G_time(KernelParams(0.0), X, Y, tau)
    assert g == (4 * np.pi * tau) ** -1.5 / np.sqrt(1 + tau**2 / 12)


def test_G_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        eval_G_time(KernelParams(1.0), X, Y, 0.0)
    with pytest.raises(ValueError):
        eval_f(KernelParams(1.0), X, Y, -1.0)


def test_grad_G_critical_point():
    x = np.array([0.3, 0.0, -0.2])
    np.testing.assert_array_equal(eval_grad_y_G_time(KernelParams(1.0), x, x, 0.5), 0.0)


def test_grad_G_third_component_vanishes_in_plane():
    y = np.array([0.1, 0.4, X[2]])
    assert eval_grad_y_G_time(KernelParams(1.0), X, y, 0.5)[2] == 0.0


def central_difference(f, y, h):
    return np.array([(f(y + h * e) - f(y - h * e)) / (2 * h) for e in EYE])


@settings(max_examples=40, deadline=None)
@given(points, points, st.floats(0.05, 5), st.sampled_from([0.25, 1.0, 4.0]))
def test_grad_G_time_finite_differences(x, y, tau, pe):
    p = KernelParams(pe)
    h = 1e-6 * max(1.0, np.linalg.norm(x - y))
    fd = central_difference(lambda yy: eval_G_time(p, x, yy, tau), y, h)
    g = eval_grad_y_G_time(p, x, y, tau)
    scale = np.linalg.norm(g) + 1e-3 * eval_G_time(p, x, y, tau)
    assert np.linalg.norm(g - fd) <= 1e-6 * scale


def test_grad_G_time_probe_pair():
    p = KernelParams(1.0)
    fd = central_difference(lambda yy: eval_G_time(p, X, yy, 0.7), Y, 1e-6)
    g = eval_grad_y_G_time(p, X, Y, 0.7)
    np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_heat_kernel_values():
    p = KernelParams(1.0)
    assert eval_G_heat(p, np.zeros(3), np.zeros(3), 1 / (4 * math.pi)) == pytest.approx(1.0, rel=1e-15)
    # radial symmetry
    a = eval_G_heat(p, np.zeros(3), np.array([0.3, 0.4, 0.0]), 0.2)
    b = eval_G_heat(p, np.zeros(3), np.array([0.0, 0.0, 0.5]), 0.2)
    assert a == pytest.approx(b, rel=1e-15)


@pytest.mark.parametrize("pe", [0.25, 1.0, 4.0])
def test_heat_kernel_time_integrals(pe):
    p = KernelParams(pe)
    r = float(np.linalg.norm(X - Y))
    full, _ = integrate.quad(lambda t: eval_G_heat(p, X, Y, t), 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    assert full == pytest.approx(1 / (4 * math.pi * math.sqrt(pe) * r), rel=1e-8)
    head, _ = integrate.quad(lambda t: eval_G_heat(p, X, Y, t), 0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    exact = special.erfc(math.sqrt(pe) * r / 2) / (4 * math.pi * math.sqrt(pe) * r)
    assert head == pytest.approx(exact, rel=1e-10)


# --------------------------------------------------------------------------
# difference kernel


def test_f_small_tau_bound():
    grid = np.linspace(-1, 1, 5)
    pts = np.array(np.meshgrid(grid, grid, grid)).reshape(3, -1).T
    p = KernelParams(1.0)
    worst = max(abs(eval_f(p, x, y, 1e-8)) for x in pts for y in pts)
    assert worst <= 1e-7
    assert eval_f(p, X, Y, 0.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(points, points, st.floats(1e-4, 1.0), st.sampled_from([0.25, 1.0, 4.0]))
def test_f_is_order_tau(x, y, tau, pe):
    # |f| <= C tau on (0, tau0] with C from the exponent's coefficients on the unit box
    p = KernelParams(pe)
    assert abs(eval_f(p, x, y, tau)) <= (pe + 0.1) * 1.5 * tau


@settings(max_examples=60, deadline=None)
@given(points, points, st.floats(1e-3, 1.0), st.sampled_from([0.25, 1.0, 4.0]))
@example(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.00390625, 0.25)
def test_difference_identity(x, y, tau, pe):
    # Stated bound 1e-15 |G| against the naive difference. The naive side
    # carries exp() rounding of about |Pe r^2 / (4 tau)| eps |G|, 1.1e-15 |G|
    # for the pinned example, so this fails there; the expm1 form itself is
    # checked against 40-digit arithmetic below. See the decisions ledger.
    p = KernelParams(pe)
    g = eval_G_time(p, x, y, tau)
    direct = g - eval_G_heat(p, x, y, tau) * np.exp(pe / 4 * (x[0] - y[0]) * (x[1] + y[1]))
    assert abs(eval_G_diff(p, x, y, tau) - direct) <= 1e-15 * g


def G_diff_mp(pe, x, y, tau):
    mpmath.mp.dps = 40
    xm = [mpmath.mpf(float(v)) for v in x]
    ym = [mpmath.mpf(float(v)) for v in y]
    tm = mpmath.mpf(tau)
    r2 = sum((a - b) ** 2 for a, b in zip(xm, ym))
    heat = (4 * mpmath.pi * tm) ** mpmath.mpf(-1.5) * mpmath.exp(-pe * r2 / (4 * tm))
    drift = mpmath.exp(mpmath.mpf(pe) / 4 * (xm[0] - ym[0]) * (xm[1] + ym[1]))
    return G_mp(pe, x, y, tau) - heat * drift


@settings(max_examples=60, deadline=None)
@given(points, points, st.floats(1e-3, 1.0), st.sampled_from([0.25, 1.0, 4.0]))
@example(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.00390625, 0.25)
def test_difference_kernel_high_precision(x, y, tau, pe):
    mpmath.mp.dps = 40
    ref = G_diff_mp(pe, x, y, tau)
    g = eval_G_time(KernelParams(pe), x, y, tau)
    assert abs(eval_G_diff(KernelParams(pe), x, y, tau) - float(ref)) <= 1e-14 * g + 1e-300


def test_f_without_drift_terms():
    x = np.array([0.2, 0.3, 0.5])
    y = np.array([0.2, -0.3, -0.1])  # d1 = 0, s2 = 0
    tau = 0.8
    f = eval_f(KernelParams(1.0), x, y, tau)
    assert f == pytest.approx(1 / math.sqrt(1 + tau**2 / 12) - 1, rel=1e-14)
    assert f < 0


@settings(max_examples=40, deadline=None)
@given(points, points, st.floats(0.01, 1.0), st.sampled_from([0.25, 1.0, 4.0]))
def test_grad_G_diff_finite_differences(x, y, tau, pe):
    p = KernelParams(pe)
    h = 1e-6 * max(1.0, np.linalg.norm(x - y))
    fd = central_difference(lambda yy: eval_G_diff(p, x, yy, tau), y, h)
    g = eval_grad_y_G_diff(p, x, y, tau)
    scale = np.linalg.norm(g) + 1e-3 * abs(eval_G_heat(p, x, y, tau))
    assert np.linalg.norm(g - fd) <= 1e-6 * scale


def test_heat_mode_has_no_difference_part():
    p = KernelParams(1.0, shear=False)
    assert eval_f(p, X, Y, 0.5) == 0.0
    assert drift_factor(p, X, Y) == 1.0


# --------------------------------------------------------------------------
# closed-form singular part


def test_gsing_stationary_value():
    x = np.zeros(3)
    y = np.array([0.0, 0.0, 1.0])  # r = 1, d1 s2 = 0
    v = eval_Gsing_hat(KernelParams(1.0), x, y).value
    assert v == pytest.approx(special.erfc(0.5) / (4 * math.pi), rel=1e-15)


@pytest.mark.parametrize("pe, omega", [(1.0, 1.0), (0.25, 4.0), (4.0, 0.25), (1.0, 30.0)])
def test_gsing_oscillatory_vs_quadrature(pe, omega):
    p = KernelParams(pe, omega)
    kw = dict(epsabs=0, epsrel=1e-13, limit=400)
    re, _ = integrate.quad(lambda t: eval_G_heat(p, X, Y, t) * math.cos(omega * t), 0, 1, **kw)
    im, _ = integrate.quad(lambda t: -eval_G_heat(p, X, Y, t) * math.sin(omega * t), 0, 1, **kw)
    ref = complex(re, im) * drift_factor(p, X, Y)
    got = eval_Gsing_hat(p, X, Y).value
    assert abs(got - ref) <= 1e-10 * abs(ref)


def test_gsing_small_omega_limit():
    a = eval_Gsing_hat(KernelParams(1.0, 0.0), X, Y).value
    b = eval_Gsing_hat(KernelParams(1.0, 1e-12), X, Y).value
    assert abs(a - b) <= 1e-10 * abs(a)


def test_gsing_large_tau0_limit():
    pe, omega = 1.0, 1.0
    r = float(np.linalg.norm(X - Y))
    kappa = math.sqrt(omega) * np.exp(1j * math.pi / 4)
    x = np.array([0.0, 0.0, 0.0])
    y = np.array([0.0, 0.0, r])  # no drift factor
    v = eval_Gsing_hat(KernelParams(pe, omega, 1e4), x, y).value
    ref = np.exp(-kappa * math.sqrt(pe) * r) / (4 * math.pi * math.sqrt(pe) * r)
    assert abs(v - ref) <= 1e-6 * abs(ref)


def test_gsing_far_pair_no_overflow():
    # large kappa sqrt(Pe) r would overflow exp(2 kappa sqrt(Pe) r) if formed directly
    x = np.zeros(3)
    y = np.array([0.0, 0.0, 30.0])
    v = eval_Gsing_hat(KernelParams(4.0, 50.0), x, y).value
    assert np.isfinite(v)


@settings(max_examples=40, deadline=None)
@given(points, points, st.sampled_from([0.25, 1.0, 4.0]), st.sampled_from([0.0, 0.25, 1.0, 4.0]))
def test_gsing_gradient_finite_differences(x, y, pe, omega):
    if not distinct(x, y, 0.1):
        return
    p = KernelParams(pe, omega)
    h = 1e-6 * max(1.0, np.linalg.norm(x - y))
    fd = central_difference(lambda yy: eval_Gsing_hat(p, x, yy).value, y, h)
    g = eval_Gsing_hat(p, x, y).grad_y
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_gsing_rejects_coincident_points():
    with pytest.raises(ValueError):
        eval_Gsing_hat(KernelParams(1.0), X, X)


# --------------------------------------------------------------------------
# splitting identity and the brute-force reference


@settings(max_examples=12, deadline=None)
@given(points, points, st.sampled_from([0.25, 1.0, 4.0]), st.sampled_from([0.0, 0.25, 1.0]))
def test_splitting_identity(x, y, pe, omega):
    if not distinct(x, y):
        return
    p = KernelParams(pe, omega)
    ref = eval_Ghat_reference(p, x, y, tol=1e-12)
    val, grad = split_total(p, x, y)
    assert abs(val - ref.value) <= 1e-8 * abs(ref.value)
    assert np.linalg.norm(grad - ref.grad_y) <= 1e-8 * np.linalg.norm(ref.grad_y)


def test_reference_laplace_limit():
    pe = 1e-6
    x = np.zeros(3)
    y = np.array([0.3, 0.0, 0.4])  # s2 = 0
    r = 0.5
    v = eval_Ghat_reference(KernelParams(pe), x, y).value
    assert v.real == pytest.approx(1 / (4 * math.pi * math.sqrt(pe) * r), rel=1e-2)
    assert v.imag == 0.0


def test_reference_rejects_coincident_points():
    with pytest.raises(ValueError):
        eval_Ghat_reference(KernelParams(1.0), X, X)


def test_reference_imaginary_part_against_mpmath():
    pe, omega = 1.0, 1.0
    ref = eval_Ghat_reference(KernelParams(pe, omega), X, Y).value
    mpmath.mp.dps = 20
    f = lambda t: G_mp(pe, X, Y, t) * mpmath.sin(omega * t)  # noqa: E731
    # the Gaussian switches on sharply near t = 0, so the head is integrated separately
    sin_part = mpmath.quad(f, [0, 0.01, 0.05, 0.2, 1]) + mpmath.quadosc(f, [1, mpmath.inf], omega=omega)
    assert abs(ref.imag + float(sin_part)) <= 1e-12 * abs(ref)


@pytest.mark.parametrize("omega", [0.0, 1.0])
def test_reality_at_zero_frequency(omega):
    p = KernelParams(1.0, omega)
    s = eval_Gsing_hat(p, X, Y)
    rule = composite_graded(0.17, 2, 6)
    v, k = integrate_time_part(p, "diff", rule, X[None], Y[None], EYE[0])
    if omega == 0:
        assert s.value.imag == 0.0 and np.all(s.grad_y.imag == 0.0)
        assert v[0].imag == 0.0 and k[0].imag == 0.0
        t = integrate_time_part(p, "tail", tail_rule_plain(1.0, 8, 0.5), X[None], Y[None], EYE[1])
        assert t[0][0].imag == 0.0 and t[1][0].imag == 0.0
    else:
        assert s.value.imag != 0.0


@pytest.mark.parametrize("pe, omega", [(1.0, 0.0), (4.0, 0.0), (1.0, 1.0), (0.25, 1.0)])
def test_split_point_independence(pe, omega):
    x = np.array([0.4, 0.3, -0.2])
    y = np.array([-0.1, 0.5, 0.3])
    v1, g1 = split_total(KernelParams(pe, omega, 1.0), x, y)
    v2, g2 = split_total(KernelParams(pe, omega, 2.0), x, y)
    assert abs(v1 - v2) <= 1e-8 * abs(v1)
    assert np.linalg.norm(g1 - g2) <= 1e-8 * np.linalg.norm(g1)


# --------------------------------------------------------------------------
# metric kernel


def test_helmholtz_metric_kernel():
    assert eval_helmholtz_metric_kernel(np.zeros(3), np.array([1.0, 0, 0])) == pytest.approx(
        math.exp(-1) / (4 * math.pi), rel=1e-15
    )
    assert eval_helmholtz_metric_kernel(X, Y) == eval_helmholtz_metric_kernel(Y, X)
    rs = np.linspace(0.1, 20, 50)
    vals = eval_helmholtz_metric_kernel(np.zeros((50, 3)), rs[:, None] * np.array([0, 1.0, 0]))
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        eval_helmholtz_metric_kernel(X, X)
