"""Kernels of the sheared Smoluchowski operator.

Time-domain quantities use scaled time ``tau``: the fundamental solution is

    G = (4 pi tau)^{-3/2} (1 + tau^2/12)^{-1/2} exp(-Pe p^2 / (4 tau)),
    p^2 = (d1 - tau s2 / 2)^2 / (1 + tau^2/12) + d2^2 + d3^2,

with ``d = x - y`` and ``s2 = x2 + y2``. The frequency-domain kernel is
``Ghat = int_0^inf exp(-i omega tau) G dtau`` and is split at ``tau0`` into

* a closed-form singular part, the truncated heat integral times the drift
  factor ``E = exp(Pe d1 s2 / 4)``,
* a bounded difference part ``int_0^tau0 exp(-i omega tau) (G - G_H E)``,
* a smooth tail ``int_tau0^inf exp(-i omega tau) G``.

Scalar numba versions of every kernel live next to the numpy API so the
assembly engine and the pointwise functions share one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import integrate

from .faddeeva import wofz

FOUR_PI = 4.0 * np.pi
#: exp() overflows for arguments above ~709; the drift factor needs Pe R^2 below this.
DRIFT_EXPONENT_LIMIT = 700.0


@dataclass(frozen=True)
class KernelParams:
    """Kernel parameters in scaled time.

    ``shear=False`` switches to the plain heat kernel (no drift, no shear
    anisotropy), which is the Laplace/heat reference mode of the solver.
    """

    pe: float
    omega: float = 0.0
    tau0: float = 1.0
    shear: bool = True

    def __post_init__(self):
        if not (self.pe >= 0 and np.isfinite(self.pe)):
            raise ValueError("pe must be a finite non-negative number")
        if not (self.omega >= 0 and np.isfinite(self.omega)):
            raise ValueError("omega must be a finite non-negative number")
        if not (self.tau0 > 0 and np.isfinite(self.tau0)):
            raise ValueError("tau0 must be positive")


@dataclass(frozen=True)
class KernelEval:
    value: complex
    grad_y: np.ndarray


def bem_kernel_params(pe: float, omega: float, tau0: float = 1.0) -> tuple[KernelParams, float]:
    """Scaled-time kernel parameters and prefactor for physical ``(Pe, omega)``.

    The physical fundamental solution is ``Pe^{3/2} G(Pe t)`` in the scaled
    kernel ``G``, so its transform at frequency ``omega`` equals
    ``sqrt(Pe) Ghat`` at scaled frequency ``omega / Pe``. ``Pe = 0`` selects
    the heat kernel, whose transform is ``exp(-sqrt(i omega) r) / (4 pi r)``.
    """
    if pe < 0 or omega < 0:
        raise ValueError("pe and omega must be non-negative")
    if pe == 0:
        return KernelParams(1.0, omega, tau0, shear=False), 1.0
    return KernelParams(pe, omega / pe, tau0), float(np.sqrt(pe))


def preflight_check(pe: float, r_max: float) -> None:
    """Refuse geometries on which the drift factor would overflow."""
    if pe * r_max**2 > DRIFT_EXPONENT_LIMIT:
        raise ValueError(
            f"Pe * R_max^2 = {pe * r_max**2:.1f} exceeds {DRIFT_EXPONENT_LIMIT}: "
            "the drift factor exp(Pe d1 s2 / 4) overflows on this geometry"
        )


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    s2 = x[..., 1] + y[..., 1]
    return d, s2


def _check_tau(tau, allow_zero=False):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or (not allow_zero and np.any(tau == 0)):
        raise ValueError("tau must be positive")
    return tau


def _shear_terms(params, tau):
    if params.shear:
        return 1.0 + tau**2 / 12.0, tau / 2.0
    return np.ones_like(tau), np.zeros_like(tau)


def eval_G_time(params: KernelParams, x, y, tau):
    """Time-domain fundamental solution G(x, y, tau)."""
    tau = _check_tau(tau)
    d, s2 = _pair(x, y)
    D, half = _shear_terms(params, tau)
    p2 = (d[..., 0] - half * s2) ** 2 / D + d[..., 1] ** 2 + d[..., 2] ** 2
    return (FOUR_PI * tau) ** -1.5 / np.sqrt(D) * np.exp(-params.pe * p2 / (4.0 * tau))


def eval_grad_y_G_time(params: KernelParams, x, y, tau):
    """Gradient of G with respect to ``y``, shape (..., 3)."""
    tau = _check_tau(tau)
    d, s2 = _pair(x, y)
    D, half = _shear_terms(params, tau)
    t = d[..., 0] - half * s2
    dp2 = np.stack([-2.0 * t / D, -2.0 * half * t / D - 2.0 * d[..., 1], -2.0 * d[..., 2]], axis=-1)
    g = eval_G_time(params, x, y, tau)
    return (g * (-params.pe / (4.0 * tau)))[..., None] * dp2


def eval_G_heat(params: KernelParams, x, y, tau):
    """Heat kernel G_H = (4 pi tau)^{-3/2} exp(-Pe r^2 / (4 tau))."""
    tau = _check_tau(tau)
    d, _ = _pair(x, y)
    r2 = np.sum(d * d, axis=-1)
    return (FOUR_PI * tau) ** -1.5 * np.exp(-params.pe * r2 / (4.0 * tau))


def drift_factor(params: KernelParams, x, y):
    """E = exp(Pe d1 s2 / 4); identically 1 without shear."""
    d, s2 = _pair(x, y)
    if not params.shear:
        return np.ones_like(s2)
    return np.exp(params.pe * d[..., 0] * s2 / 4.0)


def _f_exponent(params, d, s2, tau):
    D = 1.0 + tau**2 / 12.0
    d1 = d[..., 0]
    z = tau * params.pe * (d1**2 / 12.0 - s2**2 / 4.0 - tau * d1 * s2 / 12.0) / (4.0 * D)
    return z, D


def eval_f(params: KernelParams, x, y, tau):
    """Relative deviation f with G = G_H E (1 + f); f(tau = 0) = 0."""
    tau = _check_tau(tau, allow_zero=True)
    d, s2 = _pair(x, y)
    if not params.shear:
        return np.zeros(np.broadcast(s2, tau).shape)
    z, D = _f_exponent(params, d, s2, tau)
    return np.expm1(z - 0.5 * np.log(D))


def eval_G_diff(params: KernelParams, x, y, tau):
    """Bounded difference kernel G - G_H E = G_H E f."""
    return eval_G_heat(params, x, y, tau) * drift_factor(params, x, y) * eval_f(params, x, y, tau)


def eval_grad_y_G_diff(params: KernelParams, x, y, tau):
    """Gradient of the difference kernel with respect to ``y``, shape (..., 3)."""
    tau = _check_tau(tau)
    d, s2 = _pair(x, y)
    if not params.shear:
        return np.zeros(np.broadcast(s2, tau).shape + (3,))
    pe = params.pe
    z, D = _f_exponent(params, d, s2, tau)
    f = np.expm1(z - 0.5 * np.log(D))
    zc = tau * pe / (4.0 * D)
    d1 = d[..., 0]
    gz = np.stack(
        [zc * (-2.0 * d1 / 12.0 + tau * s2 / 12.0), zc * (-s2 / 2.0 - tau * d1 / 12.0), np.zeros_like(zc * d1)],
        axis=-1,
    )
    drift = np.stack([-s2, d1, np.zeros_like(d1)], axis=-1) * (pe / 4.0)
    heat = np.asarray(pe / (2.0 * tau))[..., None] * d
    ghe = eval_G_heat(params, x, y, tau) * drift_factor(params, x, y)
    return ghe[..., None] * (f[..., None] * (heat + drift) + (1.0 + f)[..., None] * gz)


# --------------------------------------------------------------------------
# closed-form singular part


@numba.njit(cache=True)
def gsing_scalar(pe, omega, tau0, shear, d1, d2, d3, s2):
    """Truncated heat transform times drift factor, and its y-gradient.

    Returns ``(value, g1, g2, g3)`` as complex numbers. The complex erfc
    products are written through the Faddeeva function so that no factor
    exp(+kappa sqrt(Pe) r) is ever formed.
    """
    r = math.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
    b = math.sqrt(pe)
    st0 = math.sqrt(tau0)
    a = b * r / (2.0 * st0)
    if omega == 0.0:
        s = 2.0 * math.erfc(a) + 0j
        ds = -2.0 * b / math.sqrt(math.pi * tau0) * math.exp(-a * a) + 0j
    else:
        c = math.sqrt(omega) * (0.7071067811865476 + 0.7071067811865476j)
        beta = math.sqrt(0.5 * omega * tau0)
        e0 = np.exp(-a * a - 1j * omega * tau0)
        B = e0 * wofz(-beta + 1j * (beta + a))
        if a >= beta:
            A = e0 * wofz(beta + 1j * (a - beta))
        else:
            A = 2.0 * np.exp(-c * b * r) - e0 * wofz(-beta + 1j * (beta - a))
        s = A + B
        ds = -c * b * (A - B) - 2.0 * b / math.sqrt(math.pi * tau0) * e0
    F = s / (8.0 * math.pi * b * r)
    dF = (ds / r - s / (r * r)) / (8.0 * math.pi * b)
    if shear:
        E = math.exp(0.25 * pe * d1 * s2)
        h1 = -0.25 * pe * s2
        h2 = 0.25 * pe * d1
    else:
        E = 1.0
        h1 = 0.0
        h2 = 0.0
    v = F * E
    q = -dF * E / r
    return v, q * d1 + v * h1, q * d2 + v * h2, q * d3


@numba.njit(cache=True)
def _gsing_many(pe, omega, tau0, shear, d, s2, out):
    for i in range(d.shape[0]):
        v, g1, g2, g3 = gsing_scalar(pe, omega, tau0, shear, d[i, 0], d[i, 1], d[i, 2], s2[i])
        out[i, 0] = v
        out[i, 1] = g1
        out[i, 2] = g2
        out[i, 3] = g3


def eval_Gsing_hat(params: KernelParams, x, y) -> KernelEval:
    """Closed-form ``int_0^tau0 exp(-i omega tau) G_H dtau`` times the drift factor."""
    d, s2 = _pair(x, y)
    if d.ndim != 1:
        raise ValueError("eval_Gsing_hat takes a single point pair; use eval_Gsing_hat_many")
    if np.linalg.norm(d) == 0:
        raise ValueError("singular point r = 0")
    out = eval_Gsing_hat_many(params, d[None], np.atleast_1d(s2))
    return KernelEval(complex(out[0, 0]), out[0, 1:])


def eval_Gsing_hat_many(params: KernelParams, d, s2):
    """Vectorized singular part from differences ``d (n, 3)`` and sums ``s2 (n,)``."""
    d = np.ascontiguousarray(d, dtype=float)
    s2 = np.ascontiguousarray(s2, dtype=float)
    out = np.empty((len(d), 4), dtype=complex)
    _gsing_many(params.pe, params.omega, params.tau0, params.shear, d, s2, out)
    return out


def eval_helmholtz_metric_kernel(x, y):
    """exp(-r) / (4 pi r)."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("singular point r = 0")
    return np.exp(-r) / (FOUR_PI * r)


# --------------------------------------------------------------------------
# time-node tables for the integrated difference and tail kernels


def diff_table(params: KernelParams, nodes, weights) -> np.ndarray:
    """Per-node constants for ``int exp(-i omega tau) G^diff dtau``.

    Columns: tau, Re w, Im w, (4 pi tau)^{-3/2}, Pe/(4 tau), tau Pe/(4 D),
    log(D)/2, where ``w`` already contains ``exp(-i omega tau)``.
    """
    tau = np.asarray(nodes, dtype=float)
    w = np.asarray(weights) * np.exp(-1j * params.omega * tau)
    if params.omega == 0:
        w = np.asarray(weights, dtype=float) + 0j
    D = 1.0 + tau**2 / 12.0
    return np.ascontiguousarray(
        np.stack(
            [tau, w.real, w.imag, (FOUR_PI * tau) ** -1.5, params.pe / (4.0 * tau),
             tau * params.pe / (4.0 * D), 0.5 * np.log(D)],
            axis=1,
        )
    )


def tail_table(params: KernelParams, nodes, weights) -> np.ndarray:
    """Per-node constants for ``int exp(-i omega tau) G dtau``.

    Columns: Re w, Im w, (4 pi tau)^{-3/2} D^{-1/2}, Pe/(4 tau), half, 1/D,
    where ``half = tau/2`` and ``D = 1 + tau^2/12`` (``0`` and ``1`` without shear).
    """
    tau = np.asarray(nodes, dtype=float)
    w = np.asarray(weights) * np.exp(-1j * params.omega * tau)
    if params.omega == 0:
        w = np.asarray(weights) * np.ones_like(tau)
    w = np.asarray(w, dtype=complex)
    if params.shear:
        D = 1.0 + tau**2 / 12.0
        half = tau / 2.0
    else:
        D = np.ones_like(tau)
        half = np.zeros_like(tau)
    return np.ascontiguousarray(
        np.stack([w.real, w.imag, (FOUR_PI * tau) ** -1.5 / np.sqrt(D), params.pe / (4.0 * tau), half, 1.0 / D], axis=1)
    )


@numba.njit(cache=True)
def diff_sum(tab, pe, d1, d2, d3, s2, n1, n2, n3):
    """Time-integrated difference kernel and its n_y-derivative (drift factor included)."""
    r2 = d1 * d1 + d2 * d2 + d3 * d3
    vr = 0.0
    vi = 0.0
    kr = 0.0
    ki = 0.0
    hd = 0.25 * pe * (-s2 * n1 + d1 * n2)
    dn = d1 * n1 + d2 * n2 + d3 * n3
    q1 = d1 * d1 / 12.0 - s2 * s2 / 4.0
    for k in range(tab.shape[0]):
        tau = tab[k, 0]
        zc = tab[k, 5]
        gh = tab[k, 3] * math.exp(-tab[k, 4] * r2)
        z = zc * (q1 - tau * d1 * s2 / 12.0)
        f = math.expm1(z - tab[k, 6])
        v = gh * f
        gz = zc * (n1 * (-d1 / 6.0 + tau * s2 / 12.0) + n2 * (-s2 / 2.0 - tau * d1 / 12.0))
        g = gh * (f * (2.0 * tab[k, 4] * dn + hd) + (1.0 + f) * gz)
        vr += tab[k, 1] * v
        vi += tab[k, 2] * v
        kr += tab[k, 1] * g
        ki += tab[k, 2] * g
    E = math.exp(0.25 * pe * d1 * s2)
    return E * (vr + 1j * vi), E * (kr + 1j * ki)


@numba.njit(cache=True)
def tail_sum(tab, d1, d2, d3, s2, n1, n2, n3):
    """Time-integrated fundamental solution and its n_y-derivative."""
    vr = 0.0
    vi = 0.0
    kr = 0.0
    ki = 0.0
    rest = d2 * d2 + d3 * d3
    for k in range(tab.shape[0]):
        half = tab[k, 4]
        dinv = tab[k, 5]
        t = d1 - half * s2
        p2 = t * t * dinv + rest
        g = tab[k, 2] * math.exp(-tab[k, 3] * p2)
        dp = -2.0 * t * dinv * n1 - (2.0 * half * t * dinv + 2.0 * d2) * n2 - 2.0 * d3 * n3
        gn = -g * tab[k, 3] * dp
        vr += tab[k, 0] * g
        vi += tab[k, 1] * g
        kr += tab[k, 0] * gn
        ki += tab[k, 1] * gn
    return vr + 1j * vi, kr + 1j * ki


@numba.njit(cache=True)
def _table_many(kind, tab, pe, d, s2, n, out):
    for i in range(d.shape[0]):
        if kind == 0:
            v, g = diff_sum(tab, pe, d[i, 0], d[i, 1], d[i, 2], s2[i], n[i, 0], n[i, 1], n[i, 2])
        else:
            v, g = tail_sum(tab, d[i, 0], d[i, 1], d[i, 2], s2[i], n[i, 0], n[i, 1], n[i, 2])
        out[i, 0] = v
        out[i, 1] = g


def integrate_time_part(params: KernelParams, part: str, rule, x, y, n_y=None):
    """Apply a 1D time rule to the difference (``"diff"``) or tail (``"tail"``) kernel.

    Returns ``(value, n_y . grad_y)`` arrays for point pairs ``x, y (m, 3)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = np.ascontiguousarray(x - y)
    s2 = np.ascontiguousarray(x[:, 1] + y[:, 1])
    n = np.zeros_like(d) if n_y is None else np.ascontiguousarray(np.broadcast_to(n_y, d.shape), dtype=float)
    out = np.empty((len(d), 2), dtype=complex)
    if part == "diff":
        if not params.shear:
            return np.zeros(len(d), complex), np.zeros(len(d), complex)
        _table_many(0, diff_table(params, rule.nodes, rule.weights), params.pe, d, s2, n, out)
    elif part == "tail":
        _table_many(1, tail_table(params, rule.nodes, rule.weights), params.pe, d, s2, n, out)
    else:
        raise ValueError(f"unknown part {part!r}")
    return out[:, 0], out[:, 1]


# --------------------------------------------------------------------------
# brute-force reference


def eval_Ghat_reference(params: KernelParams, x, y, tol: float = 1e-12, limit: int = 500) -> KernelEval:
    """Adaptive-quadrature transform of G and its y-gradient (test oracle only).

    ``[0, tau0]`` is integrated with adaptive Gauss-Kronrod; the infinite
    tail with QUADPACK's Fourier routine for ``omega > 0`` and its
    infinite-range routine for ``omega = 0``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(x - y) == 0:
        raise ValueError("reference transform is evaluated for r > 0 only")
    om = params.omega
    t0 = params.tau0

    def comp(k):
        if k == 0:
            return lambda t: float(eval_G_time(params, x, y, t))
        return lambda t: float(eval_grad_y_G_time(params, x, y, t)[k - 1])

    vals = []
    for k in range(4):
        g = comp(k)
        # split the head where the Gaussian switches on
        r2 = float(np.sum((x - y) ** 2))
        knee = min(t0 / 2, params.pe * r2 / 4.0) if params.pe > 0 else t0 / 2
        pts = [p for p in (knee / 8, knee / 2, knee) if 0 < p < t0]
        kw = dict(epsabs=tol * 1e-3, epsrel=tol, limit=limit, full_output=1)
        re, er1, *_ = integrate.quad(lambda t: g(t) * math.cos(om * t), 0, t0, points=pts or None, **kw)
        im, er2, *_ = integrate.quad(lambda t: -g(t) * math.sin(om * t), 0, t0, points=pts or None, **kw) if om else (0.0, 0.0)
        if om == 0:
            tr, er3, *_ = integrate.quad(g, t0, np.inf, **kw)
            ti, er4 = 0.0, 0.0
        else:
            # substitute tau = t0 + s so QAWF integrates cos/sin(omega s)
            c0, s0 = math.cos(om * t0), math.sin(om * t0)
            fw = dict(epsabs=tol * 1e-3, limlst=200, limit=limit, full_output=1)
            a, ea, *_ = integrate.quad(lambda s: g(t0 + s), 0, np.inf, weight="cos", wvar=om, **fw)
            b, eb, *_ = integrate.quad(lambda s: g(t0 + s), 0, np.inf, weight="sin", wvar=om, **fw)
            # exp(-i om (t0+s)) = (c0 - i s0)(cos om s - i sin om s)
            tr = c0 * a - s0 * b
            ti = -s0 * a - c0 * b
            er3, er4 = ea, eb
        vals.append(complex(re + tr, im + ti))
    return KernelEval(vals[0], np.array(vals[1:]))
