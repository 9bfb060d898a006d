"""One-dimensional quadrature rules for the time integrals.

The difference kernel has an endpoint singularity of square-root type at
``tau = 0``, which graded composite Gauss rules resolve. The tail over
``(tau0, inf)`` decays algebraically: for ``omega = 0`` it is mapped to a
finite interval by ``u = tau^{-p}``, for ``omega > 0`` it is cut off by a
smooth window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss


@dataclass(frozen=True)
class QuadratureRule1D:
    nodes: np.ndarray
    weights: np.ndarray
    a: float
    b: float
    descriptor: str = "plain"

    def __post_init__(self):
        for name in ("nodes", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.nodes)

    def integrate(self, func):
        return np.sum(self.weights * func(self.nodes))


def _gl(n, a, b):
    x, w = leggauss(n)
    h = 0.5 * (b - a)
    return a + h * (x + 1.0), h * w


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0) -> QuadratureRule1D:
    """n-point Gauss-Legendre rule on (a, b)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not b > a:
        raise ValueError("need a < b")
    x, w = _gl(n, a, b)
    return QuadratureRule1D(x, w, a, b, f"gauss({n})")


def graded_breakpoints(sigma: float, N: int) -> np.ndarray:
    """Breakpoints 0 < sigma^N < ... < sigma < 1 of the geometric mesh."""
    return np.concatenate([[0.0], sigma ** np.arange(N, -1, -1.0)])


def composite_graded(sigma: float, nu: int, N: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule1D:
    """Geometrically graded composite Gauss rule, refined toward ``a``.

    Panel ``l = 0..N`` spans ``[t_{l-1}, t_l]`` with ``t_l = sigma^{N-l}``,
    ``t_{-1} = 0``, and carries ``(l + 1) nu`` Gauss points.
    """
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    if nu < 1 or N < 0:
        raise ValueError("need nu >= 1 and N >= 0")
    if not b > a:
        raise ValueError("need a < b")
    t = graded_breakpoints(sigma, N)
    xs, ws = [], []
    for l in range(N + 1):
        x, w = _gl((l + 1) * nu, t[l], t[l + 1])
        xs.append(x)
        ws.append(w)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    return QuadratureRule1D(a + (b - a) * x, (b - a) * w, a, b, f"composite(sigma={sigma},nu={nu},N={N})")


def _substituted(base: QuadratureRule1D, tau0: float, exponent: float, descriptor: str) -> QuadratureRule1D:
    # u = tau^{-p}: tau = u^{-1/p}, dtau = (1/p) u^{-1/p-1} du
    u = base.nodes
    tau = u ** (-1.0 / exponent)
    w = base.weights * u ** (-1.0 / exponent - 1.0) / exponent
    order = np.argsort(tau)
    return QuadratureRule1D(tau[order], w[order], tau0, np.inf, descriptor)


def tail_rule_stationary(tau0: float, sigma: float, nu: int, N: int, exponent: float = 1.5) -> QuadratureRule1D:
    """Rule for ``int_tau0^inf g(tau) dtau`` through ``u = tau^{-exponent}``.

    The u-interval ``(0, tau0^{-exponent})`` is graded toward ``u = 0``
    (``tau = inf``). Nodes are returned in tau, weights include the Jacobian.
    """
    if not tau0 > 0 or not exponent > 0:
        raise ValueError("need tau0 > 0 and exponent > 0")
    base = composite_graded(sigma, nu, N, 0.0, tau0**-exponent)
    return _substituted(base, tau0, exponent, f"tail(p={exponent},{base.descriptor})")


def tail_rule_plain(tau0: float, n: int, exponent: float = 1.5) -> QuadratureRule1D:
    """Plain Gauss-Legendre in ``u = tau^{-exponent}`` (no grading)."""
    base = gauss_legendre(n, 0.0, tau0**-exponent)
    return _substituted(base, tau0, exponent, f"tail(p={exponent},{base.descriptor})")


def window_eta(t, tau_a: float, tau_b: float, strength: float = 1.0):
    """Smooth cut-off: 1 below ``tau_a``, 0 above ``tau_b``, C-infinity in between.

    On the transition ``eta = exp(strength exp(-1/x) / (x - 1))``;
    ``strength = 2`` gives the common slow-rise window of the windowed
    Green function literature.
    """
    if not tau_a < tau_b:
        raise ValueError("need tau_a < tau_b")
    t = np.asarray(t, dtype=float)
    x = (t - tau_a) / (tau_b - tau_a)
    out = np.where(x <= 0, 1.0, 0.0)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(strength * np.exp(-1.0 / xi) / (xi - 1.0))
    return out if out.ndim else float(out)


#: Gauss points per panel of the windowed rule.
WINDOW_PANEL_POINTS = 10


def windowed_panels(tau0: float, L: float, n_points: int, omega: float = 0.0) -> np.ndarray:
    """Panel breakpoints on ``[tau0, L]`` for the windowed rule.

    Panels grow geometrically (length at most half their left end) away from
    ``tau0``. Their length is capped by the point budget ``n_points`` and by
    ``2 / omega``, about thirty points per period of the phase.
    """
    cap = WINDOW_PANEL_POINTS * (L - tau0) / n_points
    if omega > 0:
        cap = min(cap, 2.0 / omega)
    edges = [tau0]
    while edges[-1] < L:
        t = edges[-1]
        edges.append(min(L, t + min(0.5 * t, cap)))
    # avoid a sliver at the end
    if len(edges) > 2 and edges[-1] - edges[-2] < 0.25 * (edges[-2] - edges[-3]):
        edges.pop(-2)
    return np.asarray(edges)


def windowed_tail_rule(
    tau0: float, L: float, c: float = 0.5, n_points: int | None = None, omega: float = 0.0, strength: float = 1.0
) -> QuadratureRule1D:
    """Composite Gauss rule on ``[tau0, L]`` with the window ``eta(t, cL, L)`` in the weights.

    ``n_points`` is the nominal budget (default 5 per unit length); the panel
    layout is described in :func:`windowed_panels`. ``strength`` scales the
    inner exponential of the window (1 is the default slow-rise form).
    """
    if not L > tau0 or not 0 < c < 1:
        raise ValueError("need L > tau0 and 0 < c < 1")
    if n_points is None:
        n_points = int(math.ceil(5 * L))
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if c * L < tau0:
        raise ValueError("window start c*L must not precede tau0")
    edges = windowed_panels(tau0, L, n_points, omega)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = _gl(WINDOW_PANEL_POINTS, lo, hi)
        xs.append(x)
        ws.append(w)
    x = np.concatenate(xs)
    w = np.concatenate(ws) * window_eta(x, c * L, L, strength)
    keep = w > 0
    return QuadratureRule1D(x[keep], w[keep], tau0, L, f"windowed(tau0={tau0},L={L},c={c})")


def truncated_rule(tau0: float, L: float, n_points: int | None = None, omega: float = 0.0) -> QuadratureRule1D:
    """Same panels as :func:`windowed_tail_rule` but with a sharp cut at ``L``."""
    if n_points is None:
        n_points = int(math.ceil(5 * L))
    edges = windowed_panels(tau0, L, n_points, omega)
    xs, ws = zip(*(_gl(WINDOW_PANEL_POINTS, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])))
    return QuadratureRule1D(np.concatenate(xs), np.concatenate(ws), tau0, L, f"truncated(tau0={tau0},L={L})")
