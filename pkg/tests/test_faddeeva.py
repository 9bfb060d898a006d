import mpmath
import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from shearbem.faddeeva import wofz, wofz_array


def test_matches_scipy_on_upper_half_plane_grid():
    x = np.linspace(-15, 15, 241)
    y = np.linspace(0, 15, 121)
    z = (x[:, None] + 1j * y[None, :]).ravel()
    ours = wofz_array(z)
    ref = scipy.special.wofz(z)
    assert np.max(np.abs(ours - ref) / np.abs(ref)) < 1e-13


@pytest.mark.parametrize("z", [0.0, 1.0, 1j, 3.0 + 0.5j, -2.0 + 4.0j, 0.1 + 0.01j, 7.5 + 1e-3j])
def test_high_precision_values(z):
    mpmath.mp.dps = 30
    zz = mpmath.mpc(z)
    ref = complex(mpmath.exp(-zz**2) * mpmath.erfc(-1j * zz))
    assert abs(wofz(complex(z)) - ref) <= 1e-13 * abs(ref)


def test_origin_is_one():
    assert wofz(0j) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-6, 6), st.floats(-3, 0))
def test_lower_half_plane_reflection(x, y):
    z = complex(x, y)
    ref = scipy.special.wofz(z)
    assert abs(wofz(z) - ref) <= 1e-12 * abs(ref)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(0, 20))
def test_symmetry_conj_minus_z(x, y):
    # w(-conj z) = conj w(z)
    z = complex(x, y)
    a = wofz(-z.conjugate())
    b = wofz(z).conjugate()
    assert abs(a - b) <= 1e-14 * abs(b)


def test_array_shape_preserved():
    z = np.array([[0.5 + 1j, 2.0], [1j, -1.0 + 0.2j]])
    out = wofz_array(z)
    assert out.shape == z.shape
    np.testing.assert_allclose(out, scipy.special.wofz(z), rtol=1e-13)
