import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from squarepump.spectra import (FlatSpectrum, LorentzianSpectrum, SpectrumSum, SquareSpectrum,
                                lamb_shift_bound, time_averaged_spectrum)


def _convolution_shape(spec, w):
    """Window convolved with a Lorentzian of FWHM ``width``, normalized at the midpoint."""
    h = 0.5 * spec.width

    def conv(x):
        f = lambda y: h / np.pi / ((x - y) ** 2 + h ** 2)
        return quad(f, spec.omega_lo, spec.omega_hi, points=[x] if spec.omega_lo < x < spec.omega_hi else None,
                    epsabs=0, epsrel=1e-13, limit=500)[0]
    return conv(w) / conv(spec.midpoint)


def _pv_lamb(spec, w):
    """(1/2pi) P int S(x) / (x - w) dx by Cauchy-weighted quadrature plus tails."""
    R = 50.0 * (spec.omega_hi - spec.omega_lo + spec.width) + abs(w)
    core = quad(spec.value, w - R, w + R, weight="cauchy", wvar=w, limit=2000, epsabs=0, epsrel=1e-12)[0]
    f = lambda x: spec.value(x) / (x - w)
    tails = quad(f, w + R, np.inf, limit=500)[0] + quad(f, -np.inf, w - R, limit=500)[0]
    return (core + tails) / (2 * np.pi)


def test_square_midpoint_and_edge():
    s = SquareSpectrum(-40.0, 0.0, 1e-3, 1.0)
    assert s.shape(s.midpoint) == pytest.approx(1.0, abs=1e-15)
    assert s.shape(0.0) == pytest.approx(0.5, abs=1e-4)


def test_shape_matches_convolution_quadrature():
    s = SquareSpectrum(-40.0, 0.0, 1.0, 1.0)
    for w in (10.0, -0.3, -20.0, -41.0):
        assert s.shape(w) == pytest.approx(_convolution_shape(s, w), rel=1e-8, abs=1e-12)


def test_shape_parity_and_range():
    s = SquareSpectrum(-3.0, 1.0, 0.4, 2.0)
    x = np.linspace(0, 8, 101)
    np.testing.assert_allclose(s.shape(s.midpoint + x), s.shape(s.midpoint - x), rtol=1e-12)
    np.testing.assert_allclose(s.lamb_shift(s.midpoint + x), -s.lamb_shift(s.midpoint - x), atol=1e-12)
    v = s.shape(np.linspace(-50, 50, 1001))
    assert np.all(v > 0) and np.all(v <= 1 + 1e-15)
    assert s.lamb_shift(s.midpoint) == pytest.approx(0.0, abs=1e-15)


def test_sharp_edge_limit():
    d = 1e-4
    s = SquareSpectrum(-1.0, 0.0, d, 1.0)
    assert s.shape(-5 * d) > 0.95 and s.shape(-1 + 5 * d) > 0.95
    assert s.shape(5 * d) < 0.05 and s.shape(-1 - 5 * d) < 0.05


@pytest.mark.parametrize("w", [-30.0, -0.7, 0.2, 3.0, 1e-3])
def test_lamb_shift_matches_hilbert_transform(w):
    s = SquareSpectrum(-40.0, 0.0, 1.0, 1.0)
    assert s.lamb_shift(w) == pytest.approx(_pv_lamb(s, w), rel=1e-6)


def test_lorentzian_lamb_shift_matches_hilbert_transform():
    lor = LorentzianSpectrum(0.3, 0.5, 2.0)
    for w in (-1.0, 0.1, 0.55, 2.0):
        assert lor.lamb_shift(w) == pytest.approx(_pv_lamb_lor(lor, w), rel=1e-6)


def _pv_lamb_lor(spec, w):
    R = 200.0 + abs(w)
    core = quad(spec.value, w - R, w + R, weight="cauchy", wvar=w, limit=2000, epsabs=0, epsrel=1e-12)[0]
    f = lambda x: spec.value(x) / (x - w)
    tails = quad(f, w + R, np.inf, limit=500)[0] + quad(f, -np.inf, w - R, limit=500)[0]
    return (core + tails) / (2 * np.pi)


def test_kernel_small_tau_limit():
    s = SquareSpectrum(-3.0, 0.0, 0.5, 2.0)
    expected = 0.25 * s.rate * 3.0 / np.arctan(3.0 / 0.5)
    assert s.memory_kernel(1e-12) == pytest.approx(expected, rel=1e-9)
    # both branches agree across the switch
    t = 1e-6 / 3.0
    assert s.memory_kernel(t * 0.999) == pytest.approx(s.memory_kernel(t * 1.001), rel=1e-6)


def test_kernel_is_causal():
    with pytest.raises(ValueError):
        SquareSpectrum(-1.0, 0.0, 0.1, 1.0).memory_kernel(0.0)
    with pytest.raises(ValueError):
        FlatSpectrum(1.0).memory_kernel(1.0)


def test_kernel_envelope():
    s = SquareSpectrum(-3.0, 0.0, 0.5, 2.0)
    tau = np.linspace(0.1, 40, 200)
    bound = 0.5 * s.rate / np.arctan(3.0 / 0.5) * np.exp(-0.25 * tau) / tau
    assert np.all(np.abs(s.memory_kernel(tau)) <= bound * (1 + 1e-12))


@pytest.mark.parametrize("spec", [SquareSpectrum(-3.0, 0.0, 1.0, 1.0), LorentzianSpectrum(-0.5, 0.8, 1.0)])
def test_kernel_fourier_gives_complex_rate(spec):
    """int_0^inf K(tau) exp(i w tau) dtau = S(w)/2 - i delta(w)."""
    for w in (-1.5, 0.4, 2.0):
        f = lambda t, part: part(spec.memory_kernel(np.array([t]))[0] * np.exp(1j * w * t))
        re = quad(f, 0, 120, args=(np.real,), limit=4000, epsabs=1e-13)[0]
        im = quad(f, 0, 120, args=(np.imag,), limit=4000, epsabs=1e-13)[0]
        ref = complex(spec.complex_rate(w))
        assert abs(re + 1j * im - ref) <= 1e-4 * abs(ref)


def test_kernel_is_fourier_of_spectrum():
    s = SquareSpectrum(-3.0, 0.0, 1.0, 1.0)
    even = lambda w: s.value(w) + s.value(-w)
    odd = lambda w: s.value(w) - s.value(-w)
    for tau in (0.3, 2.0):
        re = quad(even, 0, np.inf, weight="cos", wvar=tau)[0] / (2 * np.pi)
        im = -quad(odd, 0, np.inf, weight="sin", wvar=tau)[0] / (2 * np.pi)
        assert s.memory_kernel(tau) == pytest.approx(re + 1j * im, rel=1e-4)


def test_flat_spectrum_and_modified_factor():
    f = FlatSpectrum(0.7)
    np.testing.assert_array_equal(f.shape(np.linspace(-5, 5, 7)), 1.0)
    np.testing.assert_array_equal(f.modified_factor(np.linspace(-5, 5, 7)), 1.0)
    s = SquareSpectrum(-3.0, 0.0, 0.1, 2.0, lamb=False)
    assert s.modified_factor(-1.5) == pytest.approx(1.0)
    assert np.imag(s.modified_factor(-0.5)) == 0.0


def test_time_average_identity_by_quadrature():
    lor = LorentzianSpectrum(0.0, 0.3, 2.0)
    lo, hi = -1.0, 0.5
    avg = time_averaged_spectrum(lor, lo, hi)
    for w in np.linspace(-3, 2, 11):
        ref = quad(lambda c: lor.shifted(c).value(w), lo, hi, epsabs=0, epsrel=1e-13)[0] / (hi - lo)
        assert avg.value(w) == pytest.approx(ref, rel=1e-10)
    arc_mid = 2 * np.arctan((hi - lo) / 0.3)
    assert avg.value(avg.midpoint) == pytest.approx(lor.rate * 0.15 * arc_mid / (hi - lo), rel=1e-12)


def test_time_average_narrow_sweep_recovers_lorentzian():
    lor = LorentzianSpectrum(0.2, 0.3, 1.0)
    avg = time_averaged_spectrum(lor, 0.2 - 1e-5, 0.2 + 1e-5)
    w = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(avg.value(w), lor.value(w), rtol=1e-8)


def test_sum_and_shift():
    a, b = LorentzianSpectrum(0.0, 0.1, 1.0), LorentzianSpectrum(1.0, 0.2, 0.5)
    s = SpectrumSum((a, b))
    assert s.rate == 1.5
    w = np.linspace(-1, 2, 5)
    np.testing.assert_allclose(s.value(w), a.value(w) + b.value(w))
    np.testing.assert_allclose(s.shifted(0.3).lamb_shift(w + 0.3), s.lamb_shift(w))


def test_lamb_shift_bound_on_ideal_preset():
    """Visited transition frequencies span about [mu - 1, mu + 4]; edges included."""
    rate = 1e-8
    worst = 0.0
    for mu in np.linspace(0, 2.5, 11):
        s = SquareSpectrum(mu - 40.0, mu, 1e-6, rate)
        freqs = np.concatenate([np.linspace(mu - 1, mu + 4, 2001), [mu, mu - 40.0]])
        worst = max(worst, lamb_shift_bound(s, freqs))
    assert worst <= 10 * rate


def test_validation():
    with pytest.raises(ValueError):
        SquareSpectrum(0.0, -1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        SquareSpectrum(-1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        LorentzianSpectrum(0.0, -1.0, 1.0)
    with pytest.raises(TypeError):
        time_averaged_spectrum(SquareSpectrum(-1.0, 0.0, 0.1, 1.0), -1, 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(1e-3, 2), st.floats(-20, 20))
def test_gauge_shift_property(lo, span, width, w):
    s = SquareSpectrum(lo, lo + span, width, 1.0)
    t = s.shifted(0.37)
    assert t.value(w + 0.37) == pytest.approx(s.value(w), rel=1e-9, abs=1e-15)
    assert t.lamb_shift(w + 0.37) == pytest.approx(s.lamb_shift(w), rel=1e-8, abs=1e-12)
