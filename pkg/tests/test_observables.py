import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrogen_cm.observables import (
    EmptyWindowError,
    Spectrum,
    TimeSeries,
    UndefinedCorrelationError,
    all_spectra,
    kinetic_energy_average,
    spectral_kinetic_energy,
    spectral_shape_correlation,
    spectrum,
)


def make_series(t, **channels):
    data = {c: np.zeros_like(t) for c in TimeSeries.columns() if c != "t"}
    data["norm"] = np.ones_like(t)
    data.update(channels)
    return TimeSeries(t=t, **data)


def test_series_validation():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        make_series(t, Px=np.zeros(5))
    with pytest.raises(ValueError):
        make_series(np.r_[0.0, 0.1, 0.3, 0.4])
    s = make_series(t)
    assert len(s) == 11 and s.dt == pytest.approx(0.1)
    with pytest.raises(KeyError):
        s.channel("nope")


def test_array_round_trip():
    t = np.linspace(0, 2, 21)
    s = make_series(t, Px=np.sin(t), pz=np.cos(t))
    back = TimeSeries.from_array(s.to_array())
    np.testing.assert_array_equal(back.to_array(), s.to_array())


def test_window_checks():
    t = np.arange(0, 101) * 0.1
    s = make_series(t)
    with pytest.raises(EmptyWindowError):
        s.window_indices((2.0, 2.0))
    with pytest.raises(EmptyWindowError):
        s.window_indices((-1.0, 5.0))
    with pytest.raises(ValueError):
        s.window_indices((1.05, 5.0))
    assert s.window_indices((1.0, 5.0)) == (10, 50)


def test_kinetic_energy_constant():
    t = np.linspace(0, 10, 101)
    M = 1837.0
    s = make_series(t, Pz=np.ones_like(t))
    assert kinetic_energy_average(s, M) == pytest.approx(1 / (2 * M))
    assert kinetic_energy_average(make_series(t), M) == 0.0
    with pytest.raises(EmptyWindowError):
        kinetic_energy_average(s, M, (3.0, 3.0))


def test_kinetic_energy_sinusoid():
    w0 = 0.7
    T = 2 * np.pi / w0
    t = np.linspace(0, 5 * T, 5001)
    s = make_series(t, Pz=np.sin(w0 * t))
    assert kinetic_energy_average(s, 2.0) == pytest.approx(1 / 8, rel=1e-6)


def test_electron_channel_average():
    t = np.linspace(0, 4, 41)
    s = make_series(t, px=np.full_like(t, 0.2))
    assert kinetic_energy_average(s, 0.5, which="electron") == pytest.approx(0.04)


def test_sinusoid_peak_within_one_bin():
    w0 = 0.83
    t = np.arange(4000) * 0.05
    s = make_series(t, Px=np.sin(w0 * t))
    spec = spectrum(s, "Px")
    pos = spec.omega > 0
    peak = spec.omega[pos][np.argmax(spec.density[pos])]
    assert abs(peak - w0) <= spec.d_omega
    neg = spec.omega < 0
    assert abs(spec.omega[neg][np.argmax(spec.density[neg])] + w0) <= spec.d_omega
    assert spec.resolution == pytest.approx(2 * np.pi / (t[-1] - t[0]))


def test_zero_signal():
    t = np.arange(200) * 0.1
    spec = spectrum(make_series(t), "Pz")
    assert np.all(spec.density == 0.0)


@pytest.mark.parametrize("pad", [1, 4])
def test_parseval(pad):
    rng = np.random.default_rng(5)
    t = np.arange(1001) * 0.02
    x = rng.standard_normal(len(t))
    s = make_series(t, Pz=x)
    spec = spectrum(s, "Pz", pad=pad)
    assert spec.integral() == pytest.approx(np.sum(x[:-1] ** 2) * s.dt, rel=1e-8)


def test_matches_direct_riemann_sum():
    t = np.arange(-50, 151) * 0.1
    x = np.exp(-((t - 3) ** 2)) * np.cos(2 * t)
    s = make_series(t, px=x)
    spec = spectrum(s, "px", pad=2)
    for k in (0, 17, len(spec.omega) // 2, -5):
        w = spec.omega[k]
        direct = s.dt * np.sum(x[:-1] * np.exp(1j * w * t[:-1]))
        assert spec.amplitude[k] == pytest.approx(direct, rel=1e-10, abs=1e-14)


def test_window_shift_invariance():
    t = np.arange(0, 3001) * 0.01
    x = np.sin(1.3 * t) + 0.3 * np.cos(0.4 * t)
    s = make_series(t, Px=x)
    shifted = make_series(t + 7.0, Px=x)
    a = spectrum(s, "Px", (2.0, 25.0))
    b = spectrum(shifted, "Px", (9.0, 32.0))
    np.testing.assert_allclose(a.density, b.density, rtol=1e-10, atol=1e-12 * a.density.max())


def test_nyquist_guard_and_options():
    t = np.arange(100) * 0.5
    s = make_series(t, Px=np.sin(t))
    with pytest.raises(ValueError):
        spectrum(s, "Px", omega_max=10.0)
    with pytest.raises(ValueError):
        spectrum(s, "Px", taper="kaiser")
    with pytest.raises(ValueError):
        spectrum(s, "Px", pad=0)
    hann = spectrum(s, "Px", taper="hann")
    assert hann.taper == "hann" and hann.meta["nyquist"] == pytest.approx(np.pi / 0.5)


def test_spectral_kinetic_energy_identity():
    rng = np.random.default_rng(2)
    t = np.arange(801) * 0.05
    s = make_series(t, Px=rng.standard_normal(801), Py=rng.standard_normal(801),
                    Pz=rng.standard_normal(801))
    spectra = all_spectra(s, pad=3)
    M = 1837.0
    assert spectral_kinetic_energy(spectra, M) == pytest.approx(
        kinetic_energy_average(s, M, rule="rectangle"), rel=1e-10)


def _spec(density, omega=None):
    omega = np.linspace(-1, 1, len(density)) if omega is None else omega
    return Spectrum(omega, np.sqrt(density).astype(complex), "Px", (0.0, 1.0))


def test_correlation_identity_and_scale():
    rng = np.random.default_rng(3)
    d = rng.random(64)
    assert spectral_shape_correlation(_spec(d), _spec(d), (-1, 1)) == pytest.approx(1.0)
    assert spectral_shape_correlation(_spec(d), _spec(10 * d), (-1, 1)) == pytest.approx(1.0)


def test_correlation_lag_recovers_shift():
    omega = np.linspace(-1, 1, 201)
    a = np.exp(-((omega - 0.1) / 0.05) ** 2)
    b = np.exp(-((omega - 0.12) / 0.05) ** 2)
    plain = spectral_shape_correlation(_spec(a, omega), _spec(b, omega), (-0.5, 0.5))
    best, lag = spectral_shape_correlation(_spec(a, omega), _spec(b, omega), (-0.5, 0.5),
                                           max_lag=4, return_lag=True)
    assert best > plain and best == pytest.approx(1.0, abs=1e-12) and lag == 2


def test_correlation_of_unrelated_noise():
    rng = np.random.default_rng(11)
    d = rng.random(4000)
    r = spectral_shape_correlation(_spec(d), _spec(d[::-1].copy()), (-1, 1))
    assert abs(r) < 0.1


def test_correlation_errors():
    d = np.ones(32)
    with pytest.raises(UndefinedCorrelationError):
        spectral_shape_correlation(_spec(d), _spec(np.arange(32.0)), (-1, 1))
    with pytest.raises(UndefinedCorrelationError):
        spectral_shape_correlation(_spec(np.arange(32.0)), _spec(np.arange(32.0)), (0.0, 0.05))
    with pytest.raises(ValueError):
        spectral_shape_correlation(_spec(np.arange(32.0)), _spec(np.arange(16.0)), (-1, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=300),
       st.floats(0.001, 10.0), st.integers(1, 5))
def test_parseval_property(values, dt, pad):
    x = np.array(values)
    t = np.arange(len(x)) * dt
    s = make_series(t, Px=x)
    spec = spectrum(s, "Px", pad=pad)
    ref = np.sum(x[:-1] ** 2) * dt
    assert np.all(spec.density >= 0)
    assert spec.integral() == pytest.approx(ref, rel=1e-8, abs=1e-12 * max(1.0, np.max(np.abs(x))) ** 2 * dt)
