"""Time series, windowed spectral densities and kinetic-energy averages."""

from dataclasses import dataclass, field, fields

import numpy as np

CM_CHANNELS = ("Px", "Py", "Pz")
ELECTRON_CHANNELS = ("px", "py", "pz")


class EmptyWindowError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class TimeSeries:
    """Uniformly sampled record of a coupled run."""

    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Px: np.ndarray
    Py: np.ndarray
    Pz: np.ndarray
    px: np.ndarray
    py: np.ndarray
    pz: np.ndarray
    x: np.ndarray
    z: np.ndarray
    norm: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"channel {f.name} has shape {arr.shape}, expected ({n},)")
            setattr(self, f.name, arr)
        if n > 2:
            d = np.diff(self.t)
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])) * n:
                raise ValueError("time series is not uniformly sampled")

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=float).reshape(-1, len(cls.columns()))
        return cls(*array.T)

    def to_array(self):
        return np.column_stack([getattr(self, c) for c in self.columns()])

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def __len__(self):
        return len(self.t)

    def channel(self, name):
        if name not in self.columns():
            raise KeyError(f"unknown channel {name!r}")
        return getattr(self, name)

    def window_indices(self, window):
        """Sample indices (i0, i1) of the window edges; both edges must fall on samples."""
        t_in, t_out = window
        if not t_out > t_in:
            raise EmptyWindowError(f"empty window {window}")
        dt = self.dt
        i0 = int(round((t_in - self.t[0]) / dt))
        i1 = int(round((t_out - self.t[0]) / dt))
        if i0 < 0 or i1 >= len(self.t) or i1 <= i0:
            raise EmptyWindowError(f"window {window} is not inside the series span "
                                   f"[{self.t[0]}, {self.t[-1]}]")
        tol = 1e-6 * dt
        if abs(self.t[i0] - t_in) > tol or abs(self.t[i1] - t_out) > tol:
            raise ValueError(f"window edges {window} are not aligned to samples")
        return i0, i1


def kinetic_energy_average(series: TimeSeries, mass, window=None, which="cm", rule="trapezoid"):
    """Time average of p^2/(2 mass) over the window.

    ``which="cm"`` uses P(t); ``which="electron"`` uses the signed <p(t)>.
    ``rule="rectangle"`` (left Riemann sum) matches the discrete spectral integral exactly.
    """
    names = {"cm": CM_CHANNELS, "electron": ELECTRON_CHANNELS}[which]
    window = (series.t[0], series.t[-1]) if window is None else window
    i0, i1 = series.window_indices(window)
    p2 = sum(series.channel(c)[i0:i1 + 1] ** 2 for c in names)
    span = series.t[i1] - series.t[i0]
    if rule == "trapezoid":
        integral = np.trapezoid(p2, series.t[i0:i1 + 1])
    elif rule == "rectangle":
        integral = np.sum(p2[:-1]) * series.dt
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return float(integral / span / (2.0 * mass))


@dataclass
class Spectrum:
    """Windowed Fourier transform F(w) = int x(t) exp(i w t) dt of one channel on a two-sided axis."""

    omega: np.ndarray
    amplitude: np.ndarray
    channel: str
    window: tuple
    taper: str = "rect"
    pad: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def density(self):
        return np.abs(self.amplitude) ** 2

    @property
    def d_omega(self):
        return float(self.omega[1] - self.omega[0])

    @property
    def resolution(self):
        """Natural frequency resolution 2 pi / (T_out - T_in)."""
        return 2.0 * np.pi / (self.window[1] - self.window[0])

    def band(self, lo, hi):
        sel = (self.omega >= lo) & (self.omega < hi)
        return self.omega[sel], self.density[sel]

    def integral(self):
        """sum |F|^2 dw / 2 pi, equal to sum |x_n|^2 dt over the window."""
        return float(np.sum(self.density) * self.d_omega / (2.0 * np.pi))


def spectrum(series: TimeSeries, channel, window=None, taper="rect", pad=1, omega_max=None) -> Spectrum:
    """Riemann-sum approximation of the windowed transform on the DFT frequency grid.

    Samples ``t_in <= t_n < t_out`` are used. ``pad`` zero-pads the record by that
    factor to sample the same transform more finely in frequency.
    """
    window = (series.t[0], series.t[-1]) if window is None else tuple(window)
    i0, i1 = series.window_indices(window)
    x = series.channel(channel)[i0:i1].astype(float)
    n = len(x)
    dt = series.dt
    nyquist = np.pi / dt
    if omega_max is not None and abs(omega_max) > nyquist:
        raise ValueError(f"requested frequency {omega_max} exceeds Nyquist {nyquist}")
    if taper == "hann":
        x = x * np.sin(np.pi * np.arange(n) / n) ** 2
    elif taper != "rect":
        raise ValueError(f"unknown taper {taper!r}")
    if int(pad) != pad or pad < 1:
        raise ValueError("pad must be a positive integer")
    n_pad = n * int(pad)
    xp = np.zeros(n_pad)
    xp[:n] = x
    # sum_n x_n exp(+i w_k n dt) = n_pad * ifft(x)[k]
    omega = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=dt)
    amp = dt * n_pad * np.fft.ifft(xp) * np.exp(1j * omega * series.t[i0])
    order = np.argsort(omega, kind="stable")
    return Spectrum(omega[order], amp[order], channel, (series.t[i0], series.t[i1]), taper, int(pad),
                    {"samples": n, "dt": dt, "nyquist": nyquist})


def all_spectra(series: TimeSeries, window=None, taper="rect", pad=1):
    return {c: spectrum(series, c, window, taper, pad) for c in CM_CHANNELS + ELECTRON_CHANNELS}


def spectral_kinetic_energy(spectra, mass, which="cm"):
    """Kinetic-energy average recovered from the spectra: sum_s int |F_s|^2 dw/2pi / (2 mass (T_out - T_in))."""
    names = {"cm": CM_CHANNELS, "electron": ELECTRON_CHANNELS}[which]
    first = spectra[names[0]]
    span = first.window[1] - first.window[0]
    return sum(spectra[c].integral() for c in names) / span / (2.0 * mass)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant density")
    return float(np.dot(a, b) / den)


def spectral_shape_correlation(a: Spectrum, b: Spectrum, band, max_lag=0, return_lag=False):
    """Pearson correlation of the max-normalized densities of ``a`` and ``b`` inside ``band``.

    With ``max_lag > 0`` the density of ``b`` is shifted by up to that many
    frequency samples and the best correlation is kept.
    """
    if a.omega.shape != b.omega.shape or np.max(np.abs(a.omega - b.omega)) > 1e-12 * max(1.0, np.max(np.abs(a.omega))):
        raise ValueError("spectra must share a frequency grid")
    lo, hi = band
    idx = np.nonzero((a.omega >= lo) & (a.omega < hi))[0]
    if len(idx) < 3:
        raise UndefinedCorrelationError(f"band {band} holds fewer than 3 frequency samples")
    da, db = a.density, b.density
    ref = da[idx] / np.max(da[idx]) if np.max(da[idx]) > 0 else da[idx]
    best, best_lag = -np.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        j = idx + lag
        if j[0] < 0 or j[-1] >= len(db):
            continue
        peak = np.max(db[j])
        other = db[j] / peak if peak > 0 else db[j]
        c = _pearson(ref, other)
        if c > best:
            best, best_lag = c, lag
    return (best, best_lag) if return_lag else best
