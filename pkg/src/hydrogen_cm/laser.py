"""Laser pulse definition and unit conversions (atomic units throughout)."""

from dataclasses import dataclass, field

import numpy as np

BOHR_NM = 0.052917721
INTENSITY_UNIT = 3.51e16  # W/cm^2 per (a.u. field)^2
TIME_UNIT_S = 2.42e-17


@dataclass(frozen=True)
class PhysicalConstants:
    alpha: float = 1.0 / 137.0
    m_e: float = 1.0
    m_p: float = 1836.15267343
    I0: float = INTENSITY_UNIT

    @property
    def c(self) -> float:
        return 1.0 / self.alpha

    @property
    def M(self) -> float:
        return self.m_e + self.m_p

    @property
    def mu(self) -> float:
        return self.m_e * self.m_p / self.M


@dataclass(frozen=True)
class LaserPulse:
    """Linearly polarized (x) pulse propagating along z with a cos^2 envelope.

    The field vanishes identically outside ``[-n_T*T/2, n_T*T/2]``.
    """

    E0: float
    omega: float
    n_T: int
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.E0 < 0:
            raise ValueError(f"E0 must be non-negative, got {self.E0}")
        if int(self.n_T) != self.n_T or self.n_T < 1:
            raise ValueError(f"n_T must be a positive integer, got {self.n_T}")

    @property
    def T(self) -> float:
        return 2.0 * np.pi / self.omega

    @property
    def k(self) -> float:
        return self.omega * self.constants.alpha

    @property
    def half_duration(self) -> float:
        return 0.5 * self.n_T * self.T

    @property
    def t_on(self) -> float:
        return -self.half_duration

    @property
    def t_off(self) -> float:
        return self.half_duration

    def envelope(self, t):
        return envelope(t, self)

    def amplitude(self, t):
        """E0*f(t), the common prefactor of every interaction term."""
        return self.E0 * envelope(t, self)

    def __call__(self, t, z=0.0):
        return field_at(t, z, self)


def envelope(t, pulse: LaserPulse):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) <= pulse.half_duration
    f = np.where(inside, np.cos(np.pi * t / (pulse.n_T * pulse.T)) ** 2, 0.0)
    return f if f.ndim else float(f)


def field_at(t, z, pulse: LaserPulse):
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    e = pulse.E0 * envelope(t, pulse) * np.cos(pulse.omega * t - pulse.k * z)
    return e if np.ndim(e) else float(e)


def field_amplitude_from_intensity(intensity, constants: PhysicalConstants = PhysicalConstants()):
    """Peak field (a.u.) for a cycle-averaged intensity in W/cm^2."""
    if intensity < 0:
        raise ValueError(f"intensity must be non-negative, got {intensity}")
    return float(np.sqrt(intensity / constants.I0))


def omega_from_wavelength(wavelength_nm, constants: PhysicalConstants = PhysicalConstants()):
    if wavelength_nm <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_nm}")
    return float(2.0 * np.pi * constants.c / (wavelength_nm / BOHR_NM))
