"""Run configuration: a line-oriented ``key = value`` text format.

Grammar
-------
* one ``key = value`` pair per line; blank lines are ignored
* ``#`` starts a comment that runs to the end of the line
* keys are case-sensitive; unknown or repeated keys are errors
* vectors are comma-separated (``R0 = 0, 0, 0``); booleans are
  ``true``/``false``/``yes``/``no``/``1``/``0``

Exactly one of ``wavelength`` (nm) or ``omega`` (a.u.) and exactly one of
``intensity`` (W/cm^2) or ``E0`` (a.u.) must be given, together with ``n_T``.
Times ``t_in``/``t_out`` are in atomic units.
"""

import math
from dataclasses import asdict, dataclass, field, replace

from .grid import GridSpec
from .hydrogen import BoundStateLabel
from .laser import (
    LaserPulse,
    PhysicalConstants,
    field_amplitude_from_intensity,
    omega_from_wavelength,
)


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _float(text):
    return float(text)


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _vector(text):
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"expected three components, got {len(parts)}")
    return tuple(float(p) for p in parts)


def _pair(text):
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"expected two values, got {len(parts)}")
    return tuple(float(p) for p in parts)


_SPECTROSCOPIC = "spdfghik"


def _state(text):
    """``1s``, ``2p`` (m=0), ``2p-1`` or ``n,l,m``."""
    t = text.strip().lower()
    if "," in t or " " in t:
        n, l, m = (int(p) for p in t.replace(",", " ").split())
        return (n, l, m)
    i = 0
    while i < len(t) and t[i].isdigit():
        i += 1
    if i == 0 or i == len(t) or t[i] not in _SPECTROSCOPIC:
        raise ValueError(f"cannot read state label {text!r}")
    m = int(t[i + 1:]) if t[i + 1:] else 0
    return (int(t[:i]), _SPECTROSCOPIC.index(t[i]), m)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


KEYS = {
    "wavelength": _float,
    "omega": _float,
    "intensity": _float,
    "E0": _float,
    "n_T": _int,
    "r_max": _float,
    "N_r": _int,
    "N_theta": _int,
    "N_phi": _int,
    "radial_order": _int,
    "absorber_fraction": _float,
    "absorber_exponent": _float,
    "absorber_threshold": _float,
    "steps_per_cycle": _int,
    "initial_state": _state,
    "R0": _vector,
    "P0": _vector,
    "t_in": _float,
    "t_out": _float,
    "n_max": _int,
    "alpha_override": _float,
    "dipole_only": _bool,
    "freeze_cm": _bool,
    "output_dir": str,
    "record_stride": _int,
    "checkpoint_every": _int,
    "sub_solver": _choice("krylov", "cayley"),
    "spectrum_taper": _choice("rect", "hann"),
    "spectrum_pad": _int,
    "correlation_band": _pair,
    "correlation_max_lag": _int,
    "correlation_threshold": _float,
    "axis_offset": _float,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters plus the derived pulse and time grid."""

    n_T: int
    wavelength: float = None
    omega: float = None
    intensity: float = None
    E0: float = None
    grid: GridSpec = field(default_factory=GridSpec)
    steps_per_cycle: int = 4400
    initial_state: tuple = (1, 0, 0)
    R0: tuple = (0.0, 0.0, 0.0)
    P0: tuple = (0.0, 0.0, 0.0)
    t_in: float = None
    t_out: float = None
    n_max: int = 5
    alpha_override: float = None
    dipole_only: bool = False
    freeze_cm: bool = False
    output_dir: str = "output"
    record_stride: int = 1
    checkpoint_every: int = 0
    sub_solver: str = "krylov"
    spectrum_taper: str = "rect"
    spectrum_pad: int = 16
    correlation_band: tuple = (-0.125, 0.0)
    correlation_max_lag: int = 3
    correlation_threshold: float = 0.5
    axis_offset: float = 0.0
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    # -- derived quantities ------------------------------------------------------

    @property
    def omega_au(self):
        return self.omega if self.omega is not None else omega_from_wavelength(self.wavelength, self.constants)

    @property
    def E0_au(self):
        return self.E0 if self.E0 is not None else field_amplitude_from_intensity(self.intensity, self.constants)

    @property
    def pulse(self):
        return LaserPulse(self.E0_au, self.omega_au, self.n_T, self.constants)

    @property
    def T(self):
        return 2.0 * math.pi / self.omega_au

    @property
    def dt(self):
        return self.T / self.steps_per_cycle

    @property
    def window(self):
        t_in = -0.5 * self.n_T * self.T if self.t_in is None else self.t_in
        t_out = (self.n_T + 1) * self.T if self.t_out is None else self.t_out
        return (t_in, t_out)

    @property
    def t_start(self):
        """Propagation starts at the earlier of the pulse onset and the window start."""
        return min(self.window[0], -0.5 * self.n_T * self.T)

    @property
    def n_steps(self):
        return int(round((self.window[1] - self.t_start) / self.dt))

    @property
    def t_end(self):
        return self.t_start + self.n_steps * self.dt

    @property
    def coupling_alpha(self):
        """Coupling constant for the beyond-dipole terms (0 for dipole-only runs)."""
        if self.dipole_only:
            return 0.0
        return self.constants.alpha if self.alpha_override is None else self.alpha_override

    @property
    def state_label(self):
        return BoundStateLabel(*self.initial_state)

    def validate(self, lines=None):
        lines = lines or {}

        def fail(msg, *keys):
            raise ConfigError(msg, next((lines[k] for k in keys if k in lines), None))

        if (self.wavelength is None) == (self.omega is None):
            fail("exactly one of wavelength or omega must be given", "wavelength", "omega")
        if (self.intensity is None) == (self.E0 is None):
            fail("exactly one of intensity or E0 must be given", "intensity", "E0")
        for key in ("wavelength", "omega"):
            v = getattr(self, key)
            if v is not None and not v > 0:
                fail(f"{key} must be positive", key)
        for key in ("intensity", "E0"):
            v = getattr(self, key)
            if v is not None and v < 0:
                fail(f"{key} must be non-negative", key)
        for key in ("n_T", "steps_per_cycle", "record_stride", "spectrum_pad"):
            if getattr(self, key) < 1:
                fail(f"{key} must be >= 1", key)
        if self.n_max < 1:
            fail("n_max must be >= 1", "n_max")
        if self.checkpoint_every < 0:
            fail("checkpoint_every must be >= 0", "checkpoint_every")
        if self.correlation_max_lag < 0:
            fail("correlation_max_lag must be >= 0", "correlation_max_lag")
        if self.alpha_override is not None and self.alpha_override < 0:
            fail("alpha_override must be non-negative", "alpha_override")
        lo, hi = self.correlation_band
        if not hi > lo:
            fail("correlation_band must be increasing", "correlation_band")
        try:
            self.grid.validate()
        except ValueError as exc:
            fail(str(exc), "N_r", "radial_order", "r_max", "N_theta", "N_phi",
                 "absorber_fraction", "absorber_exponent")
        try:
            label = self.state_label
        except ValueError as exc:
            fail(str(exc), "initial_state")
        if label.l > self.grid.l_max or abs(label.m) > self.grid.m_max:
            fail(f"initial state {self.initial_state} lies outside the angular basis", "initial_state")

        t_in, t_out = self.window
        if not t_out > t_in:
            fail(f"window [{t_in}, {t_out}] is empty", "t_in", "t_out")
        if t_out < 0.5 * self.n_T * self.T:
            fail("t_out must not precede the end of the pulse", "t_out")
        stride_dt = self.dt * self.record_stride
        for key, edge in (("t_in", t_in), ("t_out", t_out)):
            k = (edge - self.t_start) / stride_dt
            if abs(k - round(k)) > 1e-6:
                fail(f"{key}={edge} does not fall on a recorded sample "
                     f"(spacing {stride_dt:.6g} a.u. from t_start={self.t_start:.6g})", key)
        return self

    def resolved(self):
        """Plain dictionary of every input and derived value (for the manifest)."""
        d = asdict(self)
        d["constants"] = {**asdict(self.constants), "c": self.constants.c,
                          "M": self.constants.M, "mu": self.constants.mu}
        d.update(
            omega_au=self.omega_au, E0_au=self.E0_au, T=self.T, dt=self.dt,
            window=list(self.window), t_start=self.t_start, t_end=self.t_end,
            n_steps=self.n_steps, coupling_alpha=self.coupling_alpha,
            absorber_active=self.grid.absorber_active,
        )
        for k, v in list(d.items()):
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_GRID_KEYS = {f for f in GridSpec.__dataclass_fields__}


def parse_config_text(text, base=None):
    """Parse configuration text; ``base`` supplies defaults for keys not present."""
    values, lines = {}, {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", number)
        if key in values:
            raise ConfigError(f"key {key!r} repeated (first on line {lines[key]})", number)
        if not value:
            raise ConfigError(f"key {key!r} has no value", number)
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", number) from None
        lines[key] = number

    grid_values = {k: values.pop(k) for k in list(values) if k in _GRID_KEYS}
    if base is None:
        if "n_T" not in values:
            raise ConfigError("missing required key 'n_T'")
        cfg = RunConfig(n_T=values.pop("n_T"))
    else:
        cfg = base
    try:
        cfg = replace(cfg, grid=replace(cfg.grid, **grid_values), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate(lines)


def parse_config(path):
    """Read and validate a configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)
