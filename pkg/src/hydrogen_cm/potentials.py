"""Field-free and non-dipole interaction Hamiltonians, electron moments and the CM Hamiltonian.

All interaction terms share the prefactor ``E0 f(t)`` of the pulse. The
non-dipole coupling constant defaults to ``pulse.constants.alpha``; passing
``alpha=0`` switches every beyond-dipole term off.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import DvrGrid, Wavefunction
from .laser import LaserPulse, PhysicalConstants

IMAG_TOLERANCE = 1e-10


class NumericalHealthError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassicalState:
    R: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3)
        P = np.asarray(self.P, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(P))):
            raise ValueError("classical state must be finite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)


@dataclass(frozen=True)
class ElectronMoments:
    x: float = 0.0
    z: float = 0.0
    px: float = 0.0
    py: float = 0.0
    pz: float = 0.0
    t: float = 0.0


def _alpha(pulse, alpha):
    return pulse.constants.alpha if alpha is None else alpha


# -- coefficient-space kernels -------------------------------------------------

def h0_coeffs(grid: DvrGrid, C, mu):
    return -grid.laplacian_radial(C) / (2.0 * mu) - C * grid.inv_r


class InteractionOperator:
    """V1 + V2 at a fixed time and CM position, acting on coefficient arrays.

    ``include_v1``/``include_v2`` allow each piece to be applied on its own.
    """

    def __init__(self, grid: DvrGrid, t, R, pulse: LaserPulse, alpha=None,
                 include_v1=True, include_v2=True):
        self.grid = grid
        a = float(pulse.amplitude(t))
        al = _alpha(pulse, alpha)
        c, s, w = np.cos(pulse.omega * t), np.sin(pulse.omega * t), pulse.omega
        X, _, Z = np.asarray(R, dtype=float)
        self.is_zero = a == 0.0

        lin_x = lin_z = quad = ang = 0.0
        gx = gz = 0.0
        if include_v1:
            lin_x += a * c
            quad += al * a * w * s
            ang += al * a * c
        if include_v2:
            lin_x += al * a * w * s * Z
            lin_z += al * a * w * s * X
            gx += al * a * c * Z
            gz -= al * a * c * X
        sx = grid.sparse
        # one sparse angular operator acting on the stack [C r; C r^2; C; A; B]
        blocks = [lin_x * sx["nx"] + lin_z * sx["nz"], quad * sx["nxz"], ang * sx["ly"]]
        self.has_gradient = gx != 0.0 or gz != 0.0
        if self.has_gradient:
            (ux, dx), (uz, dz) = grid.grad_blocks["x"], grid.grad_blocks["z"]
            # p = -i d/ds
            blocks += [-1j * (gx * ux + gz * uz), -1j * (gx * dx + gz * dz)]
        self.matrix = sp.hstack(blocks, format="csr")
        self._r = grid.r
        self._r2 = grid.r**2

    def __call__(self, C):
        if self.is_zero:
            return np.zeros_like(C)
        parts = [C * self._r, C * self._r2, C]
        if self.has_gradient:
            parts += self.grid.radial_derivative_parts(C)
        return self.matrix @ np.vstack(parts)


def moments_from_coeffs(grid: DvrGrid, C, t=0.0, check=True) -> ElectronMoments:
    A, B = grid.radial_derivative_parts(C)
    Cr = C * grid.r
    sx = grid.sparse
    vals = {
        "x": np.vdot(C, sx["nx"] @ Cr),
        "z": np.vdot(C, sx["nz"] @ Cr),
    }
    for s in "xyz":
        up, down = grid.grad_blocks[s]
        vals["p" + s] = -1j * np.vdot(C, up @ A + down @ B)
    if check:
        scale = max(1.0, float(np.vdot(C, C).real))
        worst = max(abs(v.imag) for v in vals.values())
        if worst > IMAG_TOLERANCE * scale:
            raise NumericalHealthError(f"moment imaginary residue {worst:.3e} exceeds tolerance")
    return ElectronMoments(t=t, **{k: float(v.real) for k, v in vals.items()})


# -- Wavefunction-level API ----------------------------------------------------

def _wrap(psi, C):
    return Wavefunction.from_coeffs(C, psi.grid, psi.t)


def apply_h0(psi: Wavefunction, constants: PhysicalConstants = PhysicalConstants()) -> Wavefunction:
    """(-nabla^2 / 2 mu - 1/r) psi."""
    return _wrap(psi, h0_coeffs(psi.grid, psi.coeffs(), constants.mu))


def apply_v1(psi: Wavefunction, t, pulse: LaserPulse, alpha=None) -> Wavefunction:
    op = InteractionOperator(psi.grid, t, np.zeros(3), pulse, alpha, include_v2=False)
    return _wrap(psi, op(psi.coeffs()))


def apply_v2(psi: Wavefunction, t, R, pulse: LaserPulse, alpha=None) -> Wavefunction:
    op = InteractionOperator(psi.grid, t, R, pulse, alpha, include_v1=False)
    return _wrap(psi, op(psi.coeffs()))


def electron_moments(psi: Wavefunction) -> ElectronMoments:
    """Quadrature expectations of x, z, p_x, p_y, p_z (signed, not absolute values)."""
    return moments_from_coeffs(psi.grid, psi.coeffs(), psi.t)


def hcl_value(state: ClassicalState, moments: ElectronMoments, t, pulse: LaserPulse,
              alpha=None) -> float:
    """P^2/2M + <psi|V2|psi>, using that V2 is linear in X and Z."""
    M = pulse.constants.M
    a = _alpha(pulse, alpha) * pulse.amplitude(t)
    c, s = np.cos(pulse.omega * t), np.sin(pulse.omega * t)
    X, _, Z = state.R
    v2 = a * (c * (Z * moments.px - X * moments.pz)
              + pulse.omega * s * (moments.x * Z + moments.z * X))
    return float(state.P @ state.P / (2.0 * M) + v2)


def cm_force(moments: ElectronMoments, t, pulse: LaserPulse, alpha=None) -> np.ndarray:
    """-dH_cl/dR; independent of R and P."""
    a = _alpha(pulse, alpha) * pulse.amplitude(t)
    c, s, w = np.cos(pulse.omega * t), np.sin(pulse.omega * t), pulse.omega
    return np.array([
        -a * (-c * moments.pz + w * s * moments.z),
        0.0,
        -a * (c * moments.px + w * s * moments.x),
    ])


def hcl_gradients(state: ClassicalState, moments: ElectronMoments, t, pulse: LaserPulse,
                  alpha=None):
    """Return (force, velocity) = (-dH_cl/dR, dH_cl/dP)."""
    return cm_force(moments, t, pulse, alpha), state.P / pulse.constants.M


# -- single-particle potential used to validate the two-body reduction --------------

def _project(psi, values):
    return Wavefunction(values, psi.grid, psi.t).coeffs()


def exact_single_particle_potential(psi: Wavefunction, q, m, t, pulse: LaserPulse,
                                    position_scale=1.0, position_shift=(0.0, 0.0, 0.0),
                                    momentum_scale=1.0, momentum_shift=(0.0, 0.0, 0.0),
                                    order="first") -> Wavefunction:
    """Apply the laser interaction of one point charge to ``psi``.

    The particle's coordinates are affine in the relative electron coordinate:
    ``r_p = position_scale * r + position_shift`` and
    ``p_p = momentum_scale * p + momentum_shift`` (shifts are c-numbers).

    ``order="first"`` keeps terms up to 1/c:
        U = -q E0 f {cos(wt) x + cos(wt) (z p_x - x p_z)/(m c) + (w/c) sin(wt) x z}
    ``order="full"`` keeps the retarded carrier unexpanded:
        U = -q E0 f {x cos(wt - k z) + {cos(wt - k z), z p_x - x p_z}/(2 m c)}
    """
    if order not in ("first", "full"):
        raise ValueError(f"unknown order {order!r}")
    grid = psi.grid
    alpha = pulse.constants.alpha
    w, k = pulse.omega, pulse.k
    a = pulse.amplitude(t)
    sx, sy, sz = position_shift
    xp = position_scale * grid.x + sx
    zp = position_scale * grid.z + sz
    C = psi.coeffs()

    def momentum(Cin, s, shift):
        return momentum_scale * grid.momentum(Cin, s) + shift * Cin

    def mult(Cin, f):
        return _project(psi, grid.values_from_coeffs(Cin) * f)

    def angular(Cin):
        # z_p p_x - x_p p_z ; z_p commutes with p_x and x_p with p_z
        return mult(momentum(Cin, "x", momentum_shift[0]), zp) - mult(momentum(Cin, "z", momentum_shift[2]), xp)

    inv_mc = 1.0 / (m * pulse.constants.c)
    if order == "first":
        c, s = np.cos(w * t), np.sin(w * t)
        out = c * mult(C, xp) + c * inv_mc * angular(C) + w * alpha * s * mult(C, xp * zp)
    else:
        carrier = np.cos(w * t - k * zp)
        out = mult(C, xp * carrier) + 0.5 * inv_mc * (mult(angular(C), carrier) + angular(mult(C, carrier)))
    return Wavefunction.from_coeffs(-q * a * out, grid, psi.t)


def exact_pair_potential(psi: Wavefunction, R, P, t, pulse: LaserPulse, m_e=None, m_p=None,
                         order="first") -> Wavefunction:
    """U(r_e) + U(R_p) with the exact CM/relative substitution.

    r_e = (m_p/M) r + R,  p_e = p + (m_e/M) P,  R_p = R - (m_e/M) r,  p_p = (m_p/M) P - p.
    ``m_p=np.inf`` gives the infinitely heavy proton limit.
    """
    m_e = pulse.constants.m_e if m_e is None else m_e
    m_p = pulse.constants.m_p if m_p is None else m_p
    R = np.asarray(R, dtype=float)
    P = np.asarray(P, dtype=float)
    if np.isinf(m_p):
        fe, fp = 0.0, 1.0
    else:
        M = m_e + m_p
        fe, fp = m_e / M, m_p / M
    ue = exact_single_particle_potential(psi, -1.0, m_e, t, pulse, fp, R, 1.0, fe * P, order)
    up = exact_single_particle_potential(psi, +1.0, m_p, t, pulse, -fe, R, -1.0, fp * P, order)
    return Wavefunction(ue.values + up.values, psi.grid, psi.t)
