"""Radial finite-element DVR combined with a Gaussian-node angular grid.

Wavefunctions live on the product grid ``(r_j, theta_a, phi_b)``.  Derivative
operators act through the spherical-harmonic representation: a wavefunction
is transformed to coefficients ``c[lm, j] = sqrt(w_j) * r_j * psi_lm(r_j)``,
in which the grid quadrature norm is the plain Euclidean norm.  The retained
angular basis is ``l <= N_theta - 1``, ``|m| <= min(l, (N_phi - 1) // 2)``.

Radially, ``r in (0, r_max]`` is split into equal elements carrying
Gauss-Lobatto nodes; the reduced function ``chi = r psi`` vanishes at r = 0.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .special import (
    gauss_legendre,
    gauss_lobatto,
    lagrange_derivative_matrix,
    spherical_harmonics,
)


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    r_max: float = 100.0
    N_r: int = 400
    N_theta: int = 7
    N_phi: int = 7
    radial_order: int = 10
    absorber_fraction: float = 0.1
    absorber_exponent: float = 8.0
    absorber_threshold: float = 400.0

    def validate(self):
        if not self.r_max > 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if self.N_r < 16:
            raise ValueError(f"N_r must be at least 16, got {self.N_r}")
        for name in ("N_theta", "N_phi"):
            n = getattr(self, name)
            if n < 3 or n % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 3, got {n}")
        if self.radial_order < 2:
            raise ValueError("radial_order must be >= 2")
        if self.N_r % self.radial_order:
            raise ValueError(
                f"N_r={self.N_r} must be a multiple of radial_order={self.radial_order}"
            )
        if not 0.0 <= self.absorber_fraction < 1.0:
            raise ValueError("absorber_fraction must lie in [0, 1)")
        if self.absorber_exponent <= 0:
            raise ValueError("absorber_exponent must be positive")

    @property
    def l_max(self):
        return self.N_theta - 1

    @property
    def m_max(self):
        return (self.N_phi - 1) // 2

    @property
    def absorber_active(self):
        return self.absorber_fraction > 0 and self.r_max < self.absorber_threshold


def _fedvr(r_max, n_r, order):
    """Nodes and weights of the radial FEDVR with its stiffness and first-derivative matrices.

    Returned matrices are expressed in the normalized DVR basis:
    ``K[i, j] = int phi_i' phi_j' dr`` and ``D[i, j] = int phi_i phi_j' dr``.
    The node at r = 0 is removed (chi(0) = 0); the node at r_max is kept with a
    natural boundary condition.
    """
    n_el = n_r // order
    h = r_max / n_el
    x, v = gauss_lobatto(order + 1)
    d = lagrange_derivative_matrix(x) * (2.0 / h)
    vloc = v * h / 2.0
    stiff = d.T @ (vloc[:, None] * d)
    first = vloc[:, None] * d

    n_glob = n_el * order + 1
    r = np.empty(n_glob)
    w = np.zeros(n_glob)
    rows, cols, kvals, dvals = [], [], [], []
    jj, kk = np.meshgrid(np.arange(order + 1), np.arange(order + 1), indexing="ij")
    for e in range(n_el):
        off = e * order
        r[off:off + order + 1] = e * h + (x + 1.0) * h / 2.0
        w[off:off + order + 1] += vloc
        rows.append((off + jj).ravel())
        cols.append((off + kk).ravel())
        kvals.append(stiff.ravel())
        dvals.append(first.ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    K = sp.coo_matrix((np.concatenate(kvals), (rows, cols)), shape=(n_glob, n_glob)).tocsr()
    G = sp.coo_matrix((np.concatenate(dvals), (rows, cols)), shape=(n_glob, n_glob)).tocsr()
    r[-1] = r_max

    keep = slice(1, None)
    r, w = r[keep], w[keep]
    s = sp.diags(1.0 / np.sqrt(w))
    K = (s @ K[keep, keep] @ s).tocsr()
    G = s @ G[keep, keep] @ s
    D = (0.5 * (G - G.T)).tocsr()
    K.eliminate_zeros()
    D.eliminate_zeros()
    return r, w, K, D


def _retained_lm(l_max, m_max):
    return [(l, m) for l in range(l_max + 1) for m in range(-min(l, m_max), min(l, m_max) + 1)]


class DvrGrid:
    """Discretization data shared by all operators; read-only after construction."""

    def __init__(self, spec: GridSpec):
        spec.validate()
        self.spec = spec
        self.r, self.w_r, self.K, self.D = _fedvr(spec.r_max, spec.N_r, spec.radial_order)
        self.sqrt_w = np.sqrt(self.w_r)
        self.inv_r = 1.0 / self.r

        ct, self.w_theta = gauss_legendre(spec.N_theta)
        self.theta = np.arccos(ct)
        self.phi = 2.0 * np.pi * np.arange(spec.N_phi) / spec.N_phi
        self.w_phi = np.full(spec.N_phi, 2.0 * np.pi / spec.N_phi)
        self.w_ang = self.w_theta[:, None] * self.w_phi[None, :]

        self.lm = _retained_lm(spec.l_max, spec.m_max)
        self.l = np.array([l for l, _ in self.lm])
        self.m = np.array([m for _, m in self.lm])
        self._index = {lm: k for k, lm in enumerate(self.lm)}

        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.Y = spherical_harmonics(self.lm, th, ph)  # (N_lm, N_theta, N_phi)
        self._fwd = (np.conj(self.Y) * self.w_ang).reshape(len(self.lm), -1)
        self._bwd = self.Y.reshape(len(self.lm), -1).T

        self._l_col = self.l[:, None].astype(float)
        self._lp1 = self._l_col + 1.0
        self._build_angular_matrices()
        self.mask = self._absorbing_mask()

    # -- construction helpers -------------------------------------------------

    def _build_angular_matrices(self):
        spec = self.spec
        ct, wt = gauss_legendre(spec.l_max + 3)
        n_ph = 2 * spec.m_max + 4
        ph = 2.0 * np.pi * np.arange(n_ph) / n_ph
        th, phg = np.meshgrid(np.arccos(ct), ph, indexing="ij")
        wq = (wt[:, None] * np.full(n_ph, 2.0 * np.pi / n_ph)[None, :]).ravel()
        Yq = spherical_harmonics(self.lm, th, phg).reshape(len(self.lm), -1)
        st, cth, cph, sph = np.sin(th).ravel(), np.cos(th).ravel(), np.cos(phg).ravel(), np.sin(phg).ravel()

        def mat(f):
            a = (np.conj(Yq) * (wq * f)) @ Yq.T
            a[np.abs(a) < 1e-15] = 0.0
            return a

        self.nx = mat(st * cph)
        self.ny = mat(st * sph)
        self.nz = mat(cth)
        self.nxz = mat(st * cph * cth)

        up = self.l[:, None] == self.l[None, :] + 1
        down = self.l[:, None] == self.l[None, :] - 1
        # (l -> l+1, l -> l-1) parts of the unit-vector components, stored sparse
        self.grad_blocks = {
            s: (sp.csr_matrix(np.where(up, a, 0.0)), sp.csr_matrix(np.where(down, a, 0.0)))
            for s, a in (("x", self.nx), ("y", self.ny), ("z", self.nz))
        }

        n = len(self.lm)
        ly = np.zeros((n, n), dtype=complex)
        for k, (l, m) in enumerate(self.lm):
            j = self._index.get((l, m + 1))
            if j is not None:
                ly[j, k] += np.sqrt(l * (l + 1) - m * (m + 1)) / 2j
            j = self._index.get((l, m - 1))
            if j is not None:
                ly[j, k] -= np.sqrt(l * (l + 1) - m * (m - 1)) / 2j
        self.ly = ly
        self.sparse = {name: sp.csr_matrix(getattr(self, name)) for name in ("nx", "ny", "nz", "nxz", "ly")}

    def _absorbing_mask(self):
        spec = self.spec
        mask = np.ones_like(self.r)
        if not spec.absorber_active:
            return mask
        r0 = (1.0 - spec.absorber_fraction) * spec.r_max
        outer = self.r > r0
        s = (self.r[outer] - r0) / (spec.r_max - r0)
        mask[outer] = np.cos(0.5 * np.pi * s) ** spec.absorber_exponent
        return mask

    # -- basis bookkeeping ----------------------------------------------------

    @property
    def n_lm(self):
        return len(self.lm)

    @property
    def shape(self):
        return (len(self.r), self.spec.N_theta, self.spec.N_phi)

    def index(self, l, m):
        try:
            return self._index[(l, m)]
        except KeyError:
            raise KeyError(f"(l={l}, m={m}) is outside the retained angular basis") from None

    @cached_property
    def nodes_cartesian(self):
        """Cartesian coordinates (x, y, z) of every grid node, each shaped like ``self.shape``."""
        r = self.r[:, None, None]
        st = np.sin(self.theta)[None, :, None]
        x = r * st * np.cos(self.phi)[None, None, :]
        y = r * st * np.sin(self.phi)[None, None, :]
        z = r * np.cos(self.theta)[None, :, None] * np.ones(self.spec.N_phi)
        return x, y, z

    @property
    def x(self):
        return self.nodes_cartesian[0]

    @property
    def z(self):
        return self.nodes_cartesian[2]

    @property
    def xz(self):
        return self.nodes_cartesian[0] * self.nodes_cartesian[2]

    @cached_property
    def volume_weights(self):
        return (self.w_r * self.r**2)[:, None, None] * self.w_ang[None, :, :]

    def integrate(self, values):
        """Grid quadrature of a function sampled on the nodes."""
        return np.sum(self.volume_weights * values)

    # -- transforms -----------------------------------------------------------

    def coeffs_from_values(self, values):
        f = (self._fwd @ values.reshape(len(self.r), -1).T)  # (N_lm, N_r)
        return f * (self.sqrt_w * self.r)[None, :]

    def values_from_coeffs(self, coeffs):
        f = coeffs / (self.sqrt_w * self.r)[None, :]
        return (self._bwd @ f).T.reshape(self.shape)

    def radial_coeffs(self, radial_function_values):
        """Coefficient vector of a radial profile R(r) sampled on the nodes."""
        return self.sqrt_w * self.r * radial_function_values

    # -- coefficient-space operators -------------------------------------------

    def gradient(self, C, s):
        """Cartesian derivative d/ds (s in 'xyz') in coefficient space."""
        up, down = self.grad_blocks[s]
        return self._gradient(C, up, down)

    def radial_derivative_parts(self, C):
        """(chi' - (l+1) chi/r, chi' + l chi/r): the radial factors feeding l+1 and l-1."""
        DC = (self.D @ C.T).T
        Cr = C * self.inv_r
        return [DC - self._lp1 * Cr, DC + self._l_col * Cr]

    def _gradient(self, C, up, down):
        A, B = self.radial_derivative_parts(C)
        return up @ A + down @ B

    def momentum(self, C, s):
        return -1j * self.gradient(C, s)

    def apply_ly_coeffs(self, C):
        return self.sparse["ly"] @ C

    def laplacian_radial(self, C):
        """Radial+centrifugal part of nabla^2 in coefficient space (negative semidefinite)."""
        KC = (self.K @ C.T).T
        return -KC - (self.l * (self.l + 1))[:, None] * C * self.inv_r**2


def build_grid(spec: GridSpec) -> DvrGrid:
    return DvrGrid(spec)


@dataclass
class Wavefunction:
    """Complex amplitudes psi(r_j, theta_a, phi_b) on a DvrGrid."""

    values: np.ndarray
    grid: DvrGrid = field(repr=False)
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def from_coeffs(cls, coeffs, grid, t=0.0):
        return cls(grid.values_from_coeffs(coeffs), grid, t)

    def coeffs(self):
        return self.grid.coeffs_from_values(self.values)

    def norm(self):
        return float(np.sqrt(self.grid.integrate(np.abs(self.values) ** 2).real))

    def inner(self, other):
        """<self|other> by grid quadrature."""
        _check_same_grid(self, other)
        return complex(self.grid.integrate(np.conj(self.values) * other.values))

    def normalized(self):
        return Wavefunction(self.values / self.norm(), self.grid, self.t)

    def copy(self):
        return Wavefunction(self.values.copy(), self.grid, self.t)


def _check_same_grid(a, b):
    if a.grid is not b.grid and a.grid.spec != b.grid.spec:
        raise GridMismatchError("wavefunctions live on different grids")


def to_spectral(psi: Wavefunction):
    """Weighted reduced coefficients, shape (N_lm, N_r); Euclidean norm equals the grid norm."""
    return psi.coeffs()


def from_spectral(coeffs, grid: DvrGrid, t=0.0) -> Wavefunction:
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (grid.n_lm, len(grid.r)):
        raise GridMismatchError(f"coefficient shape {coeffs.shape} does not match grid")
    return Wavefunction.from_coeffs(coeffs, grid, t)


def _wrap(psi, C):
    return Wavefunction.from_coeffs(C, psi.grid, psi.t)


def apply_ly(psi: Wavefunction) -> Wavefunction:
    return _wrap(psi, psi.grid.apply_ly_coeffs(psi.coeffs()))


def apply_px(psi: Wavefunction) -> Wavefunction:
    return _wrap(psi, psi.grid.momentum(psi.coeffs(), "x"))


def apply_py(psi: Wavefunction) -> Wavefunction:
    return _wrap(psi, psi.grid.momentum(psi.coeffs(), "y"))


def apply_pz(psi: Wavefunction) -> Wavefunction:
    return _wrap(psi, psi.grid.momentum(psi.coeffs(), "z"))


def apply_mask(psi: Wavefunction) -> Wavefunction:
    return Wavefunction(psi.values * psi.grid.mask[:, None, None], psi.grid, psi.t)
