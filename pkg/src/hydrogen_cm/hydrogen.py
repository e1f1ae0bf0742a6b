"""Reduced-mass hydrogen bound states and shell populations."""

from dataclasses import dataclass
from math import factorial

import numpy as np

from .grid import DvrGrid, Wavefunction
from .laser import PhysicalConstants
from .special import generalized_laguerre

# Renormalization is allowed to deviate from 1 by this much before the grid is
# declared too small for the requested state.
RENORM_TOLERANCE = 1e-6


class GridCapacityError(ValueError):
    pass


@dataclass(frozen=True)
class BoundStateLabel:
    n: int
    l: int = 0
    m: int = 0

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.l < self.n or abs(self.m) > self.l:
            raise ValueError(f"invalid hydrogen label (n={self.n}, l={self.l}, m={self.m})")

    def energy(self, constants: PhysicalConstants = PhysicalConstants()):
        return -constants.mu / (2.0 * self.n**2)


@dataclass
class PopulationTable:
    W: dict
    t: float
    residual: float

    def __getitem__(self, n):
        return self.W[n]


def radial_function(n, l, r, mu):
    """R_nl(r) for Bohr radius 1/mu, normalized to int R^2 r^2 dr = 1."""
    rho = 2.0 * mu * np.asarray(r) / n
    norm = np.sqrt((2.0 * mu / n) ** 3 * factorial(n - l - 1) / (2.0 * n * factorial(n + l)))
    return norm * rho**l * np.exp(-rho / 2.0) * generalized_laguerre(n - l - 1, 2 * l + 1, rho)


def radial_coeffs(n, l, grid: DvrGrid, constants: PhysicalConstants = PhysicalConstants()):
    """Unnormalized coefficient vector of R_nl on the radial grid and its grid norm."""
    u = grid.radial_coeffs(radial_function(n, l, grid.r, constants.mu))
    return u, float(np.linalg.norm(u))


def max_shell(grid: DvrGrid, constants: PhysicalConstants = PhysicalConstants()):
    """Largest n whose full l-manifold is representable and fits radially (3 n^2 / mu <= r_max)."""
    radial = int(np.floor(np.sqrt(grid.spec.r_max * constants.mu / 3.0)))
    return min(grid.spec.l_max + 1, radial)


def eigenstate_coeffs(label: BoundStateLabel, grid: DvrGrid,
                      constants: PhysicalConstants = PhysicalConstants()):
    if abs(label.m) > grid.spec.m_max or label.l > grid.spec.l_max:
        raise GridCapacityError(f"{label} is outside the retained angular basis")
    u, norm = radial_coeffs(label.n, label.l, grid, constants)
    if abs(norm - 1.0) > RENORM_TOLERANCE:
        raise GridCapacityError(
            f"grid cannot hold n={label.n}: renormalization factor {norm:.3e} "
            f"(r_max={grid.spec.r_max}, need about {3 * label.n**2 / constants.mu:.0f})"
        )
    C = np.zeros((grid.n_lm, len(grid.r)), dtype=complex)
    C[grid.index(label.l, label.m)] = u / norm
    return C


def eigenstate(label: BoundStateLabel, grid: DvrGrid,
               constants: PhysicalConstants = PhysicalConstants(), t=0.0) -> Wavefunction:
    """phi_nlm sampled on the grid and renormalized by grid quadrature."""
    return Wavefunction.from_coeffs(eigenstate_coeffs(label, grid, constants), grid, t)


def populations_from_coeffs(C, grid: DvrGrid, n_max=5, t=0.0,
                            constants: PhysicalConstants = PhysicalConstants()) -> PopulationTable:
    limit = max_shell(grid, constants)
    if n_max > limit:
        raise GridCapacityError(f"n_max={n_max} exceeds grid capacity; largest usable n is {limit}")
    W = {}
    for n in range(1, n_max + 1):
        total = 0.0
        for l in range(n):
            u, norm = radial_coeffs(n, l, grid, constants)
            u = u / norm
            # m-channels beyond the azimuthal cutoff carry no amplitude in this basis
            for m in range(-min(l, grid.spec.m_max), min(l, grid.spec.m_max) + 1):
                total += abs(u @ C[grid.index(l, m)]) ** 2
        W[n] = float(total)
    return PopulationTable(W=W, t=t, residual=float(1.0 - sum(W.values())))


def populations(psi: Wavefunction, n_max=5,
                constants: PhysicalConstants = PhysicalConstants()) -> PopulationTable:
    """W_n = sum_lm |<phi_nlm|psi>|^2 for n = 1..n_max."""
    return populations_from_coeffs(psi.coeffs(), psi.grid, n_max, psi.t, constants)
