"""Quadrature rules and special functions used by the grid and the bound-state basis."""

import numpy as np
from numpy.polynomial import legendre


def gauss_legendre(n):
    """Gauss-Legendre nodes (ascending) and weights on [-1, 1]."""
    return legendre.leggauss(n)


def gauss_lobatto(n):
    """Gauss-Lobatto-Legendre nodes and weights on [-1, 1] for ``n >= 2`` points.

    Interior nodes are the roots of P'_{n-1}, polished by Newton iteration.
    """
    if n < 2:
        raise ValueError("Lobatto rule needs at least two points")
    p = n - 1
    x = np.empty(n)
    x[0], x[-1] = -1.0, 1.0
    if n > 2:
        # Chebyshev-Gauss-Lobatto initial guess
        y = -np.cos(np.pi * np.arange(1, p) / p)
        dP = legendre.Legendre.basis(p).deriv(1)
        d2P = legendre.Legendre.basis(p).deriv(2)
        for _ in range(100):
            step = dP(y) / d2P(y)
            y = y - step
            if np.max(np.abs(step)) < 1e-16:
                break
        x[1:-1] = np.sort(y)
    w = 2.0 / (p * (p + 1) * legendre.Legendre.basis(p)(x) ** 2)
    return x, w


def lagrange_derivative_matrix(x):
    """D[j, k] = L_k'(x_j) for the Lagrange basis on nodes ``x`` (barycentric form)."""
    n = len(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    c = np.prod(diff, axis=1)
    D = (c[:, None] / c[None, :]) / diff
    np.fill_diagonal(D, 0.0)
    D[np.diag_indices(n)] = -D.sum(axis=1)
    return D


def normalized_legendre(lmax, x):
    """Orthonormal associated Legendre functions for m >= 0.

    Returns ``P[l, m, ...]`` such that ``P[l, m](cos th) * exp(i m phi)`` is the
    Condon-Shortley spherical harmonic Y_lm. Upward recurrence in l at fixed m.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1) + x.shape)
    P[0, 0] = np.sqrt(1.0 / (4.0 * np.pi))
    for m in range(1, lmax + 1):
        P[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(lmax):
        P[m + 1, m] = np.sqrt(2 * m + 3) * x * P[m, m]
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    return P


def spherical_harmonics(lm_pairs, theta, phi):
    """Y_lm(theta, phi) for each (l, m) in ``lm_pairs``; output shape (len(lm_pairs),) + broadcast shape."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    lmax = max(l for l, _ in lm_pairs)
    P = normalized_legendre(lmax, np.cos(theta))
    out = np.empty((len(lm_pairs),) + theta.shape, dtype=complex)
    for k, (l, m) in enumerate(lm_pairs):
        am = abs(m)
        y = P[l, am] * np.exp(1j * am * phi)
        if m < 0:
            y = (-1) ** am * np.conj(y)
        out[k] = y
    return out


def generalized_laguerre(n, a, x):
    """L_n^(a)(x) by the three-term upward recurrence."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)
    prev, cur = np.ones_like(x), 1.0 + a - x
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 + a - x) * cur - (k + a) * prev) / (k + 1)
    return cur
