"""Coupled propagation of the electron wavefunction and the classical center of mass.

One step ``t_n -> t_n + dt``:

1. half kick   P_{n+1/2} = P_n + dt/2 F(t_n)          (F from moments of psi_n)
2. drift       R_{n+1}   = R_n + dt P_{n+1/2} / M
3. quantum     psi_{n+1} = S(dt/2) C(dt) S(dt/2) psi_n
4. half kick   P_{n+1}   = P_{n+1/2} + dt/2 F(t_{n+1})   (moments of psi_{n+1})

``S`` is the exponential of the full interaction V1 + V2 evaluated at the
midpoint time and midpoint CM position, applied by short-iterative Lanczos
(or a Cayley/implicit-midpoint solve); ``C`` is Crank-Nicolson for h0, one
single block-banded factorization reused for the whole run.
Because the CM force depends only on the electron moments and t, the
Stormer-Verlet stages are explicit.
"""

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.linalg.lapack import zgbtrf, zgbtrs
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import DvrGrid, GridSpec, Wavefunction, build_grid
from .laser import LaserPulse, PhysicalConstants
from .observables import TimeSeries
from .potentials import (
    ClassicalState,
    ElectronMoments,
    InteractionOperator,
    NumericalHealthError,
    cm_force,
    moments_from_coeffs,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HCMCKPT\x00"
CHECKPOINT_VERSION = 1


class UnitarityError(NumericalHealthError):
    pass


@dataclass
class PropagationPlan:
    dt: float
    t_start: float
    t_end: float
    record_stride: int = 1
    splitting: str = "strang"
    sub_solver: str = "krylov"
    unitarity_tol: float = 1e-10
    krylov_tol: float = 1e-13
    krylov_max: int = 40
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.sub_solver not in ("krylov", "cayley"):
            raise ValueError(f"unknown sub_solver {self.sub_solver!r}")
        if self.splitting != "strang":
            raise ValueError("only second-order Strang splitting is implemented")

    @property
    def n_steps(self):
        return int(round((self.t_end - self.t_start) / self.dt))

    def time(self, step):
        return self.t_start + step * self.dt


@dataclass
class CoupledState:
    coeffs: np.ndarray
    cm: ClassicalState
    step: int = 0

    @property
    def t(self):
        return self.cm.t


@dataclass
class RunResult:
    series: TimeSeries
    coeffs: np.ndarray
    cm: ClassicalState
    grid: DvrGrid
    steps: int
    max_norm_drift: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def wavefunction(self):
        return Wavefunction.from_coeffs(self.coeffs, self.grid, self.cm.t)


# -- exponentials -----------------------------------------------------------------

def lanczos_expm(matvec, v, tau, tol=1e-13, max_iter=40):
    """exp(-i tau A) v for Hermitian A given as a matvec (short-iterative Lanczos).

    Uses full reorthogonalization; stops once the a-posteriori error estimate
    beta_j |y_j| falls below ``tol``.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return v.copy()
    shape = v.shape
    Q = np.empty((max_iter + 1, v.size), dtype=complex)
    Q[0] = v.ravel() / beta0
    a, b = np.empty(max_iter), np.empty(max_iter)
    for j in range(max_iter):
        w = matvec(Q[j].reshape(shape)).ravel()
        a[j] = np.vdot(Q[j], w).real
        w -= Q[:j + 1].T @ (Q[:j + 1].conj() @ w)
        bj = np.linalg.norm(w)
        if j:
            evals, evecs = eigh_tridiagonal(a[:j + 1], b[:j])
        else:
            evals, evecs = a[:1], np.ones((1, 1))
        y = evecs @ (np.exp(-1j * tau * evals) * evecs[0])
        if bj * abs(y[-1]) < tol or bj < 1e-300:
            break
        b[j] = bj
        Q[j + 1] = w / bj
    else:
        raise UnitarityError(f"Lanczos did not converge in {max_iter} iterations (tau={tau})")
    return (beta0 * (y @ Q[:len(y)])).reshape(shape)


def cayley_apply(matvec, v, tau, tol=1e-14):
    """(1 + i tau A/2)^-1 (1 - i tau A/2) v, solved iteratively."""
    shape = v.shape
    flat = lambda u: matvec(u.reshape(shape)).ravel()
    n = v.size
    op = LinearOperator((n, n), matvec=lambda u: u + 0.5j * tau * flat(u), dtype=complex)
    rhs = v.ravel() - 0.5j * tau * flat(v.ravel())
    sol, info = gmres(op, rhs, x0=v.ravel(), rtol=tol, atol=0.0, restart=50, maxiter=200)
    if info != 0:
        raise UnitarityError(f"Cayley solve did not converge (info={info})")
    return sol.reshape(shape)


# -- propagator -----------------------------------------------------------------------

class Propagator:
    """Holds the pre-factorized field-free step and applies coupled steps."""

    def __init__(self, grid: DvrGrid, pulse: LaserPulse, plan: PropagationPlan,
                 alpha=None, freeze_cm=False):
        self.grid = grid
        self.pulse = pulse
        self.constants = pulse.constants
        self.plan = plan
        self.alpha = pulse.constants.alpha if alpha is None else alpha
        self.freeze_cm = freeze_cm
        self._factorize(plan.dt)

    def _factorize(self, dt):
        # Block-diagonal (one block per lm) banded matrix A = 1 + i dt/2 h0, factorized once.
        g, mu = self.grid, self.constants.mu
        n = len(g.r)
        kl = ku = g.spec.radial_order
        size = g.n_lm * n
        ab = np.zeros((2 * kl + ku + 1, size), dtype=complex)
        K = g.K.tocoo()
        for k, l in enumerate(g.l):
            off = k * n
            diag = l * (l + 1) / (2.0 * mu * g.r**2) - g.inv_r
            ab[kl + ku + K.row - K.col, off + K.col] += 0.5j * dt * K.data / (2.0 * mu)
            ab[kl + ku, off:off + n] += 1.0 + 0.5j * dt * diag
        lu, piv, info = zgbtrf(ab, kl, ku)
        if info != 0:
            raise UnitarityError(f"Crank-Nicolson factorization failed (info={info})")
        self._h0_dt = dt
        self._band = (lu, piv, kl, ku)

    def h0_step(self, C):
        # (1 - iH dt/2) = 2 - A, so the CN update is 2 A^-1 C - C
        lu, piv, kl, ku = self._band
        x, info = zgbtrs(lu, kl, ku, C.reshape(-1), piv)
        if info != 0:
            raise UnitarityError(f"Crank-Nicolson solve failed (info={info})")
        return 2.0 * x.reshape(C.shape) - C

    def _interaction_step(self, C, V, tau):
        if V.is_zero:
            return C
        if self.plan.sub_solver == "krylov":
            return lanczos_expm(V, C, tau, self.plan.krylov_tol, self.plan.krylov_max)
        return cayley_apply(V, C, tau)

    def quantum_step(self, C, t, dt, R):
        """Advance coefficients from t to t + dt with the CM held at R during the step."""
        if abs(dt - self._h0_dt) > 1e-15 * dt:
            self._factorize(dt)
        V = InteractionOperator(self.grid, t + 0.5 * dt, R, self.pulse, self.alpha)
        n0 = np.linalg.norm(C)
        C = self._interaction_step(C, V, 0.5 * dt)
        C = self.h0_step(C)
        C = self._interaction_step(C, V, 0.5 * dt)
        drift = abs(np.linalg.norm(C) - n0)
        if drift > self.plan.unitarity_tol * max(n0, 1e-300):
            raise UnitarityError(f"norm drift {drift:.3e} in step at t={t:.6f}; reduce dt")
        if self.grid.spec.absorber_active:
            C = C * self.grid.mask
        return C

    def step(self, state: CoupledState, moments: ElectronMoments):
        """One coupled step; returns the new state and the moments of the new wavefunction."""
        dt = self.plan.dt
        t = state.cm.t
        t_new = self.plan.time(state.step + 1)
        M = self.constants.M
        R, P = state.cm.R, state.cm.P
        if self.freeze_cm:
            R_new, P_half = R, P
        else:
            P_half = P + 0.5 * dt * cm_force(moments, t, self.pulse, self.alpha)
            R_new = R + dt * P_half / M
        C = self.quantum_step(state.coeffs, t, dt, 0.5 * (R + R_new))
        new_moments = moments_from_coeffs(self.grid, C, t_new)
        if self.freeze_cm:
            P_new = P
        else:
            P_new = P_half + 0.5 * dt * cm_force(new_moments, t_new, self.pulse, self.alpha)
        cm = ClassicalState(R_new, P_new, t_new)
        return CoupledState(C, cm, state.step + 1), new_moments


def quantum_step(psi: Wavefunction, R, t, dt, pulse: LaserPulse, alpha=None, sub_solver="krylov"):
    """Single split-operator step of the wavefunction with the CM frozen at R."""
    plan = PropagationPlan(dt=dt, t_start=t, t_end=t + dt, sub_solver=sub_solver)
    prop = Propagator(psi.grid, pulse, plan, alpha)
    return Wavefunction.from_coeffs(prop.quantum_step(psi.coeffs(), t, dt, R), psi.grid, t + dt)


def stormer_verlet_step(R, P, t, dt, force, velocity, tol=1e-15, max_iter=100):
    """Stormer-Verlet step for dP/dt = force(t, R, P), dR/dt = velocity(t, R, P).

    The first two stages are implicit in general and solved by fixed-point
    iteration; they converge in one pass when force is P-independent and
    velocity is R-independent.
    """
    R = np.asarray(R, dtype=float)
    P = np.asarray(P, dtype=float)
    h = 0.5 * dt
    P_half = P + h * force(t, R, P)
    for _ in range(max_iter):
        nxt = P + h * force(t, R, P_half)
        if np.max(np.abs(nxt - P_half)) <= tol * max(1.0, np.max(np.abs(nxt))):
            P_half = nxt
            break
        P_half = nxt
    v0 = velocity(t, R, P_half)
    R_new = R + dt * v0
    for _ in range(max_iter):
        nxt = R + h * (v0 + velocity(t + dt, R_new, P_half))
        if np.max(np.abs(nxt - R_new)) <= tol * max(1.0, np.max(np.abs(nxt))):
            R_new = nxt
            break
        R_new = nxt
    P_new = P_half + h * force(t + dt, R_new, P_half)
    return R_new, P_new


def classical_step(cm: ClassicalState, moments_start: ElectronMoments, moments_end: ElectronMoments,
                   dt, pulse: LaserPulse, alpha=None) -> ClassicalState:
    """Advance the CM over one step given electron moments at both step ends."""
    t0 = cm.t
    M = pulse.constants.M

    def force(t, R, P):
        m = moments_start if t == t0 else moments_end
        return cm_force(m, t, pulse, alpha)

    R, P = stormer_verlet_step(cm.R, cm.P, t0, dt, force, lambda t, R, P: P / M)
    return ClassicalState(R, P, t0 + dt)


# -- checkpoints ------------------------------------------------------------------------

def write_checkpoint(path, state: CoupledState, grid_spec: GridSpec, records=None, extra=None):
    """Atomically write a version-tagged binary checkpoint.

    Layout: magic (8 bytes) | version u32 | header length u32 | JSON header |
    coefficient payload (complex128, little endian, C order) |
    recorded series payload (float64, little endian).
    """
    C = np.ascontiguousarray(state.coeffs, dtype="<c16")
    rec = np.zeros((0, len(TimeSeries.columns())), "<f8") if records is None else np.ascontiguousarray(records, "<f8")
    header = {
        "grid": asdict(grid_spec),
        "step": int(state.step),
        "t": float(state.cm.t),
        "R": state.cm.R.tolist(),
        "P": state.cm.P.tolist(),
        "coeff_shape": list(C.shape),
        "coeff_dtype": "complex128-le",
        "records_shape": list(rec.shape),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(C.tobytes())
        fh.write(rec.tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return (CoupledState, GridSpec, records array, extra dict)."""
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, n = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(n))
        shape = tuple(header["coeff_shape"])
        C = np.frombuffer(fh.read(16 * int(np.prod(shape))), "<c16").reshape(shape).copy()
        rshape = tuple(header["records_shape"])
        rec = np.frombuffer(fh.read(8 * int(np.prod(rshape))), "<f8").reshape(rshape).copy()
    cm = ClassicalState(header["R"], header["P"], header["t"])
    return CoupledState(C, cm, header["step"]), GridSpec(**header["grid"]), rec, header["extra"]


# -- driver -------------------------------------------------------------------------------

def _record(grid, state, moments, pulse):
    cm = state.cm
    return [cm.t, *cm.R, *cm.P, moments.px, moments.py, moments.pz, moments.x, moments.z,
            float(np.linalg.norm(state.coeffs)), float(pulse(cm.t, 0.0))]


def run(grid: DvrGrid, pulse: LaserPulse, plan: PropagationPlan, initial_coeffs,
        R0=(0.0, 0.0, 0.0), P0=(0.0, 0.0, 0.0), alpha=None, freeze_cm=False,
        checkpoint_path=None, resume_from=None, progress=None) -> RunResult:
    """Propagate from plan.t_start to plan.t_end, recording every ``record_stride`` steps."""
    prop = Propagator(grid, pulse, plan, alpha, freeze_cm)
    if resume_from is not None:
        state, _, rec, _ = read_checkpoint(resume_from)
        records = [list(row) for row in rec]
        if abs(state.cm.t - plan.time(state.step)) > 1e-9 * max(1.0, plan.dt):
            raise ValueError("checkpoint time does not match the plan")
    else:
        state = CoupledState(np.array(initial_coeffs, dtype=complex),
                             ClassicalState(R0, P0, plan.t_start), 0)
        records = []
    moments = moments_from_coeffs(grid, state.coeffs, state.cm.t)
    if not records:
        records.append(_record(grid, state, moments, pulse))
    norm0 = np.linalg.norm(state.coeffs)
    n_steps = plan.n_steps
    max_drift = 0.0
    last_good = state
    try:
        while state.step < n_steps:
            state, moments = prop.step(state, moments)
            last_good = state
            if state.step % plan.record_stride == 0:
                records.append(_record(grid, state, moments, pulse))
            if not grid.spec.absorber_active:
                max_drift = max(max_drift, abs(np.linalg.norm(state.coeffs) - norm0))
            if checkpoint_path and plan.checkpoint_every and state.step % plan.checkpoint_every == 0:
                write_checkpoint(checkpoint_path, state, grid.spec, np.array(records))
            if progress is not None:
                progress(state.step, n_steps)
    except NumericalHealthError as exc:
        exc.checkpoint = None
        exc.partial_records = np.array(records)
        if checkpoint_path:
            write_checkpoint(checkpoint_path, last_good, grid.spec, np.array(records))
            exc.checkpoint = checkpoint_path
        raise
    series = TimeSeries.from_array(np.array(records))
    return RunResult(series, state.coeffs, state.cm, grid, state.step, max_drift)
