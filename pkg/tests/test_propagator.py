import numpy as np
import pytest
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from hydrogen_cm.grid import GridSpec, Wavefunction, build_grid
from hydrogen_cm.hydrogen import BoundStateLabel, eigenstate, eigenstate_coeffs, populations_from_coeffs
from hydrogen_cm.laser import LaserPulse, PhysicalConstants
from hydrogen_cm.potentials import (
    ClassicalState,
    ElectronMoments,
    InteractionOperator,
    h0_coeffs,
)
from hydrogen_cm.propagator import (
    PropagationPlan,
    Propagator,
    UnitarityError,
    cayley_apply,
    classical_step,
    lanczos_expm,
    quantum_step,
    read_checkpoint,
    run,
    stormer_verlet_step,
    write_checkpoint,
)

MU = PhysicalConstants().mu
TINY = GridSpec(r_max=20.0, N_r=40, N_theta=3, N_phi=3, absorber_fraction=0.0)


@pytest.fixture(scope="module")
def tiny():
    return build_grid(TINY)


def random_hermitian(n, rng):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (A + A.conj().T) / 2


def test_lanczos_matches_expm(rng):
    A = random_hermitian(60, rng)
    v = rng.standard_normal(60) + 1j * rng.standard_normal(60)
    out = lanczos_expm(lambda u: A @ u, v, 0.05)
    np.testing.assert_allclose(out, expm(-0.05j * A) @ v, atol=1e-12)
    np.testing.assert_array_equal(lanczos_expm(lambda u: A @ u, 0 * v, 0.1), 0 * v)
    with pytest.raises(UnitarityError):
        lanczos_expm(lambda u: A @ u, v, 50.0, max_iter=3)


def test_cayley_matches_closed_form(rng):
    A = random_hermitian(40, rng)
    v = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    I = np.eye(40)
    ref = np.linalg.solve(I + 0.05j * A, (I - 0.05j * A) @ v)
    np.testing.assert_allclose(cayley_apply(lambda u: A @ u, v, 0.1), ref, atol=1e-12)


@pytest.mark.parametrize("kwargs", [
    {"dt": 0.0}, {"t_end": -1.0}, {"record_stride": 0}, {"sub_solver": "rk4"}, {"splitting": "yoshida"},
])
def test_plan_validation(kwargs):
    base = {"dt": 0.1, "t_start": 0.0, "t_end": 1.0}
    base.update(kwargs)
    with pytest.raises(ValueError):
        PropagationPlan(**base)


def test_plan_steps():
    plan = PropagationPlan(dt=0.1, t_start=-1.0, t_end=1.0)
    assert plan.n_steps == 20 and plan.time(20) == pytest.approx(1.0)


def test_stationary_phase_one_step(desk_grid):
    pulse = LaserPulse(0.0, 0.5, 3)
    dt = pulse.T / 4400
    psi = eigenstate(BoundStateLabel(1), desk_grid)
    out = quantum_step(psi, np.zeros(3), 0.0, dt, pulse)
    ratio = psi.inner(out)
    assert abs(ratio) == pytest.approx(1.0, abs=1e-12)
    assert np.angle(ratio) == pytest.approx(MU / 2 * dt, abs=1e-8)
    assert out.t == pytest.approx(dt)


def test_field_free_populations(desk_grid):
    pulse = LaserPulse(0.0, 0.5, 3)
    plan = PropagationPlan(dt=pulse.T / 400, t_start=0.0, t_end=pulse.T, record_stride=100)
    C0 = eigenstate_coeffs(BoundStateLabel(2, 1, 0), desk_grid)
    res = run(desk_grid, pulse, plan, C0)
    pops = populations_from_coeffs(res.coeffs, desk_grid, 3)
    assert pops[2] == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_array_equal(res.series.Pz, 0.0)
    assert len(res.series) == 5


def _dense(grid, op):
    n = grid.n_lm * len(grid.r)
    cols = []
    for j in range(n):
        e = np.zeros(n, complex)
        e[j] = 1.0
        cols.append(op(e.reshape(grid.n_lm, -1)).ravel())
    return np.array(cols).T


def test_dipole_propagation_matches_dense_oracle(tiny):
    """alpha = 0, frozen CM: split-operator result vs a fine midpoint matrix-exponential reference."""
    pulse = LaserPulse(0.1, 0.5, 3)
    H0 = _dense(tiny, lambda C: h0_coeffs(tiny, C, MU))
    X = _dense(tiny, lambda C: InteractionOperator(tiny, 0.0, np.zeros(3), pulse, alpha=0.0)(C)) / pulse.E0
    C0 = eigenstate_coeffs(BoundStateLabel(1), tiny)
    t0, t1, dt = -1.0, 1.0, 0.0025
    plan = PropagationPlan(dt=dt, t_start=t0, t_end=t1)
    res = run(tiny, pulse, plan, C0, alpha=0.0, freeze_cm=True)

    n_ref = 4000
    h = (t1 - t0) / n_ref
    v = C0.ravel()
    for k in range(n_ref):
        t = t0 + (k + 0.5) * h
        H = H0 + pulse.amplitude(t) * np.cos(pulse.omega * t) * X
        v = expm_multiply(-1j * h * H, v)
    assert np.linalg.norm(res.coeffs.ravel() - v) < 1e-6


def test_krylov_and_cayley_agree(small_grid):
    pulse = LaserPulse(0.08, 0.5, 3)
    C0 = eigenstate_coeffs(BoundStateLabel(1), small_grid)
    out = {}
    for solver in ("krylov", "cayley"):
        plan = PropagationPlan(dt=0.02, t_start=0.0, t_end=0.4, sub_solver=solver)
        out[solver] = run(small_grid, pulse, plan, C0, R0=[0.1, 0, -0.1]).coeffs
    # both are second-order accurate in dt; the exponential differs from Cayley at O(dt^3) per step
    assert np.linalg.norm(out["krylov"] - out["cayley"]) < 1e-6


def test_quantum_second_order(small_grid):
    pulse = LaserPulse(0.1, 0.5, 3)
    C0 = eigenstate_coeffs(BoundStateLabel(1), small_grid)
    finals = []
    for dt in (0.04, 0.02, 0.01):
        plan = PropagationPlan(dt=dt, t_start=-2.0, t_end=2.0)
        finals.append(run(small_grid, pulse, plan, C0, freeze_cm=True).series.x[-1])
    ratio = (finals[0] - finals[1]) / (finals[1] - finals[2])
    assert ratio == pytest.approx(4.0, rel=0.1)


def test_unitarity_without_absorber(small_grid):
    pulse = LaserPulse(0.1, 0.5, 3)
    C0 = eigenstate_coeffs(BoundStateLabel(1), small_grid)
    plan = PropagationPlan(dt=pulse.T / 200, t_start=-pulse.T, t_end=0.0)
    res = run(small_grid, pulse, plan, C0)
    assert res.max_norm_drift < 1e-10


def test_absorber_never_increases_norm(desk_grid):
    pulse = LaserPulse(0.3, 0.5, 1)
    C0 = eigenstate_coeffs(BoundStateLabel(1), desk_grid)
    plan = PropagationPlan(dt=pulse.T / 400, t_start=-0.5 * pulse.T, t_end=0.5 * pulse.T, record_stride=10)
    res = run(desk_grid, pulse, plan, C0)
    assert np.all(np.diff(res.series.norm) <= 1e-12)


# -- classical integrator -------------------------------------------------------------

def test_free_particle_step():
    R, P = stormer_verlet_step([1.0, 2.0, 3.0], [0.5, 0.0, -1.0], 0.0, 0.1,
                               lambda t, R, P: np.zeros(3), lambda t, R, P: P / 2.0)
    np.testing.assert_allclose(P, [0.5, 0.0, -1.0])
    np.testing.assert_allclose(R, [1.025, 2.0, 2.95])


def test_local_error_is_third_order():
    """Frozen-moments force: one step vs two half steps differ by O(dt^3)."""
    pulse = LaserPulse(0.05, 0.5, 3)
    m = ElectronMoments(x=0.3, z=-0.1, px=0.2, py=0.0, pz=-0.4)
    diffs = []
    for dt in (0.4, 0.2, 0.1):
        cm = ClassicalState([0.0, 0.0, 0.0], [1e-3, 0.0, 2e-3], 1.0)
        one = classical_step(cm, m, m, dt, pulse)
        half = classical_step(classical_step(cm, m, m, dt / 2, pulse), m, m, dt / 2, pulse)
        diffs.append(np.linalg.norm(np.r_[one.R - half.R, one.P - half.P]))
    assert np.log2(diffs[0] / diffs[1]) == pytest.approx(3.0, abs=0.3)
    assert np.log2(diffs[1] / diffs[2]) == pytest.approx(3.0, abs=0.3)


def test_implicit_stages_pendulum():
    """R-dependent velocity and P-dependent force exercise the fixed-point stages; energy stays bounded."""
    def H(R, P):
        return 0.5 * P[0] ** 2 * (1 + 0.1 * R[0] ** 2) - np.cos(R[0])

    def force(t, R, P):
        return np.array([-(0.1 * R[0] * P[0] ** 2 + np.sin(R[0])), 0.0, 0.0])

    def velocity(t, R, P):
        return np.array([P[0] * (1 + 0.1 * R[0] ** 2), 0.0, 0.0])

    R, P = np.array([1.0, 0, 0]), np.array([0.0, 0, 0])
    E0 = H(R, P)
    errs = []
    for k in range(20000):
        R, P = stormer_verlet_step(R, P, 0.0, 0.05, force, velocity)
        errs.append(H(R, P) - E0)
    errs = np.abs(errs)
    assert errs.max() < 1e-3
    assert errs[-5000:].max() < 2 * errs[:5000].max()


# -- coupled runs and checkpoints --------------------------------------------

@pytest.fixture(scope="module")
def short_setup(tiny):
    pulse = LaserPulse(0.1, 0.5, 1)
    plan = PropagationPlan(dt=pulse.T / 100, t_start=-0.5 * pulse.T, t_end=0.5 * pulse.T, record_stride=5)
    C0 = eigenstate_coeffs(BoundStateLabel(1), tiny)
    return pulse, plan, C0


def test_dipole_only_keeps_P_constant(tiny, short_setup):
    pulse, plan, C0 = short_setup
    P0 = [1e-3, -2e-3, 3e-3]
    res = run(tiny, pulse, plan, C0, P0=P0, alpha=0.0)
    for c, p in zip(("Px", "Py", "Pz"), P0):
        assert np.all(res.series.channel(c) == p)


def test_freeze_cm(tiny, short_setup):
    pulse, plan, C0 = short_setup
    res = run(tiny, pulse, plan, C0, R0=[0.1, 0, 0], freeze_cm=True)
    assert np.all(res.series.X == 0.1) and np.all(res.series.Pz == 0.0)


def test_time_bookkeeping(tiny, short_setup):
    pulse, plan, C0 = short_setup
    res = run(tiny, pulse, plan, C0)
    assert res.steps == plan.n_steps
    assert res.cm.t == pytest.approx(plan.time(plan.n_steps), abs=1e-12)
    np.testing.assert_allclose(np.diff(res.series.t), plan.dt * plan.record_stride, rtol=1e-10)
    assert res.wavefunction.t == res.cm.t


def test_checkpoint_round_trip(tmp_path, tiny, short_setup):
    pulse, plan, C0 = short_setup
    from hydrogen_cm.propagator import CoupledState
    state = CoupledState(C0 * np.exp(0.3j), ClassicalState([1, 2, 3], [4, 5, 6], 0.25), 17)
    rec = np.arange(28.0).reshape(2, 14)
    path = tmp_path / "state.ckpt"
    write_checkpoint(path, state, TINY, rec, {"note": "x"})
    back, spec, rec2, extra = read_checkpoint(path)
    np.testing.assert_array_equal(back.coeffs, state.coeffs)
    np.testing.assert_array_equal(back.cm.R, state.cm.R)
    np.testing.assert_array_equal(rec2, rec)
    assert back.step == 17 and back.cm.t == 0.25 and spec == TINY and extra == {"note": "x"}
    assert not (tmp_path / "state.ckpt.tmp").exists()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ValueError):
        read_checkpoint(bad)


def test_resume_reproduces_uninterrupted_run(tmp_path, tiny, short_setup):
    pulse, plan, C0 = short_setup
    full = run(tiny, pulse, plan, C0)
    path = str(tmp_path / "run.ckpt")
    first = PropagationPlan(dt=plan.dt, t_start=plan.t_start, t_end=plan.time(40),
                            record_stride=plan.record_stride, checkpoint_every=40)
    run(tiny, pulse, first, C0, checkpoint_path=path)
    resumed = run(tiny, pulse, plan, C0, resume_from=path)
    np.testing.assert_array_equal(resumed.coeffs, full.coeffs)
    np.testing.assert_array_equal(resumed.series.to_array(), full.series.to_array())


def test_failure_writes_checkpoint(tmp_path, tiny, short_setup):
    pulse, plan, C0 = short_setup
    bad = PropagationPlan(dt=plan.dt, t_start=plan.t_start, t_end=plan.t_end, unitarity_tol=-1.0)
    path = str(tmp_path / "fail.ckpt")
    with pytest.raises(UnitarityError) as info:
        run(tiny, pulse, bad, C0, checkpoint_path=path)
    assert info.value.checkpoint == path
    assert len(info.value.partial_records) == 1
    state, _, _, _ = read_checkpoint(path)
    assert state.step == 0
