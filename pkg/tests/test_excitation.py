import numpy as np
import pytest

from dynident.dynamics import regressor
from dynident.errors import DimensionError, ModelConfigError, ScalingError
from dynident.excitation import (
    FourierTrajectory,
    check_limits,
    condition_number,
    optimize_trajectory,
    random_trajectory,
    trajectory_condition,
)


def test_analytic_derivatives_match_finite_differences(limits):
    traj = random_trajectory(limits, seed=20)
    t = np.linspace(0.2, traj.period - 0.2, 60)
    h = 1e-5
    st = traj.sample(t)
    ahead, behind = traj.sample(t + h), traj.sample(t - h)
    qd_fd = (ahead.q - behind.q) / (2 * h)
    qdd_fd = (ahead.qd - behind.qd) / (2 * h)
    assert np.abs(st.qd - qd_fd).max() < 1e-6
    assert np.abs(st.qdd - qdd_fd).max() < 1e-6


def test_trajectory_is_periodic(limits):
    traj = random_trajectory(limits, seed=21)
    first, again = traj.sample(0.0), traj.sample(traj.period)
    assert np.abs(first.q - again.q).max() < 1e-9
    assert np.abs(first.qd - again.qd).max() < 1e-9
    assert np.abs(first.qdd - again.qdd).max() < 1e-9


def test_random_trajectory_feasible(limits):
    for seed in range(8):
        traj = random_trajectory(limits, seed=seed)
        rep = check_limits(traj, limits)
        assert rep.ok
        assert rep.pos_margin.min() >= 0
        assert rep.vel_margin.min() >= 0


def test_check_limits_flags_violations(limits):
    traj = random_trajectory(limits, seed=3)
    blown = FourierTrajectory(traj.base_freq, traj.q0, traj.a * 40.0, traj.b * 40.0)
    rep = check_limits(blown, limits)
    assert not rep.ok
    assert rep.vel_margin.min() < 0


def test_serialization_round_trip(limits, tmp_path):
    traj = random_trajectory(limits, seed=5)
    path = str(tmp_path / "traj.cfg")
    traj.save(path)
    back = FourierTrajectory.load(path)
    assert back.base_freq == traj.base_freq
    assert np.array_equal(back.q0, traj.q0)
    assert np.array_equal(back.a, traj.a)
    assert np.array_equal(back.b, traj.b)


def test_load_rejects_malformed(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[trajectory]\nbase_freq = 0.2\n")
    with pytest.raises(ModelConfigError):
        FourierTrajectory.load(str(path))
    path.write_text("[trajectory]\nbase_freq = zzz\n")
    with pytest.raises(ModelConfigError):
        FourierTrajectory.load(str(path))


def test_bad_shapes_rejected():
    with pytest.raises(DimensionError):
        FourierTrajectory(0.2, np.zeros(6), np.zeros((7, 3)), np.zeros((7, 3)))
    with pytest.raises(ModelConfigError):
        FourierTrajectory(-0.1, np.zeros(7), np.zeros((7, 3)), np.zeros((7, 3)))


def test_condition_matches_direct_computation(model, base, limits):
    traj = random_trajectory(limits, seed=9)
    kappa = trajectory_condition(model, base, traj)
    st = traj.sample(traj.standard_grid())
    Yb = base.base_regressor(regressor(model, st)).reshape(-1, base.n_base)
    assert kappa == pytest.approx(condition_number(Yb), rel=1e-9)
    assert np.isfinite(kappa) and kappa > 1.0


def test_still_joint_is_unidentifiable(model, base, limits):
    # zero amplitude on one joint leaves its friction columns unexcited
    traj = random_trajectory(limits, seed=2)
    a = traj.a.copy()
    b = traj.b.copy()
    a[4], b[4] = 0.0, 0.0
    still = FourierTrajectory(traj.base_freq, traj.q0, a, b)
    with pytest.raises(ScalingError):
        trajectory_condition(model, base, still)


def test_optimizer_improves_conditioning(model, base, limits):
    res = optimize_trajectory(model, base, limits, seed=1, n_starts=1,
                              maxiter=4, n_opt=32)
    assert res.n_base == base.n_base
    assert check_limits(res.trajectory, limits).ok
    assert res.kappa <= res.start_kappas[res.selected_start]
    # the returned trajectory is usable end to end
    again = trajectory_condition(model, base, res.trajectory)
    assert np.isfinite(again) and again > 1.0
