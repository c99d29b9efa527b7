"""Acceptance gate for the identification pipeline.

Each criterion prints one verdict line even without -s, then asserts the
same condition. The expensive shared pipeline (optimize, simulate, fit)
runs once per module; criteria 3 through 7 reuse it. Budgets are wall
clock on commodity hardware, generous on purpose.
"""

import re
import time
from types import SimpleNamespace

import numpy as np
import pytest

import dynident
from dynident.baseparams import compute_base
from dynident.dynamics import (
    DynamicParameters,
    JointState,
    active_param_mask,
    forward_dynamics,
    friction_curve,
    friction_curve_derivative,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
    param_names,
    regressor,
    sample_states,
)
from dynident.excitation import (
    check_limits,
    optimize_trajectory,
    random_trajectory,
    trajectory_condition,
)
from dynident.ident import (
    audit_consistency,
    fit_statics,
    predict_torque,
    solve_problem,
    weighted_beta_distance,
)
from dynident.runtime import (
    benchmark_runtime,
    gravity_torque,
    random_hold_poses,
    simulate_drift_test,
    simulate_excitation_log,
    simulate_statics_data,
    simulate_tracking,
)
from dynident.signals import build_problem, zero_phase_filter

from conftest import make_model


def announce(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{name}] {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module")
def pipeline(model, true_params, limits, base):
    """Optimize, execute with noise, condition, and fit; shared downstream.

    Eight periods go into the fit and the ninth is held out. The holding
    torque the drift criterion commands is a static functional the dynamic
    excitation sees only weakly, so its error is variance dominated; a
    fifty-second log keeps it safely inside the plant's stiction band.
    """
    t0 = time.perf_counter()
    opt = optimize_trajectory(model, base, limits, base_freq=0.18,
                              n_harmonics=6, seed=0, n_starts=2, maxiter=15)
    t_opt = time.perf_counter() - t0
    log = simulate_excitation_log(model, true_params, opt.trajectory,
                                  rate=200.0, periods=9, noise_frac=0.01,
                                  seed=1)
    period = opt.trajectory.period
    fit_log = log.window(0.0, 8.0 * period)
    held = log.window(8.0 * period, 9.0 * period)
    prob = build_problem(model, fit_log, base=base)
    res = solve_problem(prob, model)
    return SimpleNamespace(opt=opt, log=log, held=held, res=res,
                           t_opt=t_opt, t_total=time.perf_counter() - t0)


def test_01_regressor_matches_inverse_dynamics(model, capsys):
    t0 = time.perf_counter()
    st = sample_states(model, 100, seed=5)
    Y = regressor(model, st)
    mask = active_param_mask(model)
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        p = DynamicParameters(rng.normal(size=model.n_params) * mask)
        tau = inverse_dynamics(model, p,
                               JointState(st.q[i], st.qd[i], st.qdd[i]))
        worst = max(worst, np.linalg.norm(Y[i] @ p.theta - tau)
                    / np.linalg.norm(tau))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 10.0
    announce(capsys, "criterion 1: regressor equivalence", ok,
             f"max rel err {worst:.2e} (tol 1e-9), {dt:.1f} s (budget 10 s)")
    assert worst < 1e-9
    assert dt < 10.0


def test_02_base_parameter_consistency(model, base, capsys):
    # states drawn fresh, never seen by the decomposition
    t0 = time.perf_counter()
    st = sample_states(model, 1000, seed=23)
    Y = regressor(model, st)
    Yb = base.base_regressor(Y)
    mask = active_param_mask(model)
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(5):
        theta = rng.normal(size=model.n_params) * mask
        full = (Y @ theta).ravel()
        reduced = (Yb @ base.beta(theta)).ravel()
        worst = max(worst, np.linalg.norm(full - reduced)
                    / np.linalg.norm(full))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and dt < 30.0
    announce(capsys, "criterion 2: base-parameter consistency", ok,
             f"max rel err {worst:.2e} (tol 1e-8) on 1000 held-out states, "
             f"{dt:.1f} s (budget 30 s)")
    assert worst < 1e-8
    assert dt < 30.0


def test_03_synthetic_recovery(model, true_params, base, pipeline, capsys):
    # beta distance in the norm the excitation itself defines: directions
    # are weighted by how strongly the fitted trajectory excites them
    grid_t = np.arange(round(200.0 * pipeline.opt.trajectory.period)) / 200.0
    design = pipeline.opt.trajectory.sample(grid_t)
    dist = weighted_beta_distance(model, base, design, pipeline.res.beta,
                                  base.beta(true_params.theta))

    held = pipeline.held
    st = pipeline.opt.trajectory.sample(held.t)
    pred = predict_torque(model, pipeline.res.params, st)
    num = np.sqrt(((pred - held.tau) ** 2).mean(axis=0))
    den = np.sqrt((held.tau ** 2).mean(axis=0))
    nrmse = 100.0 * num / den

    ok = (dist <= 0.02 and (nrmse[:3] < 12.0).all()
          and pipeline.t_total < 300.0)
    announce(capsys, "criterion 3: synthetic recovery", ok,
             f"beta distance {100 * dist:.2f} % (tol 2 %), held-out NRMSE "
             f"joints 1-3 {np.round(nrmse[:3], 2)} % (tol 12 %), "
             f"{pipeline.t_total:.0f} s (budget 300 s)")
    assert dist <= 0.02
    assert (nrmse[:3] < 12.0).all()
    assert pipeline.t_total < 300.0


def test_04_conditioning_benefit(model, base, limits, pipeline, capsys):
    t0 = time.perf_counter()
    kappas = []
    seed = 0
    while len(kappas) < 50:
        tr = random_trajectory(limits, seed=seed)
        seed += 1
        if check_limits(tr, limits).ok:
            kappas.append(trajectory_condition(model, base, tr))
    median = float(np.median(kappas))
    dt = pipeline.t_opt + time.perf_counter() - t0
    ok = pipeline.opt.kappa <= 0.5 * median and dt < 600.0
    announce(capsys, "criterion 4: conditioning benefit", ok,
             f"optimized kappa {pipeline.opt.kappa:.0f} vs median "
             f"{median:.0f} over 50 random feasible (need <= 0.5x), "
             f"{dt:.0f} s (budget 600 s)")
    assert pipeline.opt.kappa <= 0.5 * median
    assert dt < 600.0


def test_05_physical_consistency_audit(model, pipeline, capsys):
    audit = audit_consistency(model, pipeline.res.params)
    floor = min(audit.min_eig.values())
    ok = audit.ok and floor >= -1e-6
    announce(capsys, "criterion 5: physical consistency audit", ok,
             f"violations {audit.violations or 'none'}, min inertia "
             f"eigenvalue {floor:.2e} (floor -1e-6)")
    assert audit.ok
    assert floor >= -1e-6
    # the solver's own report and an independent audit must agree
    assert min(pipeline.res.report.lmi_min_eig.values()) >= -1e-6


def test_06_drift_analogue(model, true_params, limits, pipeline, capsys):
    t0 = time.perf_counter()
    poses = random_hold_poses(limits, 5, seed=11)
    res = simulate_drift_test(model, true_params, pipeline.res.params,
                              poses, hold=5.0, settle=2.0)
    dt = time.perf_counter() - t0
    ok = bool(res.verdicts.all()) and dt < 60.0
    announce(capsys, "criterion 6: drift analogue", ok,
             f"{int(res.verdicts.all(axis=1).sum())}/5 poses hold without "
             f"drift at 1 deg / 1 mm, {dt:.1f} s (budget 60 s)")
    assert res.verdicts.all()
    assert dt < 60.0


def test_07_tracking_analogue(model, true_params, pipeline, capsys):
    t0 = time.perf_counter()
    rmse = {}
    for mode in ("pid", "pid+gravity", "pid+ctff"):
        out = simulate_tracking(model, true_params, mode, duration=10.0,
                                params_ctrl=pipeline.res.params)
        rmse[mode] = out.err_rmse[:3]
    dt = time.perf_counter() - t0
    ordered = ((rmse["pid+ctff"] < rmse["pid+gravity"]).all()
               and (rmse["pid+gravity"] < rmse["pid"]).all())
    strong = (rmse["pid+ctff"] <= 0.75 * rmse["pid"]).all()
    ok = ordered and strong and dt < 120.0
    ratio = rmse["pid+ctff"] / rmse["pid"]
    announce(capsys, "criterion 7: tracking analogue", ok,
             f"RMSE ordering ctff < gravity < pid {'holds' if ordered else 'BROKEN'}, "
             f"ctff/pid per joint {np.round(ratio, 3)} (need <= 0.75), "
             f"{dt:.0f} s (budget 120 s)")
    assert ordered
    assert strong
    assert dt < 120.0


def test_08_statics_cross_check(model, true_params, limits, capsys):
    t0 = time.perf_counter()
    poses = random_hold_poses(limits, 150, seed=29)
    q_meas, tau_meas = simulate_statics_data(model, true_params, poses,
                                             seed=29)
    fit = fit_statics(model, q_meas, tau_meas)

    grid = random_hold_poses(limits, 20, seed=31)
    g_fit = gravity_torque(model, fit.params, grid, include_bias=False)
    g_true = gravity_torque(model, true_params, grid, include_bias=False)
    err = np.sqrt(((g_fit - g_true) ** 2).mean(axis=0))
    scale = np.sqrt((g_true ** 2).mean(axis=0))
    rel = 100.0 * err[:3] / scale[:3]
    dt = time.perf_counter() - t0
    ok = (rel < 5.0).all() and dt < 60.0
    announce(capsys, "criterion 8: statics cross-check", ok,
             f"gravity prediction error joints 1-3 {np.round(rel, 2)} % "
             f"(tol 5 %) on a 20-pose grid, {dt:.1f} s (budget 60 s)")
    assert (rel < 5.0).all()
    assert dt < 60.0


def test_09_runtime_benchmark(model, true_params, capsys):
    bench = benchmark_runtime(model, true_params, n=10_000, seed=0)
    ok = bench.mean_ms < 1.0
    announce(capsys, "criterion 9: runtime benchmark", ok,
             f"computed torque mean {bench.mean_ms:.3f} ms over 10000 states "
             f"(tol 1 ms), p95 {bench.p95_ms:.3f} ms")
    assert bench.mean_ms < 1.0


def test_10_numerical_hygiene(model, true_params, limits, capsys):
    # zero-phase filtering: a passband sine must come back with zero lag
    rate = 200.0
    t = np.arange(int(10 * rate)) / rate
    x = np.sin(2 * np.pi * 0.5 * t)
    y = zero_phase_filter(x, rate)
    lags = np.arange(-20, 21)
    xc = [np.dot(x, np.roll(y, k)) for k in lags]
    lag = int(lags[int(np.argmax(xc))])

    # energy conservation: gravity-free variant of the bundled model with
    # every dissipative and spring term zeroed, coasting for 10 s
    text = open(dynident.default_model_path()).read()
    m0 = make_model(re.sub(r"(?m)^g\s*=.*$", "g = 0 0 0", text))
    p0 = dynident.psm_reference_parameters(m0).copy()
    for i, nm in enumerate(param_names(m0)):
        if nm.split("_")[1] in ("Fv", "Fc", "Fb", "Ks"):
            p0.theta[i] = 0.0
    q = np.array([0.2, -0.3, 0.15, 0.4, -0.5, 0.3, -0.2])
    qd = np.array([0.3, 0.2, 0.05, 0.5, -0.4, 0.3, 0.2])
    tau0 = np.zeros(7)

    def accel(q, qd):
        return qd, forward_dynamics(m0, p0, q, qd, tau0)

    E0 = kinetic_energy(m0, p0, q, qd)
    h = 1.0 / 500.0
    for _ in range(5000):
        k1q, k1v = accel(q, qd)
        k2q, k2v = accel(q + 0.5 * h * k1q, qd + 0.5 * h * k1v)
        k3q, k3v = accel(q + 0.5 * h * k2q, qd + 0.5 * h * k2v)
        k4q, k4v = accel(q + h * k3q, qd + h * k3v)
        q = q + h * (k1q + 2 * k2q + 2 * k3q + k4q) / 6.0
        qd = qd + h * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0
    drift = abs(kinetic_energy(m0, p0, q, qd) - E0) / E0

    # mass matrix symmetry on random states
    st = sample_states(model, 25, seed=41)
    M = mass_matrix(model, true_params, st.q)
    asym = np.abs(M - np.swapaxes(M, -1, -2)).max()

    # smooth friction: analytic derivative against central differences
    v = np.concatenate([np.linspace(-0.2, 0.2, 81), [-1e-3, 1e-3, 0.0]])
    fv, fc, fb, eps = 1.3, 2.1, 0.4, 100.0
    dh = 1e-6
    fd = (friction_curve(v + dh, fv, fc, fb, eps)
          - friction_curve(v - dh, fv, fc, fb, eps)) / (2 * dh)
    ana = friction_curve_derivative(v, fv, fc, fb, eps)
    fric_err = np.abs(fd - ana).max() / np.abs(ana).max()

    # Fourier derivatives against central differences of the positions
    traj = random_trajectory(limits, seed=47)
    tt = np.linspace(0.0, traj.period, 200)
    dt_fd = 1e-4
    lo, hi = traj.sample(tt - dt_fd), traj.sample(tt + dt_fd)
    qd_err = np.abs((hi.q - lo.q) / (2 * dt_fd) - traj.sample(tt).qd).max()
    qdd_err = np.abs((hi.qd - lo.qd) / (2 * dt_fd) - traj.sample(tt).qdd).max()

    ok = (lag == 0 and drift < 1e-6 and asym < 1e-10
          and fric_err < 1e-6 and qd_err < 1e-6 and qdd_err < 1e-6)
    announce(capsys, "criterion 10: numerical hygiene", ok,
             f"filter lag {lag} samples, energy drift {drift:.1e} "
             f"(tol 1e-6), mass asymmetry {asym:.1e} (tol 1e-10), friction "
             f"C1 err {fric_err:.1e}, Fourier derivative err "
             f"{max(qd_err, qdd_err):.1e} (tol 1e-6)")
    assert lag == 0
    assert drift < 1e-6
    assert asym < 1e-10
    assert fric_err < 1e-6
    assert qd_err < 1e-6 and qdd_err < 1e-6
