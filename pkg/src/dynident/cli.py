"""Command-line surface for the identification pipeline.

Verbs cover the whole workflow: inspect a model file, derive its base
parameters, optimize and sample excitation trajectories, simulate data,
fit dynamic or static parameters, and evaluate the result in
compensation experiments.  All file formats are plain CSV or INI-style
text; every verb documents its schemas under --help.

Randomness is controlled by the per-invocation --seed flag, so repeated
runs with identical inputs produce byte-identical output files.  The
only exception is `bench`, which reports wall-clock timings.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .baseparams import compute_base
from .dynamics import DynamicParameters, JointState, active_param_mask
from .errors import DynidentError, LogFormatError
from .excitation import (FourierTrajectory, check_limits, load_limits,
                         optimize_trajectory, trajectory_condition)
from .ident import (ConsistencyConstraints, audit_consistency, fit_statics,
                    solve_problem)
from .kinematics import (N_BASIS, RobotModel, frame_placements, load_model,
                         motor_to_dvrk, tree_coordinates)
from .runtime import (TRACKING_MODES, PlantConfig, TestTrajectoryConfig,
                      benchmark_runtime, computed_torque, gravity_torque,
                      random_hold_poses, simulate_drift_test,
                      simulate_excitation_log, simulate_statics_data,
                      simulate_tracking)
from .signals import FilterSpec, TrajectoryLog, build_problem, read_log, write_log

_MOTORS = [f"m{j}" for j in range(1, N_BASIS + 1)]

_SCHEMA_LOG = """\
log CSV schema:
  header  t,q1..q7,qd1..qd7,tau1..tau7   (22 columns)
  one sample per line, strictly increasing t, <=1% rate jitter
"""
_SCHEMA_PARAMS = """\
parameter CSV schema:
  header of 240 names (L<link>_{Ixx,Ixy,Ixz,Iyy,Iyz,Izz,hx,hy,hz,m} and
  A<link>_{Fv,Fc,Fb,Im,Ks} per link), then a single data row; entries the
  model declares structurally absent must be zero
"""
_SCHEMA_TRAJ = """\
trajectory file schema (INI-style):
  [trajectory] base_freq, harmonics
  [q0] m1..m7 offsets; [a], [b] m1..m7 rows of per-harmonic coefficients
"""
_SCHEMA_STATICS = """\
statics CSV schema:
  header  q1..q7,tau1..tau7   (14 columns); one held pose per line
"""
_SCHEMA_POSES = """\
pose CSV schema:
  header  q1..q7 (extra tau columns are ignored); one pose per line
"""
_SCHEMA_REF = """\
reference CSV schema:
  header  t,q1..q7,qd1..qd7,qdd1..qdd7   (22 columns)
"""


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _fmt_vec(v) -> str:
    return " ".join(format(float(x), ".6g") for x in np.asarray(v).ravel())


def _write_csv(path: str, header: str, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def _read_csv(path: str, names: list[str], what: str) -> np.ndarray:
    """Read a CSV whose header starts with `names` (extra columns allowed)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:len(names)] != names:
            raise LogFormatError(
                f"{path}: {what} header must start with {','.join(names)}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise LogFormatError(f"{path}: row width does not match header")
    return data[:, :len(names)]


def _emit(text: str, path: str | None) -> None:
    print(text, end="")
    if path:
        with open(path, "w") as fh:
            fh.write(text)


def _model(args) -> RobotModel:
    return load_model(args.model)


def _params(model: RobotModel, path: str | None) -> DynamicParameters:
    if path is None:
        from .presets import psm_reference_parameters
        return psm_reference_parameters(model)
    return DynamicParameters.from_csv(path, model)


# ---------------------------------------------------------------------------
# verbs


def _cmd_model_check(args) -> int:
    lines = []
    ok = True

    def check(label: str, good: bool, detail: str = "") -> None:
        nonlocal ok
        ok = ok and good
        tag = "ok" if good else "FAIL"
        lines.append(f"  {tag:4s} {label}" + (f" ({detail})" if detail else ""))

    model = _model(args)
    lines.append(f"model: {model.name}")
    lines.append(f"  links: {model.n_links} ({model.n_kinematic} in the "
                 f"kinematic tree, {model.n_links - model.n_kinematic} "
                 f"coupling-only)")
    n_active = int(active_param_mask(model).sum())
    lines.append(f"  parameters: {model.n_params} slots, {n_active} active")

    J = model.maps.A_b_to_q @ model.maps.A_m_to_b
    check("coupling map has full column rank",
          np.linalg.matrix_rank(J) == N_BASIS,
          f"shape {J.shape}")
    slots = sorted(model.slot.values())
    check("kinematic slots cover 0..n-1",
          slots == list(range(model.n_kinematic)))
    q0 = np.zeros(N_BASIS)
    frames = frame_placements(model, tree_coordinates(model, q0))
    check("frame placements finite at zero pose", bool(np.isfinite(frames).all()))
    d0 = motor_to_dvrk(model, q0)
    check("motor/dVRK map finite", bool(np.isfinite(d0).all()))
    check("element rows cover every link",
          model.elem_rows.shape == (model.n_links, N_BASIS))
    g = np.linalg.norm(model.gravity)
    check("gravity magnitude sane", 0.1 < g < 100.0, f"|g| = {_fmt(g)}")

    limits = load_limits(args.limits)
    check("limits ordered and finite",
          bool(np.all(limits.lower < limits.upper)
               and np.isfinite(limits.lower).all()
               and np.isfinite(limits.upper).all()
               and np.all(limits.velocity > 0)))
    lines.append(f"  verdict: {'pass' if ok else 'fail'}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if ok else 1


def _cmd_baseparams(args) -> int:
    model = _model(args)
    dec = compute_base(model, n_samples=args.samples, seed=args.seed,
                       tol=args.tol)
    lines = [f"base parameters: {dec.n_base} (of {int(active_param_mask(model).sum())} "
             f"active, {model.n_params} total)",
             f"rank tolerance: {_fmt(dec.tol)}",
             f"rank gap: kept {_fmt(dec.diag_kept)}, dropped {_fmt(dec.diag_dropped)}"]
    for k, text in enumerate(dec.describe(model)):
        lines.append(f"  {k + 1:3d}. {text}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_traj_optimize(args) -> int:
    model = _model(args)
    limits = load_limits(args.limits)
    dec = compute_base(model)
    res = optimize_trajectory(model, dec, limits, base_freq=args.freq,
                              n_harmonics=args.harmonics, seed=args.seed,
                              n_starts=args.starts, maxiter=args.maxiter,
                              n_opt=args.grid, shrink=args.shrink)
    res.trajectory.save(args.out)
    rep = check_limits(res.trajectory, limits)
    lines = [f"base parameters: {res.n_base}",
             f"start conditions: {_fmt_vec(res.start_kappas)}",
             f"selected start: {res.selected_start}",
             f"condition number: {_fmt(res.kappa)}",
             f"position margin: {_fmt_vec(rep.pos_margin)}",
             f"velocity margin: {_fmt_vec(rep.vel_margin)}",
             f"trajectory written: {args.out}"]
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_traj_sample(args) -> int:
    traj = FourierTrajectory.load(args.traj)
    n = max(2, round(args.periods * traj.period * args.rate))
    t = np.arange(n) / args.rate
    st = traj.sample(t)
    header = ("t," + ",".join(f"q{j}" for j in range(1, 8))
              + "," + ",".join(f"qd{j}" for j in range(1, 8))
              + "," + ",".join(f"qdd{j}" for j in range(1, 8)))
    _write_csv(args.out, header, np.column_stack([t, st.q, st.qd, st.qdd]))
    print(f"wrote {n} samples at {_fmt(args.rate)} Hz: {args.out}")
    return 0


def _cmd_sim_excite(args) -> int:
    model = _model(args)
    params = _params(model, args.params)
    traj = FourierTrajectory.load(args.traj)
    log = simulate_excitation_log(model, params, traj, rate=args.rate,
                                  periods=args.periods,
                                  noise_frac=args.noise, seed=args.seed)
    write_log(args.out, log)
    print(f"wrote {log.t.size} samples ({_fmt(args.periods)} periods at "
          f"{_fmt(args.rate)} Hz, noise {_fmt(args.noise)}): {args.out}")
    return 0


def _cmd_ident_fit(args) -> int:
    model = _model(args)
    log = read_log(args.log)
    dec = compute_base(model, seed=args.seed)
    spec = FilterSpec(order=args.order, cutoff_hz=args.cutoff)
    problem = build_problem(model, log, filter_spec=spec, base=dec,
                            trim=args.trim)
    result = solve_problem(problem, model, solver=args.solver)
    result.params.to_csv(args.out, model)
    audit = audit_consistency(model, result.params)
    rep = result.report
    lines = [f"samples: {log.t.size} at {_fmt(log.rate)} Hz",
             f"base parameters: {dec.n_base}",
             f"solver: {rep.solver}",
             f"objective: {_fmt(rep.objective)}",
             f"fit NRMSE %: {_fmt_vec(rep.nrmse)}",
             f"KKT residual: {_fmt(rep.kkt_residual)}",
             f"active constraints: {len(rep.active_constraints)}",
             f"consistency: {'pass' if audit.ok else 'fail'} "
             f"(min eig {_fmt(min(audit.min_eig.values()))})",
             f"parameters written: {args.out}"]
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_ident_statics(args) -> int:
    model = _model(args)
    if args.data:
        data = _read_csv(args.data, [f"q{j}" for j in range(1, 8)]
                         + [f"tau{j}" for j in range(1, 8)], "statics data")
        poses, tau = data[:, :7], data[:, 7:]
    else:
        params_true = _params(model, args.true_params)
        limits = load_limits(args.limits)
        grid = random_hold_poses(limits, args.poses, seed=args.seed)
        poses, tau = simulate_statics_data(model, params_true, grid,
                                           reps=args.reps,
                                           stick_frac=args.stick_frac,
                                           noise=args.noise, seed=args.seed)
        if args.save_data:
            header = ",".join([f"q{j}" for j in range(1, 8)]
                              + [f"tau{j}" for j in range(1, 8)])
            _write_csv(args.save_data, header, np.column_stack([poses, tau]))
    res = fit_statics(model, poses, tau)
    res.params.to_csv(args.out, model)
    lines = [f"poses: {poses.shape[0]}",
             f"rows fit: {', '.join(_MOTORS[r] for r in res.rows)}",
             f"fit NRMSE %: {_fmt_vec(res.nrmse)}",
             f"row offsets: {_fmt_vec(res.offsets)}"]
    for name in sorted(res.masses):
        c = res.coms[name]
        lines.append(f"  link {name}: m {_fmt(res.masses[name])}, "
                     f"com {_fmt_vec(c)}")
    lines.append(f"parameters written: {args.out}")
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _load_poses(args, model: RobotModel) -> np.ndarray:
    if args.pose:
        vals = [float(v) for v in args.pose.split(",")]
        if len(vals) != N_BASIS:
            raise LogFormatError("--pose needs 7 comma-separated values")
        return np.array([vals])
    if args.poses_file:
        return _read_csv(args.poses_file, [f"q{j}" for j in range(1, 8)],
                         "pose table")
    limits = load_limits(args.limits)
    return random_hold_poses(limits, args.grid, seed=args.seed)


def _cmd_eval_gravity(args) -> int:
    model = _model(args)
    params = _params(model, args.params)
    poses = _load_poses(args, model)
    tau = gravity_torque(model, params, poses, include_bias=args.include_bias)
    cols = [poses, tau]
    names = [f"q{j}" for j in range(1, 8)] + [f"tau{j}" for j in range(1, 8)]
    lines = [f"poses: {poses.shape[0]}",
             f"variant: {'holding (bias included)' if args.include_bias else 'gravity only'}",
             f"torque RMS: {_fmt_vec(np.sqrt((tau ** 2).mean(axis=0)))}"]
    if args.ref_params:
        ref = gravity_torque(model, _params(model, args.ref_params), poses,
                             include_bias=args.include_bias)
        cols.append(ref)
        names += [f"ref{j}" for j in range(1, 8)]
        err = np.sqrt(((tau - ref) ** 2).mean(axis=0))
        scale = np.sqrt((ref ** 2).mean(axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = np.where(scale > 0, 100.0 * err / scale, np.nan)
        lines.append(f"error RMS vs reference: {_fmt_vec(err)}")
        lines.append(f"error % of reference RMS: {_fmt_vec(pct)}")
    if args.out:
        _write_csv(args.out, ",".join(names), np.column_stack(cols))
        lines.append(f"table written: {args.out}")
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_eval_ctff(args) -> int:
    model = _model(args)
    params = _params(model, args.params)
    if (args.traj is None) == (args.log is None):
        raise LogFormatError("pass exactly one of --traj or --log")
    if args.traj:
        traj = FourierTrajectory.load(args.traj)
        n = max(2, round(args.periods * traj.period * args.rate))
        t = np.arange(n) / args.rate
        st = traj.sample(t)
        tau_meas = None
    else:
        log = read_log(args.log)
        t = log.t
        qdd = np.gradient(log.qd, axis=0, edge_order=2) * log.rate
        st = JointState(log.q, log.qd, qdd)
        tau_meas = log.tau
    tau = computed_torque(model, params, st.q, st.qd, st.qdd)
    lines = [f"samples: {t.size}",
             f"feedforward RMS: {_fmt_vec(np.sqrt((tau ** 2).mean(axis=0)))}"]
    cols, names = [t, tau], ["t"] + [f"tau{j}" for j in range(1, 8)]
    if tau_meas is not None:
        err = np.sqrt(((tau - tau_meas) ** 2).mean(axis=0))
        scale = np.sqrt((tau_meas ** 2).mean(axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = np.where(scale > 0, 100.0 * err / scale, np.nan)
        lines.append(f"prediction NRMSE %: {_fmt_vec(pct)}")
        cols.append(tau_meas)
        names += [f"meas{j}" for j in range(1, 8)]
    if args.out:
        _write_csv(args.out, ",".join(names),
                   np.column_stack([c if c.ndim > 1 else c[:, None] for c in cols]))
        lines.append(f"table written: {args.out}")
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_exp_drift(args) -> int:
    model = _model(args)
    params_true = _params(model, args.true_params)
    params_hat = _params(model, args.params or args.true_params)
    if args.poses_file:
        poses = _read_csv(args.poses_file, [f"q{j}" for j in range(1, 8)],
                          "pose table")
    else:
        limits = load_limits(args.limits)
        poses = random_hold_poses(limits, args.poses, seed=args.seed)
    res = simulate_drift_test(model, params_true, params_hat, poses,
                              hold=args.hold, settle=args.settle)
    lines = [f"poses: {poses.shape[0]}, hold {_fmt(res.hold)} s",
             f"thresholds (m1 m2 m3): {_fmt_vec(res.thresholds)}"]
    for k in range(poses.shape[0]):
        verdict = "no drift" if res.verdicts[k].all() else "DRIFT"
        lines.append(f"  pose {k + 1}: {verdict}")
        lines.append(f"    excursion: {_fmt_vec(res.excursion[k, :3])}")
        lines.append(f"    tau cmd:   {_fmt_vec(res.tau_cmd[k, :3])}")
        lines.append(f"    band lo:   {_fmt_vec(res.tau_lb[k, :3])}")
        lines.append(f"    band hi:   {_fmt_vec(res.tau_ub[k, :3])}")
        lines.append(f"    in band:   {res.in_bounds[k].tolist()}")
    lines.append(f"verdict: {'pass' if res.ok else 'fail'}")
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_exp_track(args) -> int:
    model = _model(args)
    params_true = _params(model, args.true_params)
    params_ctrl = _params(model, args.params) if args.params else None
    res = simulate_tracking(model, params_true, args.mode,
                            params_ctrl=params_ctrl, duration=args.duration,
                            control_rate=args.rate)
    lines = [f"mode: {res.mode}, duration {_fmt(args.duration)} s at "
             f"{_fmt(args.rate)} Hz",
             f"{'motor':8s}{'mean':>12s}{'std':>12s}{'rmse':>12s}{'max':>12s}"]
    for j in range(N_BASIS):
        lines.append(f"{_MOTORS[j]:8s}{res.err_mean[j]:12.4e}"
                     f"{res.err_std[j]:12.4e}{res.err_rmse[j]:12.4e}"
                     f"{res.err_max[j]:12.4e}")
    lines.append(f"feedback torque RMS: {_fmt_vec(res.pid_rms)}")
    if args.trace:
        write_log(args.trace, TrajectoryLog(res.t, res.q, res.qd, res.tau))
        lines.append(f"trace written: {args.trace}")
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _cmd_bench(args) -> int:
    model = _model(args)
    params = _params(model, args.params)
    res = benchmark_runtime(model, params, n=args.n, seed=args.seed)
    print(f"computed_torque over {res.n} states: mean {res.mean_ms:.4f} ms, "
          f"std {res.std_ms:.4f} ms, p95 {res.p95_ms:.4f} ms, "
          f"max {res.max_ms:.4f} ms")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flag(p) -> None:
    p.add_argument("--model", metavar="CFG", default=None,
                   help="model config file (default: bundled dVRK-Si PSM)")


def _add_limits_flag(p) -> None:
    p.add_argument("--limits", metavar="CFG", default=None,
                   help="joint limits file (default: bundled PSM limits)")


def _add_seed_flag(p) -> None:
    p.add_argument("--seed", type=int, default=0,
                   help="seed for all randomness in this invocation")


def _add_report_flag(p) -> None:
    p.add_argument("--report", metavar="TXT", default=None,
                   help="also write the printed report to this file")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="dynident",
        description="Dynamic model identification and compensation pipeline.",
        epilog="Set DYNIDENT_THREADS to cap worker processes in trajectory\n"
               "optimization.  Exit codes: 0 success, 1 stage failure, 2 usage.",
        formatter_class=fmt)
    parser.add_argument("--version", action="version",
                        version=f"dynident {__version__}")
    sub = parser.add_subparsers(dest="group", metavar="VERB", required=True)

    model = sub.add_parser("model", help="model file utilities")
    msub = model.add_subparsers(dest="action", metavar="ACTION", required=True)
    chk = msub.add_parser("check", formatter_class=fmt,
                          help="validate a model file and print a summary",
                          epilog=_SCHEMA_PARAMS)
    _add_model_flag(chk)
    _add_limits_flag(chk)
    chk.add_argument("--out", metavar="TXT", default=None,
                     help="also write the report to this file")
    chk.set_defaults(func=_cmd_model_check)

    base = sub.add_parser("baseparams", formatter_class=fmt,
                          help="derive the identifiable base parameter set")
    _add_model_flag(base)
    _add_seed_flag(base)
    base.add_argument("--samples", type=int, default=240,
                      help="random states for the rank probe (default 240)")
    base.add_argument("--tol", type=float, default=1e-8,
                      help="relative rank tolerance (default 1e-8)")
    base.add_argument("--out", metavar="TXT", default=None,
                      help="also write the listing to this file")
    base.set_defaults(func=_cmd_baseparams)

    traj = sub.add_parser("traj", help="excitation trajectory tools")
    tsub = traj.add_subparsers(dest="action", metavar="ACTION", required=True)
    topt = tsub.add_parser("optimize", formatter_class=fmt,
                           help="minimize the base regressor condition number",
                           epilog=_SCHEMA_TRAJ)
    _add_model_flag(topt)
    _add_limits_flag(topt)
    _add_seed_flag(topt)
    topt.add_argument("--out", metavar="CFG", required=True,
                      help="trajectory file to write")
    topt.add_argument("--freq", type=float, default=0.18,
                      help="base frequency in Hz (default 0.18)")
    topt.add_argument("--harmonics", type=int, default=6,
                      help="Fourier harmonics per joint (default 6)")
    topt.add_argument("--starts", type=int, default=6,
                      help="random multistarts (default 6)")
    topt.add_argument("--maxiter", type=int, default=40,
                      help="SLSQP iterations per start (default 40)")
    topt.add_argument("--grid", type=int, default=96,
                      help="time samples in the objective (default 96)")
    topt.add_argument("--shrink", type=float, default=0.02,
                      help="limit shrink fraction during the solve (default 0.02)")
    _add_report_flag(topt)
    topt.set_defaults(func=_cmd_traj_optimize)
    tsam = tsub.add_parser("sample", formatter_class=fmt,
                           help="sample a trajectory file onto a time grid",
                           epilog=_SCHEMA_TRAJ + _SCHEMA_REF)
    tsam.add_argument("--traj", metavar="CFG", required=True,
                      help="trajectory file to sample")
    tsam.add_argument("--rate", type=float, default=200.0,
                      help="sample rate in Hz (default 200)")
    tsam.add_argument("--periods", type=float, default=1.0,
                      help="number of base periods (default 1)")
    tsam.add_argument("--out", metavar="CSV", required=True,
                      help="reference CSV to write")
    tsam.set_defaults(func=_cmd_traj_sample)

    sim = sub.add_parser("sim", help="simulated data generation")
    ssub = sim.add_subparsers(dest="action", metavar="ACTION", required=True)
    sexc = ssub.add_parser("excite", formatter_class=fmt,
                           help="execute a trajectory and log noisy torques",
                           epilog=_SCHEMA_TRAJ + _SCHEMA_LOG)
    _add_model_flag(sexc)
    _add_seed_flag(sexc)
    sexc.add_argument("--traj", metavar="CFG", required=True,
                      help="trajectory file to execute")
    sexc.add_argument("--params", metavar="CSV", default=None,
                      help="plant parameters (default: bundled reference set)")
    sexc.add_argument("--rate", type=float, default=200.0,
                      help="log rate in Hz (default 200)")
    sexc.add_argument("--periods", type=int, default=3,
                      help="base periods to log (default 3)")
    sexc.add_argument("--noise", type=float, default=0.01,
                      help="torque noise as a fraction of range (default 0.01)")
    sexc.add_argument("--out", metavar="CSV", required=True,
                      help="log CSV to write")
    sexc.set_defaults(func=_cmd_sim_excite)

    ident = sub.add_parser("ident", help="parameter identification")
    isub = ident.add_subparsers(dest="action", metavar="ACTION", required=True)
    ifit = isub.add_parser("fit", formatter_class=fmt,
                           help="fit dynamic parameters from a log",
                           epilog=_SCHEMA_LOG + _SCHEMA_PARAMS)
    _add_model_flag(ifit)
    _add_seed_flag(ifit)
    ifit.add_argument("--log", metavar="CSV", required=True,
                      help="trajectory log to fit")
    ifit.add_argument("--out", metavar="CSV", required=True,
                      help="identified parameters to write")
    ifit.add_argument("--cutoff", type=float, default=5.4,
                      help="zero-phase filter cutoff in Hz (default 5.4)")
    ifit.add_argument("--order", type=int, default=6,
                      help="filter order (default 6)")
    ifit.add_argument("--trim", type=int, default=None,
                      help="samples trimmed per end (default: filter settle)")
    ifit.add_argument("--solver", default=None,
                      help="convex solver name (default: CLARABEL, then SCS)")
    _add_report_flag(ifit)
    ifit.set_defaults(func=_cmd_ident_fit)
    ista = isub.add_parser("statics", formatter_class=fmt,
                           help="fit masses and centers of mass from held poses",
                           epilog=_SCHEMA_STATICS + _SCHEMA_PARAMS)
    _add_model_flag(ista)
    _add_limits_flag(ista)
    _add_seed_flag(ista)
    ista.add_argument("--data", metavar="CSV", default=None,
                      help="statics data to fit (otherwise simulate)")
    ista.add_argument("--true-params", metavar="CSV", default=None,
                      help="plant parameters when simulating (default: bundled)")
    ista.add_argument("--poses", type=int, default=150,
                      help="held poses when simulating (default 150)")
    ista.add_argument("--reps", type=int, default=2,
                      help="visits per pose, alternating approach (default 2)")
    ista.add_argument("--noise", type=float, default=0.01,
                      help="torque noise in N m when simulating (default 0.01)")
    ista.add_argument("--stick-frac", type=float, default=0.5,
                      help="stiction band fraction reached at rest (default 0.5)")
    ista.add_argument("--save-data", metavar="CSV", default=None,
                      help="write the simulated statics data here")
    ista.add_argument("--out", metavar="CSV", required=True,
                      help="fitted parameters to write")
    _add_report_flag(ista)
    ista.set_defaults(func=_cmd_ident_statics)

    ev = sub.add_parser("eval", help="model evaluation")
    esub = ev.add_subparsers(dest="action", metavar="ACTION", required=True)
    egrav = esub.add_parser("gravity", formatter_class=fmt,
                            help="tabulate gravity torque over poses",
                            epilog=_SCHEMA_POSES)
    _add_model_flag(egrav)
    _add_limits_flag(egrav)
    _add_seed_flag(egrav)
    egrav.add_argument("--params", metavar="CSV", default=None,
                       help="parameters to evaluate (default: bundled)")
    egrav.add_argument("--ref-params", metavar="CSV", default=None,
                       help="reference parameters to compare against")
    egrav.add_argument("--pose", metavar="V1,..,V7", default=None,
                       help="single pose as 7 comma-separated values")
    egrav.add_argument("--poses-file", metavar="CSV", default=None,
                       help="pose table to evaluate")
    egrav.add_argument("--grid", type=int, default=20,
                       help="random poses when no pose given (default 20)")
    egrav.add_argument("--include-bias", action="store_true",
                       help="include spring and friction offsets (holding torque)")
    egrav.add_argument("--out", metavar="CSV", default=None,
                       help="pose/torque table to write")
    _add_report_flag(egrav)
    egrav.set_defaults(func=_cmd_eval_gravity)
    ectff = esub.add_parser("ctff", formatter_class=fmt,
                            help="tabulate feedforward torque along a trajectory",
                            epilog=_SCHEMA_TRAJ + _SCHEMA_LOG)
    _add_model_flag(ectff)
    ectff.add_argument("--params", metavar="CSV", default=None,
                       help="parameters to evaluate (default: bundled)")
    ectff.add_argument("--traj", metavar="CFG", default=None,
                       help="trajectory file to sweep")
    ectff.add_argument("--rate", type=float, default=200.0,
                       help="sample rate with --traj (default 200)")
    ectff.add_argument("--periods", type=float, default=1.0,
                       help="base periods with --traj (default 1)")
    ectff.add_argument("--log", metavar="CSV", default=None,
                       help="log to replay; predictions compared to its torques")
    ectff.add_argument("--out", metavar="CSV", default=None,
                       help="torque table to write")
    _add_report_flag(ectff)
    ectff.set_defaults(func=_cmd_eval_ctff)

    exp = sub.add_parser("exp", help="closed-loop experiments")
    xsub = exp.add_subparsers(dest="action", metavar="ACTION", required=True)
    xdrift = xsub.add_parser("drift", formatter_class=fmt,
                             help="open-loop holding test against the plant",
                             epilog=_SCHEMA_POSES)
    _add_model_flag(xdrift)
    _add_limits_flag(xdrift)
    _add_seed_flag(xdrift)
    xdrift.add_argument("--true-params", metavar="CSV", default=None,
                        help="plant parameters (default: bundled)")
    xdrift.add_argument("--params", metavar="CSV", default=None,
                        help="identified parameters (default: same as plant)")
    xdrift.add_argument("--poses", type=int, default=5,
                        help="random hold poses (default 5)")
    xdrift.add_argument("--poses-file", metavar="CSV", default=None,
                        help="pose table instead of random poses")
    xdrift.add_argument("--hold", type=float, default=5.0,
                        help="open-loop hold time in s (default 5)")
    xdrift.add_argument("--settle", type=float, default=2.0,
                        help="closed-loop settle time in s (default 2)")
    _add_report_flag(xdrift)
    xdrift.set_defaults(func=_cmd_exp_drift)
    xtrack = xsub.add_parser("track", formatter_class=fmt,
                             help="sinusoidal tracking under a controller mode",
                             epilog=_SCHEMA_LOG)
    _add_model_flag(xtrack)
    xtrack.add_argument("--true-params", metavar="CSV", default=None,
                        help="plant parameters (default: bundled)")
    xtrack.add_argument("--params", metavar="CSV", default=None,
                        help="controller parameters (default: same as plant)")
    xtrack.add_argument("--mode", choices=TRACKING_MODES, default="pid+ctff",
                        help="controller mode (default pid+ctff)")
    xtrack.add_argument("--duration", type=float, default=10.0,
                        help="trial length in s (default 10)")
    xtrack.add_argument("--rate", type=float, default=100.0,
                        help="control rate in Hz (default 100)")
    xtrack.add_argument("--trace", metavar="CSV", default=None,
                        help="write the measured trace as a log CSV")
    _add_report_flag(xtrack)
    xtrack.set_defaults(func=_cmd_exp_track)

    bench = sub.add_parser("bench", formatter_class=fmt,
                           help="time the feedforward evaluation")
    _add_model_flag(bench)
    _add_seed_flag(bench)
    bench.add_argument("--params", metavar="CSV", default=None,
                       help="parameters to evaluate (default: bundled)")
    bench.add_argument("--n", type=int, default=10_000,
                       help="random states to time (default 10000)")
    bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DynidentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
