"""Runtime model evaluation and closed-loop experiments.

The simulated plant is the smooth rigid-body + friction model plus a
velocity deadband: a joint whose speed is below `stick_vel` sticks whenever
the net torque fits inside the stiction band, and sliding joints drag an
extra banded Coulomb term the identified model does not know about.  That
unmodeled band is what the drift and tracking experiments probe.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (DynamicParameters, FrictionConfig, JointState,
                       inverse_dynamics, mass_matrix, sample_states)
from .errors import DimensionError, InstabilityError
from .excitation import FourierTrajectory, JointLimits
from .kinematics import N_BASIS, RobotModel
from .signals import TrajectoryLog

DEFAULT_CONTROL_RATE = 100.0  # Hz
DEFAULT_SUBSTEP = 1e-3  # s


def computed_torque(model: RobotModel, params: DynamicParameters, q_m, qd_m,
                    qdd_m, friction: FrictionConfig | None = None) -> np.ndarray:
    """Full inverse-dynamics feedforward at one state (or a batch)."""
    q = np.asarray(q_m, dtype=float)
    return inverse_dynamics(
        model, params,
        JointState(q, np.asarray(qd_m, dtype=float), np.asarray(qdd_m, dtype=float)),
        friction=friction)


def gravity_torque(model: RobotModel, params: DynamicParameters, q_m,
                   include_bias: bool = True) -> np.ndarray:
    """Static holding torque at rest.

    The default keeps the spring preload and the constant friction offset
    (what you actually command to hold still), so it equals
    `computed_torque(q, 0, 0)` exactly.  `include_bias=False` strips both
    and leaves the gravity load alone, which is what a statics fit sees
    after its offsets are removed.
    """
    q = np.asarray(q_m, dtype=float)
    z = np.zeros_like(q)
    if include_bias:
        return computed_torque(model, params, q, z, z)
    return inverse_dynamics(model, params, JointState(q, z, z),
                            include_friction=False,
                            include_motor_inertia=False,
                            include_spring=False)


@dataclass
class PidConfig:
    """PD gains for the tracking and settling loops (no integral term)."""

    kp: np.ndarray = field(default_factory=lambda: np.array(
        [120.0, 120.0, 800.0, 20.0, 15.0, 10.0, 10.0]))
    kd: np.ndarray = field(default_factory=lambda: np.array(
        [25.0, 25.0, 90.0, 2.0, 1.5, 1.0, 1.0]))

    def torque(self, q, qd, q_ref, qd_ref) -> np.ndarray:
        return self.kp * (q_ref - q) + self.kd * (qd_ref - qd)


@dataclass
class PlantConfig:
    """Simulated plant: deadband stiction on top of the smooth model."""

    deadband: np.ndarray = field(default_factory=lambda: np.array(
        [0.8, 0.8, 2.0, 0.05, 0.04, 0.03, 0.03]))
    stick_vel: float = 1e-3
    substep: float = DEFAULT_SUBSTEP
    friction: FrictionConfig | None = None


class Plant:
    """Deadband-stiction plant integrated with RK4 at a fixed substep.

    The stick set is frozen per substep: stuck joints hold position exactly
    while the remaining joints integrate the reduced dynamics.
    """

    def __init__(self, model: RobotModel, params: DynamicParameters,
                 q0, cfg: PlantConfig | None = None):
        self.model = model
        self.params = params
        self.cfg = cfg or PlantConfig()
        self.q = np.asarray(q0, dtype=float).copy()
        self.qd = np.zeros(N_BASIS)
        if self.q.shape != (N_BASIS,):
            raise DimensionError("plant q0 must have shape (7,)")

    def _net_and_mask(self, tau_cmd, q, qd):
        cfg = self.cfg
        slow = np.abs(qd) < cfg.stick_vel
        qd_eff = np.where(slow, 0.0, qd)
        bias = inverse_dynamics(self.model, self.params,
                                JointState(q, qd_eff, np.zeros(N_BASIS)),
                                friction=cfg.friction)
        net = tau_cmd - bias
        stuck = slow & (np.abs(net) <= cfg.deadband)
        return net, stuck, qd_eff

    def _rhs(self, tau_cmd, stuck, q, qd):
        cfg = self.cfg
        qd_eff = np.where(stuck, 0.0, qd)
        bias = inverse_dynamics(self.model, self.params,
                                JointState(q, qd_eff, np.zeros(N_BASIS)),
                                friction=cfg.friction)
        drag = cfg.deadband * np.tanh(qd_eff / (0.5 * cfg.stick_vel))
        rhs = tau_cmd - bias - drag
        qdd = np.zeros(N_BASIS)
        free = ~stuck
        if free.any():
            M = mass_matrix(self.model, self.params, q)
            idx = np.flatnonzero(free)
            qdd[idx] = np.linalg.solve(M[np.ix_(idx, idx)], rhs[idx])
        return qd_eff, qdd

    def step(self, tau_cmd, dt: float) -> bool:
        """Advance by `dt` under constant commanded torque.

        Returns True when the whole interval was spent fully stuck (the
        state is then exactly unchanged, which lets static holds shortcut).
        """
        cfg = self.cfg
        n_sub = max(1, round(dt / cfg.substep))
        h = dt / n_sub
        all_static = True
        for _ in range(n_sub):
            _, stuck, _ = self._net_and_mask(tau_cmd, self.q, self.qd)
            self.qd = np.where(stuck, 0.0, self.qd)
            if stuck.all():
                continue
            all_static = False
            k1 = self._rhs(tau_cmd, stuck, self.q, self.qd)
            k2 = self._rhs(tau_cmd, stuck, self.q + 0.5 * h * k1[0],
                           self.qd + 0.5 * h * k1[1])
            k3 = self._rhs(tau_cmd, stuck, self.q + 0.5 * h * k2[0],
                           self.qd + 0.5 * h * k2[1])
            k4 = self._rhs(tau_cmd, stuck, self.q + h * k3[0],
                           self.qd + h * k3[1])
            self.q = self.q + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            self.qd = self.qd + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            self.qd = np.where(stuck, 0.0, self.qd)
        return all_static


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class DriftResult:
    poses: np.ndarray  # (K, 7) settled hold poses
    excursion: np.ndarray  # (K, 7) max |q - q_hold| during the hold
    verdicts: np.ndarray  # (K, 3) bool, True = no drift on joints 1-3
    thresholds: np.ndarray  # (3,)
    hold: float
    tau_cmd: np.ndarray  # (K, 7) identified holding torque actually applied
    tau_lb: np.ndarray  # (K, 7) lower non-drift bound (plant statics - deadband)
    tau_ub: np.ndarray  # (K, 7) upper non-drift bound
    in_bounds: np.ndarray  # (K, 3) bool, command inside the band on joints 1-3

    @property
    def ok(self) -> bool:
        return bool(self.verdicts.all())


def drift_thresholds(model: RobotModel) -> np.ndarray:
    """No-drift thresholds for motors 1-3: 1 deg, or 1 mm when prismatic."""
    out = np.full(3, np.deg2rad(1.0))
    for lk in model.links:
        if lk.kind != "prismatic":
            continue
        sym, _ = lk.joint_coef
        if sym.startswith("q") and not sym.startswith("qm"):
            j = int(sym[1:]) - 1
            if j < 3:
                out[j] = 1e-3
    return out


def simulate_drift_test(model: RobotModel, params_true: DynamicParameters,
                        params_hat: DynamicParameters, poses,
                        hold: float = 5.0, settle: float = 2.0,
                        pid: PidConfig | None = None,
                        plant_cfg: PlantConfig | None = None,
                        control_rate: float = DEFAULT_CONTROL_RATE) -> DriftResult:
    """Hold poses open-loop on the identified static torque.

    Each pose is first settled under PD control plus the identified holding
    feedforward, then the loop is opened and only the constant identified
    holding torque is applied for `hold` seconds.  A pose counts as
    non-drifting when motors 1-3 stay inside the thresholds.  The report
    also checks the command against the band the plant can absorb: the true
    static torque at the hold pose plus/minus the stiction deadband.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    pid = pid or PidConfig()
    cfg = plant_cfg or PlantConfig()
    thr = drift_thresholds(model)
    dt = 1.0 / control_rate
    n_settle = round(settle * control_rate)
    n_hold = round(hold * control_rate)

    k_poses = poses.shape[0]
    hold_poses = np.zeros_like(poses)
    exc = np.zeros((k_poses, N_BASIS))
    tau_cmd = np.zeros((k_poses, N_BASIS))
    tau_lb = np.zeros((k_poses, N_BASIS))
    tau_ub = np.zeros((k_poses, N_BASIS))
    for k, pose in enumerate(poses):
        plant = Plant(model, params_true, pose, cfg)
        ff = gravity_torque(model, params_hat, pose)
        for _ in range(n_settle):
            tau = ff + pid.torque(plant.q, plant.qd, pose, np.zeros(N_BASIS))
            plant.step(tau, dt)
        q_hold = plant.q.copy()
        hold_poses[k] = q_hold
        tau_hold = gravity_torque(model, params_hat, q_hold)
        tau_cmd[k] = tau_hold
        tau_true = gravity_torque(model, params_true, q_hold)
        tau_lb[k] = tau_true - cfg.deadband
        tau_ub[k] = tau_true + cfg.deadband
        worst = np.zeros(N_BASIS)
        for _ in range(n_hold):
            static = plant.step(tau_hold, dt)
            worst = np.maximum(worst, np.abs(plant.q - q_hold))
            if static and np.all(plant.qd == 0.0):
                break  # exact fixed point: nothing changes for the rest
        exc[k] = worst
    verdicts = exc[:, :3] <= thr
    in_bounds = ((tau_cmd >= tau_lb) & (tau_cmd <= tau_ub))[:, :3]
    return DriftResult(poses=hold_poses, excursion=exc, verdicts=verdicts,
                       thresholds=thr, hold=hold, tau_cmd=tau_cmd,
                       tau_lb=tau_lb, tau_ub=tau_ub, in_bounds=in_bounds)


@dataclass
class TestTrajectoryConfig:
    """Sinusoidal reference on motors 1-3 about a nominal pose.

    `omega_gen` is radians of phase advance per control step, so the
    physical sweep rate scales with the loop rate (0.005 rad/step at
    100 Hz sweeps 0.5 rad/s).
    """

    alpha_ori: float = np.deg2rad(20.0)  # rad, motors 1-2
    alpha_pos: float = 0.05  # m, motor 3
    omega_gen: float = 0.005  # rad of phase per control step
    q3_offset: float = 0.12  # m

    def center(self) -> np.ndarray:
        out = np.zeros(N_BASIS)
        out[2] = self.q3_offset
        return out

    def amplitude(self) -> np.ndarray:
        out = np.zeros(N_BASIS)
        out[:2] = self.alpha_ori
        out[2] = self.alpha_pos
        return out

    def sample(self, step: int, rate: float):
        """Desired (q, qd) at a control step index."""
        phase = self.omega_gen * step
        q = self.center() + self.amplitude() * np.sin(phase)
        qd = self.amplitude() * np.cos(phase) * self.omega_gen * rate
        return q, qd


TRACKING_MODES = ("pid", "pid+gravity", "pid+ctff")

# abort a trial when any motor coordinate leaves this envelope (rad or m)
BLOWUP_LIMIT = 20.0


@dataclass
class TrackingResult:
    mode: str
    t: np.ndarray  # (N,) control tick times
    q_ref: np.ndarray  # (N, 7)
    q: np.ndarray  # (N, 7)
    qd: np.ndarray  # (N, 7)
    tau: np.ndarray  # (N, 7) commanded torque
    err_mean: np.ndarray  # (7,) signed mean of e = q_ref - q
    err_std: np.ndarray  # (7,)  std of e
    err_rmse: np.ndarray  # (7,)
    err_max: np.ndarray  # (7,) max |e|
    pid_rms: np.ndarray  # (7,) RMS of the feedback share of the torque


def simulate_tracking(model: RobotModel, params_true: DynamicParameters,
                      mode: str, params_ctrl: DynamicParameters | None = None,
                      duration: float = 10.0,
                      reference: TestTrajectoryConfig | None = None,
                      pid: PidConfig | None = None,
                      plant_cfg: PlantConfig | None = None,
                      control_rate: float = DEFAULT_CONTROL_RATE) -> TrackingResult:
    """Track the reference under one of the three controller modes.

    "pid" is feedback only; "pid+gravity" adds the static holding torque at
    the reference pose; "pid+ctff" adds the inverse-dynamics feedforward at
    the measured state, with desired accelerations taken as backward
    differences of the desired velocities at the control rate.
    `params_ctrl` defaults to `params_true` (a perfect model); pass an
    identified set to evaluate it.
    """
    if mode not in TRACKING_MODES:
        raise ValueError(f"mode must be one of {TRACKING_MODES}")
    params_ctrl = params_ctrl or params_true
    reference = reference or TestTrajectoryConfig()
    pid = pid or PidConfig()
    dt = 1.0 / control_rate
    n = round(duration * control_rate)

    plant = Plant(model, params_true, reference.sample(0, control_rate)[0],
                  plant_cfg)
    t_grid = np.arange(n) * dt
    q_ref = np.zeros((n, N_BASIS))
    q_log = np.zeros((n, N_BASIS))
    qd_log = np.zeros((n, N_BASIS))
    tau_log = np.zeros((n, N_BASIS))
    fb_log = np.zeros((n, N_BASIS))
    qd_prev = reference.sample(-1, control_rate)[1]
    for i in range(n):
        qr, qdr = reference.sample(i, control_rate)
        qddr = (qdr - qd_prev) * control_rate
        qd_prev = qdr
        fb = pid.torque(plant.q, plant.qd, qr, qdr)
        if mode == "pid":
            ff = np.zeros(N_BASIS)
        elif mode == "pid+gravity":
            ff = gravity_torque(model, params_ctrl, qr)
        else:
            ff = computed_torque(model, params_ctrl, plant.q, plant.qd, qddr)
        q_ref[i], q_log[i], qd_log[i], fb_log[i] = qr, plant.q, plant.qd, fb
        tau_log[i] = ff + fb
        plant.step(tau_log[i], dt)
        if not np.all(np.isfinite(plant.q)) or np.abs(plant.q).max() > BLOWUP_LIMIT:
            raise InstabilityError(
                f"tracking trial ({mode}) diverged at t={t_grid[i]:.2f} s: "
                f"|q| reached {np.abs(plant.q).max():.3g}")

    e = q_ref - q_log
    return TrackingResult(
        mode=mode, t=t_grid, q_ref=q_ref, q=q_log, qd=qd_log, tau=tau_log,
        err_mean=e.mean(axis=0), err_std=e.std(axis=0),
        err_rmse=np.sqrt((e ** 2).mean(axis=0)), err_max=np.abs(e).max(axis=0),
        pid_rms=np.sqrt((fb_log ** 2).mean(axis=0)),
    )


# ---------------------------------------------------------------------------
# Data generation and timing


def simulate_excitation_log(model: RobotModel, params: DynamicParameters,
                            traj: FourierTrajectory, rate: float = 200.0,
                            periods: int = 3, noise_frac: float = 0.01,
                            seed: int = 0,
                            friction: FrictionConfig | None = None) -> TrajectoryLog:
    """Ideal trajectory execution with torque-sensing noise.

    States follow the commanded trajectory exactly; torques are the model's
    inverse dynamics plus white noise scaled per motor to `noise_frac` of
    that motor's clean torque range.
    """
    n = round(periods * traj.period * rate)
    t = np.arange(n) / rate
    st = traj.sample(t)
    tau = inverse_dynamics(model, params, st, friction=friction)
    rng = np.random.default_rng(seed)
    span = tau.max(axis=0) - tau.min(axis=0)
    sigma = noise_frac * np.where(span > 0, span, 1.0)
    tau = tau + rng.normal(size=tau.shape) * sigma
    return TrajectoryLog(t, st.q, st.qd, tau)


def simulate_statics_data(model: RobotModel, params: DynamicParameters,
                          poses, reps: int = 2, stick_frac: float = 0.5,
                          noise: float = 0.01, seed: int = 0,
                          plant_cfg: PlantConfig | None = None):
    """Holding torques at rest, visiting each pose from alternating sides.

    The measured torque is gravity plus spring plus the constant friction
    offset, displaced inside the stiction band by the approach direction;
    alternating the direction over `reps` visits lets averaging cancel the
    band term.  Returns (poses_out, tau_out) with one row per visit.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    cfg = plant_cfg or PlantConfig()
    rng = np.random.default_rng(seed)
    rows_q, rows_tau = [], []
    for k, pose in enumerate(poses):
        g = gravity_torque(model, params, pose)
        for r in range(reps):
            direction = 1.0 if r % 2 == 0 else -1.0
            tau = (g + direction * stick_frac * cfg.deadband
                   + rng.normal(size=N_BASIS) * noise)
            rows_q.append(pose)
            rows_tau.append(tau)
    return np.array(rows_q), np.array(rows_tau)


def random_hold_poses(limits: JointLimits, n: int, seed: int = 0,
                      margin: float = 0.15) -> np.ndarray:
    """Poses drawn uniformly inside the limit box shrunk by `margin`."""
    rng = np.random.default_rng(seed)
    inner = limits.shrunk(margin)
    u = rng.uniform(size=(n, N_BASIS))
    return inner.lower + u * (inner.upper - inner.lower)


@dataclass
class BenchResult:
    n: int
    mean_ms: float
    std_ms: float
    p95_ms: float
    max_ms: float


def benchmark_runtime(model: RobotModel, params: DynamicParameters,
                      n: int = 10_000, seed: int = 0) -> BenchResult:
    """Time `computed_torque` one state at a time over random states."""
    if n < 100:
        raise ValueError("benchmark needs n >= 100")
    st = sample_states(model, n, seed=seed)
    computed_torque(model, params, st.q[0], st.qd[0], st.qdd[0])  # warm caches
    times = np.zeros(n)
    for i in range(n):
        t0 = time.perf_counter()
        computed_torque(model, params, st.q[i], st.qd[i], st.qdd[i])
        times[i] = time.perf_counter() - t0
    times *= 1e3
    return BenchResult(n=n, mean_ms=float(times.mean()),
                       std_ms=float(times.std()),
                       p95_ms=float(np.percentile(times, 95)),
                       max_ms=float(times.max()))
