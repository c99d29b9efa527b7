"""Periodic excitation trajectories and conditioning of the base regressor.

Trajectories are finite Fourier series per motor coordinate, parameterized so
that the series integrates cleanly: position holds the 1/(k w_f) factors, so
velocity coefficients are the raw a/b pairs.  Optimization minimizes the
condition number of the column-scaled base regressor sampled over one period,
subject to position and velocity box limits on a time grid.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .baseparams import BaseParamDecomposition
from .dynamics import FrictionConfig, JointState, regressor
from .errors import (ConvergenceError, DimensionError, ModelConfigError,
                     ScalingError)
from .kinematics import N_BASIS, RobotModel, default_limits_path

DEFAULT_BASE_FREQ = 0.18  # Hz
DEFAULT_HARMONICS = 6
STANDARD_RATE = 200.0  # Hz, canonical grid for reporting kappa


@dataclass
class JointLimits:
    """Motor-space position box and symmetric velocity bound."""

    lower: np.ndarray  # (7,)
    upper: np.ndarray  # (7,)
    velocity: np.ndarray  # (7,), positive

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        for nm, v in (("lower", self.lower), ("upper", self.upper),
                      ("velocity", self.velocity)):
            if v.shape != (N_BASIS,):
                raise DimensionError(f"limits.{nm} must have shape (7,)")
        if np.any(self.upper <= self.lower):
            raise ModelConfigError("position limits must satisfy lower < upper")
        if np.any(self.velocity <= 0):
            raise ModelConfigError("velocity limits must be positive")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def shrunk(self, frac: float) -> "JointLimits":
        """Box shrunk about its center by `frac` of the half range."""
        c, h = self.center, self.half_range
        return JointLimits(c - (1 - frac) * h, c + (1 - frac) * h,
                           (1 - frac) * self.velocity)


def load_limits(path: str | None = None) -> JointLimits:
    """Read [position]/[velocity] limits keyed m1..m7.

    Position rows are `mJ = lo hi`; velocity rows are `mJ = vmax`.  With no
    path, loads the bundled PSM-Si limits.
    """
    if path is None:
        path = default_limits_path()
    sections: dict[str, dict[str, list[float]]] = {}
    current = None
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections[current] = {}
                continue
            if current is None or "=" not in line:
                raise ModelConfigError(f"{path}:{ln}: expected section or key=value")
            key, _, val = line.partition("=")
            try:
                sections[current][key.strip()] = [float(tok) for tok in val.split()]
            except ValueError:
                raise ModelConfigError(f"{path}:{ln}: non-numeric limit value") from None
    for req in ("position", "velocity"):
        if req not in sections:
            raise ModelConfigError(f"{path}: missing [{req}] section")
    lo, hi, vel = np.zeros(N_BASIS), np.zeros(N_BASIS), np.zeros(N_BASIS)
    for j in range(N_BASIS):
        key = f"m{j + 1}"
        if key not in sections["position"] or len(sections["position"][key]) != 2:
            raise ModelConfigError(f"{path}: [position] needs `{key} = lo hi`")
        lo[j], hi[j] = sections["position"][key]
        if key not in sections["velocity"] or len(sections["velocity"][key]) != 1:
            raise ModelConfigError(f"{path}: [velocity] needs `{key} = vmax`")
        vel[j] = sections["velocity"][key][0]
    return JointLimits(lo, hi, vel)


@dataclass
class FourierTrajectory:
    """Finite Fourier series q_j(t) about an offset pose.

    q_j(t)   = q0_j + sum_k [ a_jk sin(k w t) - b_jk cos(k w t) ] / (k w)
    qd_j(t)  =        sum_k [ a_jk cos(k w t) + b_jk sin(k w t) ]
    qdd_j(t) =        sum_k k w [ -a_jk sin(k w t) + b_jk cos(k w t) ]

    with w = 2 pi base_freq.
    """

    base_freq: float
    q0: np.ndarray  # (7,)
    a: np.ndarray  # (7, n_harmonics)
    b: np.ndarray  # (7, n_harmonics)

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if self.base_freq <= 0:
            raise ModelConfigError("base_freq must be positive")
        if self.q0.shape != (N_BASIS,) or self.a.shape != self.b.shape \
                or self.a.shape[0] != N_BASIS:
            raise DimensionError("expected q0 (7,), a and b (7, n_harmonics)")

    @property
    def n_harmonics(self) -> int:
        return self.a.shape[1]

    @property
    def period(self) -> float:
        return 1.0 / self.base_freq

    def sample(self, t) -> JointState:
        """Positions, velocities, accelerations at times `t` (scalar or 1-D)."""
        t = np.asarray(t, dtype=float)
        single = t.ndim == 0
        tt = np.atleast_1d(t)
        w = 2.0 * math.pi * self.base_freq
        k = np.arange(1, self.n_harmonics + 1)
        ph = w * np.outer(tt, k)  # (N, n_H)
        s, c = np.sin(ph), np.cos(ph)
        kw = k * w
        q = self.q0 + s @ (self.a / kw).T - c @ (self.b / kw).T
        qd = c @ self.a.T + s @ self.b.T
        qdd = -s @ (self.a * kw).T + c @ (self.b * kw).T
        if single:
            return JointState(q[0], qd[0], qdd[0])
        return JointState(q, qd, qdd)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("[trajectory]\n")
            fh.write(f"base_freq = {self.base_freq:.17g}\n")
            fh.write(f"harmonics = {self.n_harmonics}\n")
            for name, arr in (("q0", self.q0[:, None]), ("a", self.a), ("b", self.b)):
                fh.write(f"[{name}]\n")
                for j in range(N_BASIS):
                    row = " ".join(f"{v:.17g}" for v in arr[j])
                    fh.write(f"m{j + 1} = {row}\n")

    @classmethod
    def load(cls, path: str) -> "FourierTrajectory":
        sections: dict[str, dict[str, list[float]]] = {}
        current = None
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if line.startswith("[") and line.endswith("]"):
                    current = line[1:-1].strip()
                    sections[current] = {}
                    continue
                if current is None or "=" not in line:
                    raise ModelConfigError(f"{path}:{ln}: expected section or key=value")
                key, _, val = line.partition("=")
                try:
                    sections[current][key.strip()] = [float(t) for t in val.split()]
                except ValueError:
                    raise ModelConfigError(f"{path}:{ln}: non-numeric value") from None
        for req in ("trajectory", "q0", "a", "b"):
            if req not in sections:
                raise ModelConfigError(f"{path}: missing [{req}] section")
        head = sections["trajectory"]
        if "base_freq" not in head or "harmonics" not in head:
            raise ModelConfigError(f"{path}: [trajectory] needs base_freq and harmonics")
        n_h = int(head["harmonics"][0])
        q0 = np.zeros(N_BASIS)
        a = np.zeros((N_BASIS, n_h))
        b = np.zeros((N_BASIS, n_h))
        for j in range(N_BASIS):
            key = f"m{j + 1}"
            for sec, arr, width in (("q0", q0, 1), ("a", a, n_h), ("b", b, n_h)):
                if key not in sections[sec] or len(sections[sec][key]) != width:
                    raise ModelConfigError(
                        f"{path}: [{sec}] needs `{key}` with {width} value(s)")
                if width == 1:
                    arr[j] = sections[sec][key][0]
                else:
                    arr[j] = sections[sec][key]
        return cls(head["base_freq"][0], q0, a, b)

    def standard_grid(self) -> np.ndarray:
        """Canonical reporting grid: one period at the standard rate."""
        n = max(1, round(STANDARD_RATE * self.period))
        return np.arange(n) / STANDARD_RATE


@dataclass
class LimitReport:
    ok: bool
    pos_margin: np.ndarray  # (7,) worst slack to either position bound
    vel_margin: np.ndarray  # (7,) worst slack to the velocity bound

    def worst(self) -> float:
        return float(min(self.pos_margin.min(), self.vel_margin.min()))


def check_limits(traj: FourierTrajectory, limits: JointLimits,
                 n_grid: int = 2000) -> LimitReport:
    """Worst-case slack of a trajectory against limits on a dense period grid."""
    t = np.arange(n_grid) * (traj.period / n_grid)
    st = traj.sample(t)
    pos = np.minimum(st.q - limits.lower, limits.upper - st.q).min(axis=0)
    vel = (limits.velocity - np.abs(st.qd)).min(axis=0)
    return LimitReport(ok=bool(pos.min() >= 0 and vel.min() >= 0),
                       pos_margin=pos, vel_margin=vel)


def condition_number(W: np.ndarray, scaled: bool = True) -> float:
    """2-norm condition number, by default after unit-RMS column scaling.

    Column scaling makes the number comparable across parameters with mixed
    units.  A column with zero RMS cannot be scaled and means the batch does
    not excite that parameter at all.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise DimensionError("condition_number expects a 2-D matrix")
    if scaled:
        rms = np.sqrt(np.mean(W * W, axis=0))
        bad = np.flatnonzero(rms == 0)
        if bad.size:
            raise ScalingError(
                f"zero-RMS regressor column(s) {bad.tolist()}: batch does not "
                "excite these parameters")
        W = W / rms
    s = np.linalg.svd(W, compute_uv=False)
    if s[-1] == 0.0:
        return math.inf
    return float(s[0] / s[-1])


def trajectory_condition(model: RobotModel, dec: BaseParamDecomposition,
                         traj: FourierTrajectory, t: np.ndarray | None = None,
                         friction: FrictionConfig | None = None) -> float:
    """Scaled condition number of the base regressor along a trajectory."""
    if t is None:
        t = traj.standard_grid()
    st = traj.sample(t)
    Y = regressor(model, st, friction)
    Wb = dec.base_regressor(Y).reshape(-1, dec.n_base)
    return condition_number(Wb)


def random_trajectory(limits: JointLimits, base_freq: float = DEFAULT_BASE_FREQ,
                      n_harmonics: int = DEFAULT_HARMONICS,
                      seed=0, amp_frac: float = 0.9) -> FourierTrajectory:
    """Random trajectory guaranteed feasible by triangle-inequality bounds.

    Peak position excursion is bounded by sum_k |c_jk| / (k w) and peak
    velocity by sum_k |c_jk| with |c| = hypot(a, b); coefficients are drawn
    and then scaled so both bounds fit inside a random fraction of the
    available margins.
    """
    rng = np.random.default_rng(seed)
    w = 2.0 * math.pi * base_freq
    k = np.arange(1, n_harmonics + 1)
    q0 = limits.center + 0.25 * limits.half_range * rng.uniform(-1, 1, N_BASIS)
    a = rng.normal(size=(N_BASIS, n_harmonics))
    b = rng.normal(size=(N_BASIS, n_harmonics))
    amp = np.hypot(a, b)
    pos_bound = (amp / (k * w)).sum(axis=1)
    vel_bound = amp.sum(axis=1)
    pos_room = np.minimum(limits.upper - q0, q0 - limits.lower)
    frac = amp_frac * rng.uniform(0.3, 1.0, N_BASIS)
    scale = frac * np.minimum(pos_room / pos_bound, limits.velocity / vel_bound)
    return FourierTrajectory(base_freq, q0, a * scale[:, None], b * scale[:, None])


@dataclass
class OptimizationResult:
    trajectory: FourierTrajectory
    kappa: float  # scaled condition number on the standard grid
    start_kappas: list[float]  # verified kappa per start, inf if rejected
    selected_start: int
    n_base: int


def _pack(traj: FourierTrajectory) -> np.ndarray:
    return np.concatenate([traj.q0, traj.a.ravel(), traj.b.ravel()])


def _unpack(x: np.ndarray, base_freq: float, n_h: int) -> FourierTrajectory:
    q0 = x[:N_BASIS]
    a = x[N_BASIS:N_BASIS + N_BASIS * n_h].reshape(N_BASIS, n_h)
    b = x[N_BASIS + N_BASIS * n_h:].reshape(N_BASIS, n_h)
    return FourierTrajectory(base_freq, q0, a, b)


def _solve_one_start(args):
    (model, dec, limits, base_freq, n_h, seed, start, n_opt, maxiter,
     shrink, friction) = args
    inner = limits.shrunk(shrink)
    traj0 = random_trajectory(inner, base_freq, n_h,
                              seed=np.random.default_rng([seed, start]))
    period = traj0.period
    t_opt = np.arange(n_opt) * (period / n_opt)

    def objective(x):
        traj = _unpack(x, base_freq, n_h)
        st = traj.sample(t_opt)
        Y = regressor(model, st, friction)
        Wb = dec.base_regressor(Y).reshape(-1, dec.n_base)
        rms = np.sqrt(np.mean(Wb * Wb, axis=0))
        if np.any(rms == 0):
            return 50.0
        s = np.linalg.svd(Wb / rms, compute_uv=False)
        if s[-1] <= 0:
            return 50.0
        return math.log(s[0] / s[-1])

    def constraints(x):
        traj = _unpack(x, base_freq, n_h)
        st = traj.sample(t_opt)
        return np.concatenate([
            (st.q - inner.lower).ravel(),
            (inner.upper - st.q).ravel(),
            (inner.velocity - st.qd).ravel(),
            (st.qd + inner.velocity).ravel(),
        ])

    res = scipy.optimize.minimize(
        objective, _pack(traj0), method="SLSQP",
        constraints=[{"type": "ineq", "fun": constraints}],
        options={"maxiter": maxiter, "ftol": 1e-3},
    )
    traj = _unpack(res.x, base_freq, n_h)
    # Reject if the optimizer left the (unshrunk) feasible set; the shrink
    # margin is what keeps grid-sampled constraints honest between nodes.
    if not check_limits(traj, limits, n_grid=10 * n_opt).ok:
        traj = traj0
        if not check_limits(traj, limits, n_grid=10 * n_opt).ok:
            return math.inf, None
    kappa = trajectory_condition(model, dec, traj, friction=friction)
    return kappa, traj


def optimize_trajectory(model: RobotModel, dec: BaseParamDecomposition,
                        limits: JointLimits,
                        base_freq: float = DEFAULT_BASE_FREQ,
                        n_harmonics: int = DEFAULT_HARMONICS,
                        seed: int = 0, n_starts: int = 6, maxiter: int = 40,
                        n_opt: int = 96, shrink: float = 0.02,
                        friction: FrictionConfig | None = None) -> OptimizationResult:
    """Minimize the scaled condition number of the base regressor.

    Runs SLSQP from `n_starts` random feasible starts against limits shrunk
    by `shrink`, verifies each candidate against the unshrunk limits on a
    10x denser grid, and reports the best verified candidate with its
    condition number on the standard grid.  Set DYNIDENT_THREADS to run
    starts in parallel processes.
    """
    args = [(model, dec, limits, base_freq, n_harmonics, seed, s, n_opt,
             maxiter, shrink, friction) for s in range(n_starts)]
    workers = int(os.environ.get("DYNIDENT_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one_start, args))
    else:
        results = [_solve_one_start(a) for a in args]

    kappas = [k for k, _ in results]
    best = min(range(n_starts), key=lambda i: kappas[i])
    if not math.isfinite(kappas[best]):
        raise ConvergenceError("no start produced a feasible trajectory")
    return OptimizationResult(
        trajectory=results[best][1], kappa=kappas[best], start_kappas=kappas,
        selected_start=best, n_base=dec.n_base,
    )
