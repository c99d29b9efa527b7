"""Log I/O and signal conditioning for identification.

Logs are plain CSV with a fixed header.  Velocities and torques are
low-pass filtered forward-backward so nothing here introduces phase lag;
accelerations are never logged, they come from differentiating the filtered
velocities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .baseparams import BaseParamDecomposition
from .dynamics import FrictionConfig, JointState, active_param_mask, regressor
from .errors import DimensionError, LogFormatError, PaddingError
from .kinematics import N_BASIS, RobotModel

LOG_HEADER = ("t,"
              + ",".join(f"q{j}" for j in range(1, 8)) + ","
              + ",".join(f"qd{j}" for j in range(1, 8)) + ","
              + ",".join(f"tau{j}" for j in range(1, 8)))
MAX_JITTER = 0.01  # allowed relative deviation of any dt from the median


@dataclass
class TrajectoryLog:
    """Uniformly sampled motor-space positions, velocities, torques."""

    t: np.ndarray  # (N,)
    q: np.ndarray  # (N, 7)
    qd: np.ndarray  # (N, 7)
    tau: np.ndarray  # (N, 7)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        n = self.t.shape[0]
        for nm, arr in (("q", self.q), ("qd", self.qd), ("tau", self.tau)):
            if arr.shape != (n, N_BASIS):
                raise DimensionError(f"log.{nm} must have shape ({n}, 7)")

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def rate(self) -> float:
        if len(self) < 2:
            raise LogFormatError("log too short to define a sample rate")
        return 1.0 / float(np.median(np.diff(self.t)))

    def window(self, t0: float | None = None, t1: float | None = None) -> "TrajectoryLog":
        """Samples with t0 <= t <= t1 (either end open when None)."""
        keep = np.ones(len(self), dtype=bool)
        if t0 is not None:
            keep &= self.t >= t0
        if t1 is not None:
            keep &= self.t <= t1
        return TrajectoryLog(self.t[keep], self.q[keep], self.qd[keep],
                             self.tau[keep])


def write_log(path: str, log: TrajectoryLog) -> None:
    with open(path, "w") as fh:
        fh.write(LOG_HEADER + "\n")
        for i in range(len(log)):
            row = np.concatenate(([log.t[i]], log.q[i], log.qd[i], log.tau[i]))
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_log(path: str) -> TrajectoryLog:
    """Parse and validate a log; every complaint carries its line number."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogFormatError(f"{path}:1: empty file")
    if lines[0].strip() != LOG_HEADER:
        raise LogFormatError(
            f"{path}:1: bad header (expected `{LOG_HEADER}`)")
    rows = []
    for ln, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 22:
            raise LogFormatError(f"{path}:{ln}: expected 22 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise LogFormatError(f"{path}:{ln}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise LogFormatError(f"{path}:{ln}: non-finite value")
        rows.append((ln, vals))
    if len(rows) < 2:
        raise LogFormatError(f"{path}: fewer than two data rows")
    data = np.array([v for _, v in rows])
    t = data[:, 0]
    dt = np.diff(t)
    bad = np.flatnonzero(dt <= 0)
    if bad.size:
        ln = rows[bad[0] + 1][0]
        raise LogFormatError(f"{path}:{ln}: time not strictly increasing")
    med = float(np.median(dt))
    jitter = np.abs(dt - med) / med
    bad = np.flatnonzero(jitter > MAX_JITTER)
    if bad.size:
        ln = rows[bad[0] + 1][0]
        raise LogFormatError(
            f"{path}:{ln}: sample interval deviates {jitter[bad[0]]:.1%} from "
            f"the median (max {MAX_JITTER:.0%})")
    return TrajectoryLog(t, data[:, 1:8], data[:, 8:15], data[:, 15:22])


@dataclass
class FilterSpec:
    """Butterworth low-pass applied forward-backward (zero phase)."""

    order: int = 6
    cutoff_hz: float = 5.4


def _impulse_settle(sos: np.ndarray) -> int:
    """Samples for the filter impulse response to decay to 1e-9."""
    poles = np.concatenate([np.roots([1.0, s[4], s[5]]) for s in sos])
    r = float(np.max(np.abs(poles)))
    if r >= 1.0:
        return 10_000
    return max(1, math.ceil(math.log(1e-9) / math.log(r)))


def zero_phase_filter(x: np.ndarray, rate: float,
                      spec: FilterSpec | None = None) -> np.ndarray:
    """Forward-backward Butterworth low-pass along axis 0."""
    if spec is None:
        spec = FilterSpec()
    x = np.asarray(x, dtype=float)
    if spec.cutoff_hz >= rate / 2:
        raise PaddingError(
            f"cutoff {spec.cutoff_hz} Hz not below Nyquist ({rate / 2} Hz)")
    sos = scipy.signal.butter(spec.order, spec.cutoff_hz, fs=rate, output="sos")
    padlen = _impulse_settle(sos)
    if x.shape[0] <= padlen:
        raise PaddingError(
            f"signal of {x.shape[0]} samples too short for filter padding "
            f"({padlen} samples at {rate:g} Hz)")
    return scipy.signal.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def differentiate(x: np.ndarray, rate: float) -> np.ndarray:
    """Second-order central differences along axis 0 (one-sided at ends)."""
    return np.gradient(np.asarray(x, dtype=float), 1.0 / rate,
                       axis=0, edge_order=2)


@dataclass
class IdentProblem:
    """Stacked least-squares data for the parameter estimation step.

    Rows are sample-major (7 motor rows per sample).  `W` holds only the
    structurally active columns; `weights` are per-motor factors applied as
    sqrt-weights on the rows by the solver.
    """

    W: np.ndarray  # (7 N, n_active)
    b: np.ndarray  # (7 N,)
    active: np.ndarray  # (n_active,) full-vector column indices
    weights: np.ndarray  # (7,)
    rate: float
    states: JointState  # filtered states the rows were built from
    tau: np.ndarray  # (N, 7) filtered torques
    base: BaseParamDecomposition | None = None
    n_params: int = 0

    @property
    def n_samples(self) -> int:
        return self.tau.shape[0]


def build_problem(model: RobotModel, log: TrajectoryLog, *,
                  filter_spec: FilterSpec | None = None,
                  filter_positions: bool = False,
                  base: BaseParamDecomposition | None = None,
                  friction: FrictionConfig | None = None,
                  weights: np.ndarray | None = None,
                  trim: int | None = None) -> IdentProblem:
    """Condition a log and stack the identification regressor.

    Velocities and torques are zero-phase filtered; positions pass through
    unless `filter_positions`.  Accelerations come from differentiating the
    filtered velocities.  The regressor is evaluated on the conditioned
    states and then every column is run through the same zero-phase filter
    as the torques: friction columns switch sharply at velocity reversals,
    and both sides of the equation must see identical linear filtering or
    the residual picks up a bias at every reversal.  `trim` drops that many
    samples from each end after filtering; the default drops the filter
    settle length, where the forward-backward padding leaves transients
    large enough to bias the fit.  Per-motor weights default to the
    reciprocal torque range so no motor dominates on units alone.
    """
    rate = log.rate
    if filter_spec is None:
        filter_spec = FilterSpec()
    q = zero_phase_filter(log.q, rate, filter_spec) if filter_positions else log.q
    qd = zero_phase_filter(log.qd, rate, filter_spec)
    tau = zero_phase_filter(log.tau, rate, filter_spec)
    qdd = differentiate(qd, rate)

    states = JointState(q, qd, qdd)
    Y = regressor(model, states, friction)
    active = np.flatnonzero(active_param_mask(model))
    n = len(log)
    Ya = Y[:, :, active].reshape(n, -1)
    Ya = zero_phase_filter(Ya, rate, filter_spec).reshape(n, N_BASIS, active.size)

    if trim is None:
        sos = scipy.signal.butter(filter_spec.order, filter_spec.cutoff_hz,
                                  fs=rate, output="sos")
        trim = _impulse_settle(sos)
    if trim:
        if 2 * trim >= n:
            raise PaddingError(
                f"log of {n} samples leaves nothing after trimming {trim} "
                "from each end")
        sl = slice(trim, -trim)
        states = JointState(q[sl], qd[sl], qdd[sl])
        Ya, tau = Ya[sl], tau[sl]

    if weights is None:
        rng = tau.max(axis=0) - tau.min(axis=0)
        weights = np.ones(N_BASIS)
        for j in range(N_BASIS):
            if rng[j] > 1e-12:
                weights[j] = 1.0 / rng[j]
            else:
                warnings.warn(
                    f"motor {j + 1} torque range is degenerate; using unit weight",
                    stacklevel=2)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (N_BASIS,):
            raise DimensionError("weights must have shape (7,)")

    W = Ya.reshape(-1, active.size)
    return IdentProblem(W=W, b=tau.reshape(-1), active=active, weights=weights,
                        rate=rate, states=states, tau=tau, base=base,
                        n_params=model.n_params)
