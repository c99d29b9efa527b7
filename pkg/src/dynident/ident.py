"""Physically consistent parameter estimation.

The estimation step is a convex program: least squares on the stacked
regressor, subject to box bounds on masses, friction, and motor terms,
center-of-mass boxes tied to the mass (h = m c stays linear), and one
4x4 semidefinite block per inertial link that certifies the link could be a
real mass density.  Directions the data never excites are pinned to the
center of the feasible region by a tiny regularizer so the returned full
vector is unique and deterministic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.linalg
import scipy.optimize

from .dynamics import (DynamicParameters, JointState, PARAMS_PER_LINK,
                       inverse_dynamics, regressor)
from .errors import (ConvergenceError, DimensionError, InfeasibleError,
                     UndefinedMetricError)
from .kinematics import N_BASIS, RobotModel
from .signals import IdentProblem

LMI_MARGIN = 1e-6
PIN_SIGMA_FRAC = 1e-8  # singular values below this fraction count as unexcited


def nrmse(reference: np.ndarray, predicted: np.ndarray, axis: int = 0) -> np.ndarray:
    """Root-mean-square error normalized by the reference RMS, in percent."""
    reference = np.asarray(reference, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if reference.shape != predicted.shape:
        raise DimensionError("nrmse arrays must have matching shapes")
    den = np.sqrt((reference ** 2).mean(axis=axis))
    if np.any(den == 0):
        raise UndefinedMetricError("reference signal has zero RMS")
    num = np.sqrt(((predicted - reference) ** 2).mean(axis=axis))
    return 100.0 * num / den


def predict_torque(model: RobotModel, params: DynamicParameters,
                   states: JointState) -> np.ndarray:
    """Model torque along given states (all terms enabled)."""
    return inverse_dynamics(model, params, states)


def weighted_beta_distance(model: RobotModel, dec, states: JointState,
                           beta_hat: np.ndarray, beta_ref: np.ndarray) -> float:
    """Relative base-parameter distance in the excitation-defined norm.

    ||W_b (beta_hat - beta_ref)|| / ||W_b beta_ref|| with W_b the base
    regressor stacked over `states`.  This is the metric the experiment
    actually measures beta in: it weighs each direction by how strongly the
    excitation sees it, so collinear directions are compared by their torque
    effect rather than componentwise.
    """
    Wb = dec.base_regressor(regressor(model, states)).reshape(-1, dec.n_base)
    den = float(np.linalg.norm(Wb @ np.asarray(beta_ref, dtype=float)))
    if den == 0.0:
        raise UndefinedMetricError("reference base vector produces zero torque")
    return float(np.linalg.norm(Wb @ (np.asarray(beta_hat) - beta_ref))) / den


# ---------------------------------------------------------------------------
# Constraint sets


@dataclass
class ConsistencyConstraints:
    """Feasible region used by `solve_problem` and `audit_consistency`.

    `com_boxes[name]` is (3, 2): per-axis [lo, hi] for the center of mass in
    the link frame; it binds h = m c through linear inequalities.  `lmi`
    additionally requires each link's 4x4 density block to be positive
    semidefinite (with `lmi_margin` slack); switch it off for gravity-only
    data where the inertia entries are unexcited.
    """

    mass_bounds: dict[str, tuple[float, float]]
    com_boxes: dict[str, np.ndarray]
    fv_bounds: tuple[float, float] = (0.0, 1e3)
    fc_bounds: tuple[float, float] = (0.0, 1e3)
    fb_bound: float = 100.0
    im_bounds: tuple[float, float] = (0.0, 10.0)
    ks_bounds: tuple[float, float] = (0.0, 1e4)
    lmi: bool = True
    lmi_margin: float = LMI_MARGIN

    @classmethod
    def default(cls, model: RobotModel, com_scale: float = 1.5,
                mass_hi: float = 50.0) -> "ConsistencyConstraints":
        """Boxes sized from the kinematic table.

        The COM box of a link spans `com_scale` times the largest offset
        among its own and its children's frame translations (at least 8 cm),
        on every axis.
        """
        children: dict[str, list] = {}
        for lk in model.links:
            if lk.parent is not None and lk.parent != "base":
                children.setdefault(lk.parent, []).append(lk)
        mass_bounds, com_boxes = {}, {}
        for lk in model.links:
            if not lk.has_inertia:
                continue
            ext = [abs(lk.a), abs(lk.d_const)]
            for ch in children.get(lk.name, []):
                ext += [abs(ch.a), abs(ch.d_const)]
            r = com_scale * max(max(ext), 0.08)
            mass_bounds[lk.name] = (0.01, mass_hi)
            com_boxes[lk.name] = np.array([[-r, r]] * 3)
        return cls(mass_bounds=mass_bounds, com_boxes=com_boxes)


def _density_block(theta_link: np.ndarray) -> np.ndarray:
    """4x4 block whose PSD-ness certifies a realizable mass density."""
    ixx, ixy, ixz, iyy, iyz, izz, hx, hy, hz, m = theta_link[:10]
    I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    D = np.zeros((4, 4))
    D[:3, :3] = 0.5 * np.trace(I) * np.eye(3) - I
    D[:3, 3] = D[3, :3] = (hx, hy, hz)
    D[3, 3] = m
    return D


@dataclass
class ConsistencyAudit:
    ok: bool
    min_eig: dict[str, float]  # density block eigenvalue floor per link
    violations: list[str]


def audit_consistency(model: RobotModel, params: DynamicParameters,
                      constraints: ConsistencyConstraints | None = None,
                      eig_tol: float = -1e-6) -> ConsistencyAudit:
    """Check a parameter vector against the physical feasibility region."""
    if constraints is None:
        constraints = ConsistencyConstraints.default(model)
    th = params.theta
    min_eig: dict[str, float] = {}
    bad: list[str] = []
    for i, lk in enumerate(model.links):
        off = PARAMS_PER_LINK * i
        if lk.has_inertia:
            e = float(np.linalg.eigvalsh(_density_block(th[off:off + 10])).min())
            min_eig[lk.name] = e
            if e < eig_tol:
                bad.append(f"{lk.name}: density block min eig {e:.3e}")
            m = th[off + 9]
            lo, hi = constraints.mass_bounds.get(lk.name, (0.0, math.inf))
            if not (lo - 1e-9 <= m <= hi + 1e-9):
                bad.append(f"{lk.name}: mass {m:.3g} outside [{lo}, {hi}]")
            box = constraints.com_boxes.get(lk.name)
            if box is not None and m > 0:
                c = th[off + 6:off + 9] / m
                for ax in range(3):
                    if not (box[ax, 0] - 1e-9 <= c[ax] <= box[ax, 1] + 1e-9):
                        bad.append(f"{lk.name}: com[{ax}] {c[ax]:.3g} outside box")
        if lk.has_friction:
            fv, fc, fb = th[off + 10], th[off + 11], th[off + 12]
            if not (constraints.fv_bounds[0] - 1e-9 <= fv <= constraints.fv_bounds[1]):
                bad.append(f"{lk.name}: Fv {fv:.3g} out of bounds")
            if not (constraints.fc_bounds[0] - 1e-9 <= fc <= constraints.fc_bounds[1]):
                bad.append(f"{lk.name}: Fc {fc:.3g} out of bounds")
            if abs(fb) > constraints.fb_bound + 1e-9:
                bad.append(f"{lk.name}: Fb {fb:.3g} out of bounds")
        if lk.has_motor_inertia:
            im = th[off + 13]
            if not (constraints.im_bounds[0] - 1e-9 <= im <= constraints.im_bounds[1]):
                bad.append(f"{lk.name}: Im {im:.3g} out of bounds")
        if lk.has_spring:
            ks = th[off + 14]
            if not (constraints.ks_bounds[0] - 1e-9 <= ks <= constraints.ks_bounds[1]):
                bad.append(f"{lk.name}: Ks {ks:.3g} out of bounds")
    return ConsistencyAudit(ok=not bad, min_eig=min_eig, violations=bad)


# ---------------------------------------------------------------------------
# Convex estimation


# d(D_k)/d(theta_j) for the ten inertial slots, fixed structure matrices.
def _density_grads() -> list[np.ndarray]:
    grads = []
    for j in range(6):
        dI = np.zeros((3, 3))
        pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        r, c = pairs[j]
        dI[r, c] = dI[c, r] = 1.0
        G = np.zeros((4, 4))
        G[:3, :3] = 0.5 * np.trace(dI) * np.eye(3) - dI
        grads.append(G)
    for ax in range(3):
        G = np.zeros((4, 4))
        G[ax, 3] = G[3, ax] = 1.0
        grads.append(G)
    G = np.zeros((4, 4))
    G[3, 3] = 1.0
    grads.append(G)
    return grads


_DENSITY_GRADS = _density_grads()


@dataclass
class SolveReport:
    solver: str
    objective: float  # weighted residual sum of squares
    nrmse: np.ndarray  # (7,) percent, per motor
    kkt_residual: float  # relative stationarity residual from the duals
    n_pinned: int  # directions held by the regularizer
    active_constraints: list[str]  # non-LMI constraints within tolerance of binding
    lmi_min_eig: dict[str, float]


@dataclass
class IdentResult:
    params: DynamicParameters
    beta: np.ndarray | None
    report: SolveReport


def _pin_center(model: RobotModel, cons: ConsistencyConstraints,
                active: np.ndarray) -> np.ndarray:
    """A strictly feasible anchor for unexcited directions.

    Small physical magnitudes, deep inside every box and the density cone:
    binding a pinned direction against a constraint would feed its dual back
    into the excited directions and bias the fit.
    """
    center = np.zeros(model.n_params)
    for i, lk in enumerate(model.links):
        off = PARAMS_PER_LINK * i
        if lk.has_inertia:
            center[off + 0] = center[off + 3] = center[off + 5] = 1e-2
            center[off + 9] = 1.0
        if lk.has_friction:
            center[off + 10] = 0.1
            center[off + 11] = 0.1
        if lk.has_motor_inertia:
            center[off + 13] = 0.01
        if lk.has_spring:
            center[off + 14] = 1.0
    return center[active]


class _ConstraintSet:
    """Shared constraint assembly for both solve stages.

    All scalar constraints live in one G x <= h block (duals come back as a
    single vector); density LMIs are kept per link.
    """

    def __init__(self, model: RobotModel, constraints: ConsistencyConstraints,
                 active: np.ndarray):
        self.pos = {int(c): i for i, c in enumerate(active)}
        self.n_act = active.size
        g_rows, g_rhs, g_names = [], [], []

        def add_le(coefs: dict[int, float], rhs: float, label: str):
            row = np.zeros(self.n_act)
            for col, v in coefs.items():
                if col not in self.pos:
                    return  # structurally absent, nothing to bound
                row[self.pos[col]] = v
            g_rows.append(row)
            g_rhs.append(rhs)
            g_names.append(label)

        def add_box(col: int, lo: float, hi: float, label: str):
            add_le({col: 1.0}, hi, f"{label} <= {hi:g}")
            add_le({col: -1.0}, -lo, f"{label} >= {lo:g}")

        self.lmi_cols: list[tuple[str, list[int]]] = []
        for i, lk in enumerate(model.links):
            off = PARAMS_PER_LINK * i
            if lk.has_inertia:
                lo, hi = constraints.mass_bounds.get(lk.name, (0.01, 50.0))
                add_box(off + 9, lo, hi, f"L{lk.name}_m")
                box = constraints.com_boxes.get(lk.name)
                if box is not None:
                    for ax, comp in enumerate("xyz"):
                        # h - m c_hi <= 0 and m c_lo - h <= 0
                        add_le({off + 6 + ax: 1.0, off + 9: -box[ax, 1]}, 0.0,
                               f"L{lk.name}_h{comp} <= m*{box[ax, 1]:g}")
                        add_le({off + 6 + ax: -1.0, off + 9: box[ax, 0]}, 0.0,
                               f"L{lk.name}_h{comp} >= m*{box[ax, 0]:g}")
                if constraints.lmi:
                    self.lmi_cols.append(
                        (lk.name, [self.pos[off + j] for j in range(10)]))
            if lk.has_friction:
                add_box(off + 10, *constraints.fv_bounds, f"A{lk.name}_Fv")
                add_box(off + 11, *constraints.fc_bounds, f"A{lk.name}_Fc")
                add_box(off + 12, -constraints.fb_bound, constraints.fb_bound,
                        f"A{lk.name}_Fb")
            if lk.has_motor_inertia:
                add_box(off + 13, *constraints.im_bounds, f"A{lk.name}_Im")
            if lk.has_spring:
                add_box(off + 14, *constraints.ks_bounds, f"A{lk.name}_Ks")
        self.G = np.array(g_rows)
        self.h = np.array(g_rhs)
        self.names = g_names
        self.margin = constraints.lmi_margin

    def attach(self, x: cp.Variable):
        """cvxpy constraints plus handles for dual recovery."""
        lin = self.G @ x <= self.h
        lmis = []
        for name, cols in self.lmi_cols:
            expr = sum(x[c] * cp.Constant(_DENSITY_GRADS[j])
                       for j, c in enumerate(cols))
            lmis.append((name, cols, expr >> self.margin * np.eye(4)))
        return lin, lmis


def _run_solver(prob: cp.Problem, solver: str | None, what: str) -> str:
    order = [solver] if solver else ["CLARABEL", "SCS"]
    last_exc = None
    for name in order:
        try:
            prob.solve(solver=name)
        except cp.error.SolverError as exc:  # pragma: no cover - env specific
            last_exc = exc
            continue
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            raise InfeasibleError(
                f"{what}: constraints admit no parameters ({prob.status})")
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise ConvergenceError(
                f"{what}: solver {name} returned status {prob.status}")
        if prob.status == "optimal_inaccurate":
            warnings.warn(f"{what}: solver {name} reports reduced accuracy",
                          stacklevel=3)
        return name
    raise ConvergenceError(f"{what}: no solver available: {last_exc}")


def solve_problem(problem: IdentProblem, model: RobotModel,
                  constraints: ConsistencyConstraints | None = None,
                  solver: str | None = None) -> IdentResult:
    """Estimate parameters from a conditioned log under consistency constraints.

    Two conic solves.  The first minimizes the weighted residual over the
    feasible region; it fixes the fit and the base vector.  The second keeps
    the excited row space exactly there (so the residual and base vector
    cannot move) and selects, among the equivalent full vectors, the one
    nearest a small-magnitude interior anchor; this makes the unexcited
    directions deterministic without feeding constraint duals back into the
    estimate.  The report carries per-motor NRMSE and the relative KKT
    stationarity residual of the estimation stage, rebuilt from the duals.
    """
    if constraints is None:
        constraints = ConsistencyConstraints.default(model)
    active = problem.active
    n_act = active.size

    # Row weighting, then QR compression: the program only needs W^T W and
    # W^T b, so R x ~ Q^T b gives an exact n_act-row equivalent.
    sw = np.sqrt(np.repeat(problem.weights[None, :], problem.n_samples, 0).ravel())
    Ws = problem.W * sw[:, None]
    bs = problem.b * sw
    Q, R = scipy.linalg.qr(Ws, mode="economic")
    qb = Q.T @ bs

    _, sing, Vt = np.linalg.svd(R)
    excited = sing >= PIN_SIGMA_FRAC * sing[0]
    V_row = Vt[excited]  # (n_row, n_act) coordinates of the excited row space
    center = _pin_center(model, constraints, active)
    cset = _ConstraintSet(model, constraints, active)

    # Stage 1: the estimate.  The microscopic anchor term only bounds the
    # flat directions; at 1e-12 of the data curvature it cannot bias them.
    mu = (1e-6 * sing[0]) ** 2
    x1 = cp.Variable(n_act)
    lin1, lmis1 = cset.attach(x1)
    obj1 = cp.sum_squares(R @ x1 - qb) + mu * cp.sum_squares(x1 - center)
    used = _run_solver(
        cp.Problem(cp.Minimize(obj1), [lin1] + [c for _, _, c in lmis1]),
        solver, "estimation")
    x_hat = np.asarray(x1.value, dtype=float)

    # KKT stationarity of stage 1 from the returned duals.
    grad = 2.0 * R.T @ (R @ x_hat - qb) + 2.0 * mu * (x_hat - center)
    lam = np.asarray(lin1.dual_value, dtype=float).ravel()
    contrib = cset.G.T @ lam
    lmi_term = np.zeros(n_act)
    for _, cols, con in lmis1:
        lam_m = np.asarray(con.dual_value, dtype=float)
        lam_m = 0.5 * (lam_m + lam_m.T)
        for j, c in enumerate(cols):
            lmi_term[c] += float(np.tensordot(lam_m, _DENSITY_GRADS[j]))
    residual = grad + contrib - lmi_term
    scale = max(1.0, float(np.linalg.norm(grad)),
                float(np.linalg.norm(contrib)), float(np.linalg.norm(lmi_term)))
    kkt = float(np.linalg.norm(residual)) / scale

    # Stage 2: nail down the flat directions without touching the fit.
    x2 = cp.Variable(n_act)
    lin2, lmis2 = cset.attach(x2)
    t0 = V_row @ x_hat
    prob2 = cp.Problem(cp.Minimize(cp.sum_squares(x2 - center)),
                       [V_row @ x2 == t0, lin2] + [c for _, _, c in lmis2])
    try:
        _run_solver(prob2, solver, "selection")
        x_sel = np.asarray(x2.value, dtype=float)
        # The equality is enforced numerically; keep the stage-1 point if the
        # solver drifted out of the data row space.
        if np.linalg.norm(V_row @ x_sel - t0) <= 1e-6 * max(1.0, np.linalg.norm(t0)):
            x_hat = x_sel
    except (ConvergenceError, InfeasibleError):
        warnings.warn("selection stage failed; keeping the raw estimate",
                      stacklevel=2)

    lmi_eigs: dict[str, float] = {}
    for name_k, cols in cset.lmi_cols:
        Dk = sum(x_hat[c] * _DENSITY_GRADS[j] for j, c in enumerate(cols))
        lmi_eigs[name_k] = float(np.linalg.eigvalsh(Dk).min())
    slack = cset.h - cset.G @ x_hat
    tol = 1e-6 * np.maximum(1.0, np.abs(cset.h))
    active_cons = [cset.names[i] for i in np.flatnonzero(slack <= tol)]

    theta = np.zeros(model.n_params)
    theta[active] = x_hat
    params = DynamicParameters(theta)
    pred = (problem.W @ x_hat).reshape(-1, N_BASIS)
    err_nrmse = np.zeros(N_BASIS)
    for j in range(N_BASIS):
        den = math.sqrt(float((problem.tau[:, j] ** 2).mean()))
        num = math.sqrt(float(((pred[:, j] - problem.tau[:, j]) ** 2).mean()))
        err_nrmse[j] = 100.0 * num / den if den > 0 else math.nan

    beta = problem.base.beta(theta) if problem.base is not None else None
    rss = float(np.sum((Ws @ x_hat - bs) ** 2))
    report = SolveReport(
        solver=used,
        objective=rss,
        nrmse=err_nrmse,
        kkt_residual=kkt,
        n_pinned=int(n_act - V_row.shape[0]),
        active_constraints=active_cons,
        lmi_min_eig=lmi_eigs,
    )
    return IdentResult(params=params, beta=beta, report=report)


# ---------------------------------------------------------------------------
# Statics-only fit


@dataclass
class StaticsResult:
    params: DynamicParameters  # only h and m of inertial links are set
    masses: dict[str, float]
    coms: dict[str, np.ndarray]
    offsets: np.ndarray  # per fitted motor row
    rows: tuple[int, ...]
    nrmse: np.ndarray  # per fitted motor row, percent
    grad_norm: float
    n_iter: int


def fit_statics(model: RobotModel, poses: np.ndarray, tau: np.ndarray,
                rows: tuple[int, ...] = (0, 1, 2),
                constraints: ConsistencyConstraints | None = None,
                fit_offsets: bool = True) -> StaticsResult:
    """Fit link masses and mass centers to holding torques at rest.

    The model is G(q) plus one constant offset per fitted motor row (the
    offsets absorb friction preload so they are nuisance parameters, not
    part of the returned gravity model).  Decision variables are (m, c) per
    inertial link, bounded by the constraint boxes; h = m c keeps the
    problem smooth and the gradient analytic.
    """
    if constraints is None:
        constraints = ConsistencyConstraints.default(model)
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    if tau.shape != (poses.shape[0], N_BASIS):
        raise DimensionError("tau must be (n_poses, 7)")
    n = poses.shape[0]
    rows = tuple(rows)

    # Gravity regressor columns for h (3 per link) and m (1 per link).
    z = np.zeros_like(poses)
    Y = regressor(model, JointState(poses, z, z))
    links = [(i, lk.name) for i, lk in enumerate(model.links) if lk.has_inertia]
    Yh = np.stack([Y[:, rows, PARAMS_PER_LINK * i + 6:PARAMS_PER_LINK * i + 9]
                   for i, _ in links], axis=2)  # (n, rows, k, 3)
    Ym = np.stack([Y[:, rows, PARAMS_PER_LINK * i + 9] for i, _ in links],
                  axis=2)  # (n, rows, k)
    t_meas = tau[:, rows]  # (n, rows)
    span = t_meas.max(axis=0) - t_meas.min(axis=0)
    w = 1.0 / np.maximum(span, 1e-9) ** 2  # per-row weights

    k = len(links)
    n_off = len(rows) if fit_offsets else 0

    def unpack(xv):
        m = xv[:k]
        c = xv[k:4 * k].reshape(k, 3)
        off = xv[4 * k:] if n_off else np.zeros(len(rows))
        return m, c, off

    def value_grad(xv):
        m, c, off = unpack(xv)
        h = m[:, None] * c
        pred = (np.einsum("nrkj,kj->nr", Yh, h) + Ym @ m) + off
        r = pred - t_meas
        f = 0.5 * float(np.sum(w * r ** 2))
        rw = r * w
        gm = np.einsum("nr,nrk->k", rw, Ym) + np.einsum("nr,nrkj,kj->k", rw, Yh, c)
        gc = np.einsum("nr,nrkj->kj", rw, Yh) * m[:, None]
        g = [gm, gc.ravel()]
        if n_off:
            g.append(rw.sum(axis=0))
        return f, np.concatenate(g)

    x0, lb, ub = [], [], []
    for _, name in links:
        blo, bhi = constraints.mass_bounds.get(name, (0.01, 50.0))
        x0.append(0.5 * (blo + bhi))
        lb.append(blo)
        ub.append(bhi)
    for _, name in links:
        box = constraints.com_boxes.get(name, np.array([[-0.5, 0.5]] * 3))
        x0 += [0.0, 0.0, 0.0]
        lb += list(box[:, 0])
        ub += list(box[:, 1])
    if n_off:
        x0 += [0.0] * n_off
        lb += [-np.inf] * n_off
        ub += [np.inf] * n_off

    res = scipy.optimize.minimize(
        value_grad, np.array(x0), jac=True, method="L-BFGS-B",
        bounds=list(zip(lb, ub)),
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10})
    if not res.success and res.status != 1:  # 1 = hit maxiter, still usable
        raise ConvergenceError(f"statics fit failed: {res.message}")
    m_hat, c_hat, off = unpack(res.x)

    theta = np.zeros(model.n_params)
    masses, coms = {}, {}
    for j, (i, name) in enumerate(links):
        offp = PARAMS_PER_LINK * i
        theta[offp + 6:offp + 9] = m_hat[j] * c_hat[j]
        theta[offp + 9] = m_hat[j]
        masses[name] = float(m_hat[j])
        coms[name] = c_hat[j].copy()

    h = m_hat[:, None] * c_hat
    pred = (np.einsum("nrkj,kj->nr", Yh, h) + Ym @ m_hat) + off
    den = np.sqrt((t_meas ** 2).mean(axis=0))
    num = np.sqrt(((pred - t_meas) ** 2).mean(axis=0))
    return StaticsResult(
        params=DynamicParameters(theta), masses=masses, coms=coms,
        offsets=np.asarray(off, dtype=float), rows=rows,
        nrmse=100.0 * num / np.where(den > 0, den, np.nan),
        grad_norm=float(np.linalg.norm(value_grad(res.x)[1])),
        n_iter=int(res.nit),
    )
