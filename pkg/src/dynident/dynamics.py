"""Inverse/forward dynamics, regressor, and parameter handling.

The model is linear in a per-link parameter vector

    theta_k = [Ixx Ixy Ixz Iyy Iyz Izz hx hy hz m | Fv Fc Fb Im Ks]

with the first ten entries the barycentric link parameters (rotational
inertia about the link frame origin, first moment of mass h = m*c, mass) and
the last five the additional terms (viscous, Coulomb, bias friction, motor
inertia, spring stiffness).  The full vector stacks all links in declaration
order, structural zeros included, so p = 15 * n_links.

Motor torque assembly: link-inertia terms come from a recursive Newton-Euler
sweep over the spanning tree in tree coordinates, projected to motor space
through the constant coordinate Jacobian; friction/spring act on per-link
element coordinates (constant linear functions of q^m) and are pulled back the
same way; motor inertias act on their motor coordinate directly.

All public entry points accept single states (7,) or batches (N, 7).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateModelError,
    DimensionError,
    ModelConfigError,
    StructuralZeroError,
)
from .kinematics import RobotModel

L_COMPONENTS = ("Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz", "hx", "hy", "hz", "m")
A_COMPONENTS = ("Fv", "Fc", "Fb", "Im", "Ks")
PARAMS_PER_LINK = len(L_COMPONENTS) + len(A_COMPONENTS)

DEFAULT_FRICTION_EPS = 100.0  # tanh velocity smoothing (s/rad)


def param_names(model: RobotModel) -> list[str]:
    names = []
    for lk in model.links:
        names += [f"L{lk.name}_{c}" for c in L_COMPONENTS]
        names += [f"A{lk.name}_{c}" for c in A_COMPONENTS]
    return names


def active_param_mask(model: RobotModel) -> np.ndarray:
    """Boolean mask of parameters that are structurally present."""
    mask = np.zeros(model.n_params, dtype=bool)
    for i, lk in enumerate(model.links):
        off = PARAMS_PER_LINK * i
        if lk.has_inertia:
            mask[off:off + 10] = True
        if lk.has_friction:
            mask[off + 10:off + 13] = True
        if lk.has_motor_inertia:
            mask[off + 13] = True
        if lk.has_spring:
            mask[off + 14] = True
    return mask


@dataclass
class DynamicParameters:
    """Flat parameter vector theta of length 15 * n_links."""

    theta: np.ndarray

    def copy(self) -> "DynamicParameters":
        return DynamicParameters(self.theta.copy())

    @classmethod
    def zeros(cls, model: RobotModel) -> "DynamicParameters":
        return cls(np.zeros(model.n_params))

    def link_inertial(self, model: RobotModel, name: str) -> np.ndarray:
        i = model.link_names.index(name)
        return self.theta[PARAMS_PER_LINK * i:PARAMS_PER_LINK * i + 10]

    def link_additional(self, model: RobotModel, name: str) -> np.ndarray:
        i = model.link_names.index(name)
        return self.theta[PARAMS_PER_LINK * i + 10:PARAMS_PER_LINK * (i + 1)]

    def validate(self, model: RobotModel) -> None:
        """Raise if any structurally-zero slot carries a nonzero value."""
        if self.theta.shape != (model.n_params,):
            raise DimensionError(
                f"parameter vector has shape {self.theta.shape}, "
                f"expected ({model.n_params},)"
            )
        mask = active_param_mask(model)
        bad = np.where(~mask & (self.theta != 0.0))[0]
        if bad.size:
            names = np.asarray(param_names(model))[bad]
            raise StructuralZeroError(
                "nonzero values in structurally-zero parameter slots: "
                + ", ".join(names.tolist())
            )

    def to_csv(self, path: str, model: RobotModel) -> None:
        names = param_names(model)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            writer.writerow([f"{v:.17g}" for v in self.theta])

    @classmethod
    def from_csv(cls, path: str, model: RobotModel) -> "DynamicParameters":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
                values = next(reader)
            except StopIteration as exc:
                raise ModelConfigError(f"{path}: expected header and value rows") from exc
        expected = param_names(model)
        if header != expected:
            raise ModelConfigError(
                f"{path}: parameter header does not match the model's "
                f"{model.n_params}-entry layout"
            )
        if len(values) != len(expected):
            raise ModelConfigError(f"{path}: expected {len(expected)} values")
        params = cls(np.array([float(v) for v in values]))
        params.validate(model)
        return params


@dataclass
class FrictionConfig:
    """Per-link tanh smoothing slopes for the Coulomb term."""

    epsilon: np.ndarray

    @classmethod
    def default(cls, model: RobotModel) -> "FrictionConfig":
        return cls(np.full(model.n_links, DEFAULT_FRICTION_EPS))


@dataclass
class SpringConfig:
    """Linear springs over the complete coordinates q^c.

    Each spring s has a topology row S[s] (length n_kin + 7), an offset
    s0[s], and an owning link whose Ks parameter scales it:
    deflection = S[s] @ q^c + s0[s].
    """

    S: np.ndarray
    s0: np.ndarray
    owner: list[int]  # link indices carrying the Ks parameter

    @classmethod
    def default(cls, model: RobotModel) -> "SpringConfig":
        rows, offs, owner = [], [], []
        n_c = model.n_kinematic + model.n_basis
        for i, lk in enumerate(model.links):
            if not lk.has_spring:
                continue
            row = np.zeros(n_c)
            if lk.parent is not None:
                row[model.slot[lk.name]] = 1.0
            else:
                # Virtual link: its element coordinate over [q; q^m].
                row[model.n_kinematic:] = model.elem_rows[i]
            rows.append(row)
            offs.append(0.0)
            owner.append(i)
        if rows:
            return cls(np.vstack(rows), np.array(offs), owner)
        return cls(np.zeros((0, n_c)), np.zeros(0), [])


@dataclass
class JointState:
    """Motor-space positions, velocities, accelerations; (7,) or (N, 7)."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray


# ---------------------------------------------------------------------------
# Compiled structure shared by all dynamics entry points


@dataclass
class _KinLink:
    link_idx: int
    parent: int  # index into kinematic list, -1 for base
    kind: int  # 0 fixed, 1 revolute, 2 prismatic
    slot: int
    a: float
    alpha: float
    d0: float
    th0: float
    rx: np.ndarray  # constant Rx(alpha)


@dataclass
class _Compiled:
    kin: list[_KinLink]
    J_qm: np.ndarray  # (n_kin, 7) tree coords per motor coords
    elem: np.ndarray  # (n_links, 7)
    fric_mask: np.ndarray  # (n_links,) bool
    inertial: list[int]  # kinematic-list indices of links with inertia
    motor_links: list[tuple[int, int]]  # (link index, motor index 0-based)
    springs: SpringConfig
    spring_sigma: np.ndarray  # (n_springs, 7) pull-back of S through A_c
    gravity: np.ndarray
    active: np.ndarray  # active column indices into the full vector


def _compile(model: RobotModel) -> _Compiled:
    cached = getattr(model, "_compiled", None)
    if cached is not None:
        return cached
    kin = []
    for k, i in enumerate(model.kin_idx):
        lk = model.links[i]
        kind = {"fixed": 0, "revolute": 1, "prismatic": 2}[lk.kind]
        ca, sa = math.cos(lk.alpha), math.sin(lk.alpha)
        rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
        kin.append(_KinLink(
            link_idx=i, parent=model.parent_idx[k], kind=kind,
            slot=model.slot[lk.name], a=lk.a, alpha=lk.alpha,
            d0=lk.d_const, th0=lk.theta_const, rx=rx,
        ))
    springs = SpringConfig.default(model)
    spring_sigma = springs.S @ model.maps.A_c if springs.S.size else np.zeros((0, model.n_basis))
    comp = _Compiled(
        kin=kin,
        J_qm=model.maps.A_b_to_q @ model.maps.A_m_to_b,
        elem=model.elem_rows,
        fric_mask=np.array([lk.has_friction for lk in model.links]),
        inertial=[k for k, cl in enumerate(kin) if model.links[cl.link_idx].has_inertia],
        motor_links=[(i, lk.motor - 1) for i, lk in enumerate(model.links)
                     if lk.has_motor_inertia],
        springs=springs,
        spring_sigma=spring_sigma,
        gravity=model.gravity,
        active=np.where(active_param_mask(model))[0],
    )
    model._compiled = comp
    return comp


# ---------------------------------------------------------------------------
# Small batched linear algebra helpers

_EZ = np.array([0.0, 0.0, 1.0])


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([
        np.stack([o, -z, y], axis=-1),
        np.stack([z, o, -x], axis=-1),
        np.stack([-y, x, o], axis=-1),
    ], axis=-2)


def _inertia_op(w: np.ndarray) -> np.ndarray:
    """L(w) with I @ w = L(w) @ [Ixx Ixy Ixz Iyy Iyz Izz]; shape (..., 3, 6)."""
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    o = np.zeros_like(x)
    return np.stack([
        np.stack([x, y, z, o, o, o], axis=-1),
        np.stack([o, x, o, y, z, o], axis=-1),
        np.stack([o, o, x, o, y, z], axis=-1),
    ], axis=-2)


def _rot_z(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    o = np.zeros_like(c)
    l = np.ones_like(c)
    return np.stack([
        np.stack([c, -s, o], axis=-1),
        np.stack([s, c, o], axis=-1),
        np.stack([o, o, l], axis=-1),
    ], axis=-2)


def _spatial_inertia(theta_l: np.ndarray) -> np.ndarray:
    """6x6 spatial inertia [[I, S(h)], [S(h)^T, m 1]] from a 10-vector."""
    ixx, ixy, ixz, iyy, iyz, izz, hx, hy, hz, m = theta_l
    I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    Sh = _skew(np.array([hx, hy, hz]))
    out = np.zeros((6, 6))
    out[:3, :3] = I
    out[:3, 3:] = Sh
    out[3:, :3] = Sh.T
    out[3:, 3:] = m * np.eye(3)
    return out


# ---------------------------------------------------------------------------
# Forward sweep over the spanning tree


def _tree_coords(comp: _Compiled, q_m, qd_m, qdd_m):
    Jt = comp.J_qm.T
    return q_m @ Jt, qd_m @ Jt, qdd_m @ Jt


def _forward_pass(comp: _Compiled, zeta, zeta_d, zeta_dd, gravity_on: bool,
                  want_jacobian: bool, want_xform: bool):
    """Propagate spatial velocity/acceleration down the tree in link coords.

    Returns per-kinematic-link dicts with rotation R (link->parent), offset p,
    angular/linear velocity (w, vl), spatial acceleration (aw, al), and
    optionally the 6xN_kin spatial Jacobian parts (jw, jl as (N, n_kin, 3)).
    """
    n = zeta.shape[0]
    n_kin = len(comp.kin)
    out = []
    a0 = -comp.gravity if gravity_on else np.zeros(3)
    for cl in comp.kin:
        coord = zeta[:, cl.slot]
        if cl.kind == 1:
            theta = cl.th0 + coord
            d = cl.d0
            dvec = np.broadcast_to(np.array([0.0, -d * math.sin(cl.alpha),
                                             d * math.cos(cl.alpha)]), (n, 3))
        elif cl.kind == 2:
            theta = np.full(n, cl.th0)
            d = cl.d0 + coord
            dvec = np.stack([np.zeros(n), -d * math.sin(cl.alpha),
                             d * math.cos(cl.alpha)], axis=-1)
        else:
            theta = np.full(n, cl.th0)
            dvec = np.broadcast_to(np.array([0.0, -cl.d0 * math.sin(cl.alpha),
                                             cl.d0 * math.cos(cl.alpha)]), (n, 3))
        R = cl.rx @ _rot_z(theta)  # link -> parent
        p = dvec.copy()
        p[:, 0] += cl.a
        Rt = np.swapaxes(R, -1, -2)

        if cl.parent < 0:
            w = np.zeros((n, 3))
            vl = np.zeros((n, 3))
            aw = np.zeros((n, 3))
            al = np.einsum("nij,j->ni", Rt, a0)
            if want_jacobian:
                jw = np.zeros((n, n_kin, 3))
                jl = np.zeros((n, n_kin, 3))
        else:
            par = out[cl.parent]
            w = np.einsum("nij,nj->ni", Rt, par["w"])
            vl = np.einsum("nij,nj->ni", Rt, par["vl"] + np.cross(par["w"], p))
            aw = np.einsum("nij,nj->ni", Rt, par["aw"])
            al = np.einsum("nij,nj->ni", Rt, par["al"] + np.cross(par["aw"], p))
            if want_jacobian:
                jw = np.einsum("nij,nkj->nki", Rt, par["jw"])
                jl = np.einsum("nij,nkj->nki", Rt,
                               par["jl"] + np.cross(par["jw"], p[:, None, :]))

        qd_i = zeta_d[:, cl.slot]
        qdd_i = zeta_dd[:, cl.slot]
        if cl.kind == 1:
            w = w.copy()
            w[:, 2] += qd_i
            aw = aw.copy()
            aw[:, 2] += qdd_i
            # velocity-product term crm(v) S qd
            aw += np.cross(w, _EZ * qd_i[:, None])
            al = al + np.cross(vl, _EZ * qd_i[:, None])
            if want_jacobian:
                jw = jw.copy()
                jw[:, cl.slot, 2] += 1.0
        elif cl.kind == 2:
            vl = vl.copy()
            vl[:, 2] += qd_i
            al = al.copy()
            al[:, 2] += qdd_i
            al += np.cross(w, _EZ * qd_i[:, None])
            if want_jacobian:
                jl = jl.copy()
                jl[:, cl.slot, 2] += 1.0

        rec = {"R": R, "p": p, "w": w, "vl": vl, "aw": aw, "al": al}
        if want_jacobian:
            rec["jw"] = jw
            rec["jl"] = jl
        out.append(rec)
    return out


def _body_regressor(rec) -> tuple[np.ndarray, np.ndarray]:
    """Per-link 6x10 regressor (torque rows, force rows) from the sweep."""
    w, vl, aw, al = rec["w"], rec["vl"], rec["aw"], rec["al"]
    Sw, Svl, Saw, Sal = _skew(w), _skew(vl), _skew(aw), _skew(al)
    n_rows = np.concatenate([
        _inertia_op(aw) + Sw @ _inertia_op(w),
        -Sal - Sw @ Svl + Svl @ Sw,
        np.zeros(w.shape[:-1] + (3, 1)),
    ], axis=-1)
    f_rows = np.concatenate([
        np.zeros(w.shape[:-1] + (3, 6)),
        Saw + Sw @ Sw,
        (al + np.cross(w, vl))[..., None],
    ], axis=-1)
    return n_rows, f_rows


def _prepare(q_m, qd_m, qdd_m, nb: int):
    q = np.atleast_2d(np.asarray(q_m, dtype=float))
    qd = np.atleast_2d(np.asarray(qd_m, dtype=float))
    qdd = np.atleast_2d(np.asarray(qdd_m, dtype=float))
    if not (q.shape == qd.shape == qdd.shape) or q.shape[-1] != nb:
        raise DimensionError(
            f"state arrays must share shape (N, {nb}); got "
            f"{q.shape}, {qd.shape}, {qdd.shape}"
        )
    return q, qd, qdd


def _state_arrays(state: JointState, nb: int):
    return _prepare(state.q, state.qd, state.qdd, nb)


# ---------------------------------------------------------------------------
# Public operations


def inverse_dynamics(model: RobotModel, params: DynamicParameters, state: JointState,
                     *, include_gravity: bool = True, include_friction: bool = True,
                     include_spring: bool = True, include_motor_inertia: bool = True,
                     friction: FrictionConfig | None = None) -> np.ndarray:
    """Motor torques that realize the given motor-space state.

    Link-inertia torques come from a Newton-Euler sweep over the spanning
    tree projected through the constant coordinate Jacobian; friction,
    spring, and motor-inertia terms are added in motor space.  The term
    toggles exist for the gravity/statics variants used downstream.
    """
    comp = _compile(model)
    single = np.asarray(state.q).ndim == 1
    if single:
        return _inverse_dynamics_scalar(
            model, comp, params, state,
            include_gravity=include_gravity, include_friction=include_friction,
            include_spring=include_spring, include_motor_inertia=include_motor_inertia,
            friction=friction,
        )
    q, qd, qdd = _state_arrays(state, model.n_basis)
    n = q.shape[0]
    zeta, zeta_d, zeta_dd = _tree_coords(comp, q, qd, qdd)
    recs = _forward_pass(comp, zeta, zeta_d, zeta_dd, include_gravity,
                         want_jacobian=False, want_xform=False)

    theta = params.theta
    wrench = [None] * len(comp.kin)
    for k in comp.inertial:
        off = PARAMS_PER_LINK * comp.kin[k].link_idx
        th_l = theta[off:off + 10]
        n_rows, f_rows = _body_regressor(recs[k])
        wrench[k] = (n_rows @ th_l, f_rows @ th_l)

    tau_zeta = np.zeros((n, len(comp.kin)))
    for k in range(len(comp.kin) - 1, -1, -1):
        Fk = wrench[k]
        if Fk is None:
            continue
        nk, fk = Fk
        cl = comp.kin[k]
        if cl.kind == 1:
            tau_zeta[:, cl.slot] += nk[:, 2]
        elif cl.kind == 2:
            tau_zeta[:, cl.slot] += fk[:, 2]
        if cl.parent >= 0:
            R, p = recs[k]["R"], recs[k]["p"]
            f_p = np.einsum("nij,nj->ni", R, fk)
            n_p = np.einsum("nij,nj->ni", R, nk) + np.cross(p, f_p)
            if wrench[cl.parent] is None:
                wrench[cl.parent] = (n_p, f_p)
            else:
                wp = wrench[cl.parent]
                wrench[cl.parent] = (wp[0] + n_p, wp[1] + f_p)

    tau = tau_zeta @ comp.J_qm

    if include_motor_inertia:
        for i, mj in comp.motor_links:
            tau[:, mj] += theta[PARAMS_PER_LINK * i + 13] * qdd[:, mj]
    if include_friction:
        tau += friction_torque(model, params, qd, config=friction)
    if include_spring:
        tau += spring_torque(model, params, q)
    return tau[0] if single else tau


def _bind_scalar(model: RobotModel, comp: _Compiled, params: DynamicParameters):
    """Cache per-link inertia tuples and term arrays for the scalar sweep."""
    cache = getattr(params, "_scalar_cache", None)
    if cache is not None and cache[0] is model and np.array_equal(cache[1], params.theta):
        return cache[2]
    theta = params.theta
    inertial = {}
    for k in comp.inertial:
        off = PARAMS_PER_LINK * comp.kin[k].link_idx
        t = theta[off:off + 10]
        I = ((t[0], t[1], t[2]), (t[1], t[3], t[4]), (t[2], t[4], t[5]))
        inertial[k] = (I, (t[6], t[7], t[8]), t[9])
    th = theta.reshape(model.n_links, PARAMS_PER_LINK)
    bound = {
        "inertial": inertial,
        "isp": {k: _spatial_inertia(theta[PARAMS_PER_LINK * comp.kin[k].link_idx:
                                          PARAMS_PER_LINK * comp.kin[k].link_idx + 10])
                for k in comp.inertial},
        "fv": th[:, 10] * comp.fric_mask,
        "fc": th[:, 11] * comp.fric_mask,
        "fb": th[:, 12] * comp.fric_mask,
        "im": [(mj, theta[PARAMS_PER_LINK * i + 13]) for i, mj in comp.motor_links],
        "ks": np.array([theta[PARAMS_PER_LINK * o + 14] for o in comp.springs.owner]),
    }
    params._scalar_cache = (model, theta.copy(), bound)
    return bound


def _t_matvec(R, v):
    return (R[0][0] * v[0] + R[0][1] * v[1] + R[0][2] * v[2],
            R[1][0] * v[0] + R[1][1] * v[1] + R[1][2] * v[2],
            R[2][0] * v[0] + R[2][1] * v[1] + R[2][2] * v[2])


def _t_matTvec(R, v):
    return (R[0][0] * v[0] + R[1][0] * v[1] + R[2][0] * v[2],
            R[0][1] * v[0] + R[1][1] * v[1] + R[2][1] * v[2],
            R[0][2] * v[0] + R[1][2] * v[1] + R[2][2] * v[2])


def _t_cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _t_add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _inverse_dynamics_scalar(model, comp, params, state, *, include_gravity,
                             include_friction, include_spring,
                             include_motor_inertia, friction):
    """Single-state sweep in plain float tuples; hot path for control loops."""
    q = np.asarray(state.q, dtype=float)
    qd = np.asarray(state.qd, dtype=float)
    qdd = np.asarray(state.qdd, dtype=float)
    nb = model.n_basis
    if not (q.shape == qd.shape == qdd.shape == (nb,)):
        raise DimensionError(
            f"state arrays must share shape ({nb},); got "
            f"{q.shape}, {qd.shape}, {qdd.shape}"
        )
    bound = _bind_scalar(model, comp, params)
    zeta = (comp.J_qm @ q).tolist()
    zeta_d = (comp.J_qm @ qd).tolist()
    zeta_dd = (comp.J_qm @ qdd).tolist()
    g = comp.gravity
    a0 = (-g[0], -g[1], -g[2]) if include_gravity else (0.0, 0.0, 0.0)

    n_kin = len(comp.kin)
    R_l = [None] * n_kin
    p_l = [None] * n_kin
    state_l = [None] * n_kin  # (w, vl, aw, al)
    wr_n = [None] * n_kin
    wr_f = [None] * n_kin

    for k, cl in enumerate(comp.kin):
        coord = zeta[cl.slot]
        d = cl.d0 + (coord if cl.kind == 2 else 0.0)
        th = cl.th0 + (coord if cl.kind == 1 else 0.0)
        ct, st = math.cos(th), math.sin(th)
        ca, sa = cl.rx[1, 1], cl.rx[2, 1]
        R = ((ct, -st, 0.0), (ca * st, ca * ct, -sa), (sa * st, sa * ct, ca))
        p = (cl.a, -d * sa, d * ca)
        R_l[k], p_l[k] = R, p
        if cl.parent < 0:
            w = (0.0, 0.0, 0.0)
            vl = (0.0, 0.0, 0.0)
            aw = (0.0, 0.0, 0.0)
            al = _t_matTvec(R, a0)
        else:
            wp, vlp, awp, alp = state_l[cl.parent]
            w = _t_matTvec(R, wp)
            vl = _t_matTvec(R, _t_add(vlp, _t_cross(wp, p)))
            aw = _t_matTvec(R, awp)
            al = _t_matTvec(R, _t_add(alp, _t_cross(awp, p)))
        dq, ddq = zeta_d[cl.slot], zeta_dd[cl.slot]
        if cl.kind == 1:
            w = (w[0], w[1], w[2] + dq)
            aw = (aw[0] + w[1] * dq, aw[1] - w[0] * dq, aw[2] + ddq)
            al = (al[0] + vl[1] * dq, al[1] - vl[0] * dq, al[2])
        elif cl.kind == 2:
            vl = (vl[0], vl[1], vl[2] + dq)
            al = (al[0] + w[1] * dq, al[1] - w[0] * dq, al[2] + ddq)
        state_l[k] = (w, vl, aw, al)

        lin = bound["inertial"].get(k)
        if lin is not None:
            I, h, m = lin
            Iw = _t_matvec(I, w)
            hw = _t_cross(h, w)
            nw = _t_add(_t_matvec(I, aw), _t_cross(w, Iw))
            nw = _t_add(nw, _t_cross(h, al))
            nw = _t_add(nw, _t_cross(w, _t_cross(h, vl)))
            nw = _t_add(nw, _t_cross(hw, vl))  # -vl x (h x w) = (h x w) x vl
            wxvl = _t_cross(w, vl)
            haw = _t_cross(h, aw)
            whw = _t_cross(w, hw)
            f = (m * (al[0] + wxvl[0]) - haw[0] - whw[0],
                 m * (al[1] + wxvl[1]) - haw[1] - whw[1],
                 m * (al[2] + wxvl[2]) - haw[2] - whw[2])
            wr_n[k], wr_f[k] = nw, f

    tau_zeta = [0.0] * n_kin
    for k in range(n_kin - 1, -1, -1):
        if wr_n[k] is None:
            continue
        nk, fk = wr_n[k], wr_f[k]
        cl = comp.kin[k]
        if cl.kind == 1:
            tau_zeta[cl.slot] += nk[2]
        elif cl.kind == 2:
            tau_zeta[cl.slot] += fk[2]
        if cl.parent >= 0:
            R, p = R_l[k], p_l[k]
            f_p = _t_matvec(R, fk)
            n_p = _t_add(_t_matvec(R, nk), _t_cross(p, f_p))
            if wr_n[cl.parent] is None:
                wr_n[cl.parent], wr_f[cl.parent] = n_p, f_p
            else:
                wr_n[cl.parent] = _t_add(wr_n[cl.parent], n_p)
                wr_f[cl.parent] = _t_add(wr_f[cl.parent], f_p)

    tau = np.asarray(tau_zeta) @ comp.J_qm

    if include_motor_inertia:
        for mj, im in bound["im"]:
            tau[mj] += im * qdd[mj]
    if include_friction:
        eps = (friction.epsilon if friction is not None
               else np.full(model.n_links, DEFAULT_FRICTION_EPS))
        xi_d = comp.elem @ qd
        per = bound["fv"] * xi_d + bound["fc"] * np.tanh(eps * xi_d) + bound["fb"]
        tau += per @ comp.elem
    if include_spring:
        sigma = comp.spring_sigma
        if sigma.size:
            defl = sigma @ q + comp.springs.s0
            tau += (bound["ks"] * defl) @ sigma
    return tau


def friction_curve(v, fv, fc, fb, eps):
    """Smooth friction law: fv*v + fc*tanh(eps*v) + fb."""
    return fv * v + fc * np.tanh(eps * v) + fb


def friction_curve_derivative(v, fv, fc, fb, eps):
    """d/dv of friction_curve; continuous everywhere (C1 law)."""
    sech2 = 1.0 / np.cosh(eps * v) ** 2
    return fv + fc * eps * sech2


def friction_torque(model: RobotModel, params: DynamicParameters, qd_m,
                    config: FrictionConfig | None = None) -> np.ndarray:
    """Motor-space friction torque from all element coordinates."""
    comp = _compile(model)
    qd = np.atleast_2d(np.asarray(qd_m, dtype=float))
    single = np.asarray(qd_m).ndim == 1
    eps = (config.epsilon if config is not None
           else np.full(model.n_links, DEFAULT_FRICTION_EPS))
    xi_d = qd @ comp.elem.T  # (N, n_links)
    th = params.theta.reshape(model.n_links, PARAMS_PER_LINK)
    fv, fc, fb = th[:, 10], th[:, 11], th[:, 12]
    per_elem = friction_curve(xi_d, fv, fc, fb, eps) * comp.fric_mask
    tau = per_elem @ comp.elem
    return tau[0] if single else tau


def spring_torque(model: RobotModel, params: DynamicParameters, q_m,
                  config: SpringConfig | None = None) -> np.ndarray:
    """Motor-space spring torque K_s * (S q^c + s0) pulled back to motors."""
    comp = _compile(model)
    q = np.atleast_2d(np.asarray(q_m, dtype=float))
    single = np.asarray(q_m).ndim == 1
    springs = comp.springs if config is None else config
    sigma = (comp.spring_sigma if config is None
             else springs.S @ model.maps.A_c)
    tau = np.zeros_like(q)
    th = params.theta.reshape(model.n_links, PARAMS_PER_LINK)
    for s in range(sigma.shape[0]):
        ks = th[springs.owner[s], 14]
        defl = q @ sigma[s] + springs.s0[s]
        tau += ks * defl[:, None] * sigma[s]
    return tau[0] if single else tau


def regressor(model: RobotModel, state: JointState,
              friction: FrictionConfig | None = None) -> np.ndarray:
    """Torque regressor Y with inverse_dynamics(theta) = Y @ theta.

    Shape (7, p) for a single state, (N, 7, p) for a batch.  Structurally
    absent parameters get identically-zero columns.
    """
    comp = _compile(model)
    q, qd, qdd = _state_arrays(state, model.n_basis)
    single = np.asarray(state.q).ndim == 1
    n = q.shape[0]
    Y = np.zeros((n, model.n_basis, model.n_params))
    zeta, zeta_d, zeta_dd = _tree_coords(comp, q, qd, qdd)
    recs = _forward_pass(comp, zeta, zeta_d, zeta_dd, True,
                         want_jacobian=True, want_xform=False)
    for k in comp.inertial:
        off = PARAMS_PER_LINK * comp.kin[k].link_idx
        n_rows, f_rows = _body_regressor(recs[k])
        rec = recs[k]
        # (N, n_kin, 10) = Phi^T A, then project tree coords to motors.
        y_zeta = np.einsum("nka,nap->nkp", rec["jw"], n_rows)
        y_zeta += np.einsum("nka,nap->nkp", rec["jl"], f_rows)
        Y[:, :, off:off + 10] = np.einsum("kj,nkp->njp", comp.J_qm, y_zeta)

    eps = (friction.epsilon if friction is not None
           else np.full(model.n_links, DEFAULT_FRICTION_EPS))
    xi_d = qd @ comp.elem.T
    for i, lk in enumerate(model.links):
        off = PARAMS_PER_LINK * i
        if lk.has_friction:
            Y[:, :, off + 10] = xi_d[:, i:i + 1] * comp.elem[i]
            Y[:, :, off + 11] = np.tanh(eps[i] * xi_d[:, i:i + 1]) * comp.elem[i]
            Y[:, :, off + 12] = np.broadcast_to(comp.elem[i], (n, model.n_basis))
        if lk.has_motor_inertia:
            Y[:, lk.motor - 1, off + 13] = qdd[:, lk.motor - 1]
    springs = comp.springs
    for s in range(comp.spring_sigma.shape[0]):
        off = PARAMS_PER_LINK * springs.owner[s]
        defl = q @ comp.spring_sigma[s] + springs.s0[s]
        Y[:, :, off + 14] = defl[:, None] * comp.spring_sigma[s]
    return Y[0] if single else Y


def _mass_matrix_scalar(model: RobotModel, params: DynamicParameters,
                        q_m: np.ndarray) -> np.ndarray:
    comp = _compile(model)
    bound = _bind_scalar(model, comp, params)
    zeta = comp.J_qm @ q_m
    n_kin = len(comp.kin)

    X = [None] * n_kin
    for k, cl in enumerate(comp.kin):
        qk = zeta[cl.slot]
        th = cl.th0 + (qk if cl.kind == 1 else 0.0)
        d = cl.d0 + (qk if cl.kind == 2 else 0.0)
        ct, st = math.cos(th), math.sin(th)
        sa, ca = cl.rx[2, 1], cl.rx[2, 2]
        R = cl.rx @ np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
        px, py, pz = cl.a, -d * sa, d * ca
        Rt = R.T
        Xk = np.zeros((6, 6))
        Xk[:3, :3] = Rt
        Xk[3:, 3:] = Rt
        # -Rt @ skew(p)
        Xk[3:, :3] = -Rt @ np.array([[0.0, -pz, py], [pz, 0.0, -px], [-py, px, 0.0]])
        X[k] = Xk

    Ic = [None] * n_kin
    for k in comp.inertial:
        Ic[k] = bound["isp"][k].copy()
    for k in range(n_kin - 1, -1, -1):
        if Ic[k] is None:
            continue
        par = comp.kin[k].parent
        if par < 0:
            continue
        contrib = X[k].T @ Ic[k] @ X[k]
        Ic[par] = contrib if Ic[par] is None else Ic[par] + contrib

    H = np.zeros((n_kin, n_kin))
    for k, cl in enumerate(comp.kin):
        if cl.kind == 0 or Ic[k] is None:
            continue
        axis = 2 if cl.kind == 1 else 5
        F = Ic[k][:, axis].copy()
        H[cl.slot, cl.slot] = F[axis]
        j = k
        while comp.kin[j].parent >= 0:
            F = X[j].T @ F
            j = comp.kin[j].parent
            cj = comp.kin[j]
            if cj.kind != 0:
                aj = 2 if cj.kind == 1 else 5
                H[cl.slot, cj.slot] = F[aj]
                H[cj.slot, cl.slot] = F[aj]

    M = comp.J_qm.T @ H @ comp.J_qm
    for mj, im in bound["im"]:
        M[mj, mj] += im
    return M


def mass_matrix(model: RobotModel, params: DynamicParameters, q_m) -> np.ndarray:
    """Motor-space mass matrix via composite rigid bodies plus motor inertia."""
    comp = _compile(model)
    if np.asarray(q_m).ndim == 1:
        return _mass_matrix_scalar(model, params, np.asarray(q_m, dtype=float))
    q = np.atleast_2d(np.asarray(q_m, dtype=float))
    single = np.asarray(q_m).ndim == 1
    n = q.shape[0]
    zeros = np.zeros_like(q)
    zeta, _, _ = _tree_coords(comp, q, zeros, zeros)
    recs = _forward_pass(comp, zeta, np.zeros_like(zeta), np.zeros_like(zeta),
                         False, want_jacobian=False, want_xform=True)

    n_kin = len(comp.kin)
    theta = params.theta
    Ic = [None] * n_kin
    for k in comp.inertial:
        off = PARAMS_PER_LINK * comp.kin[k].link_idx
        Ic[k] = np.broadcast_to(_spatial_inertia(theta[off:off + 10]),
                                (n, 6, 6)).copy()

    # Spatial motion transform parent->link per link, as (N, 6, 6).
    X = [None] * n_kin
    for k, cl in enumerate(comp.kin):
        R, p = recs[k]["R"], recs[k]["p"]
        Rt = np.swapaxes(R, -1, -2)
        Xk = np.zeros((n, 6, 6))
        Xk[:, :3, :3] = Rt
        Xk[:, 3:, 3:] = Rt
        Xk[:, 3:, :3] = -Rt @ _skew(p)
        X[k] = Xk

    # Composite inertias toward the root.
    for k in range(n_kin - 1, -1, -1):
        if Ic[k] is None:
            continue
        par = comp.kin[k].parent
        if par < 0:
            continue
        contrib = np.swapaxes(X[k], -1, -2) @ Ic[k] @ X[k]
        Ic[par] = contrib if Ic[par] is None else Ic[par] + contrib

    H = np.zeros((n, n_kin, n_kin))
    for k, cl in enumerate(comp.kin):
        if cl.kind == 0 or Ic[k] is None:
            continue
        axis = 2 if cl.kind == 1 else 5  # z row of angular / linear block
        F = Ic[k][:, :, axis].copy()
        H[:, cl.slot, cl.slot] = F[:, axis]
        j = k
        while comp.kin[j].parent >= 0:
            F = np.einsum("nij,ni->nj", X[j], F)
            j = comp.kin[j].parent
            cj = comp.kin[j]
            if cj.kind != 0:
                aj = 2 if cj.kind == 1 else 5
                H[:, cl.slot, cj.slot] = F[:, aj]
                H[:, cj.slot, cl.slot] = F[:, aj]

    M = np.einsum("ki,nkl,lj->nij", comp.J_qm, H, comp.J_qm)
    for i, mj in comp.motor_links:
        M[:, mj, mj] += theta[PARAMS_PER_LINK * i + 13]
    return M[0] if single else M


def forward_dynamics(model: RobotModel, params: DynamicParameters, q_m, qd_m,
                     tau_m, friction: FrictionConfig | None = None) -> np.ndarray:
    """Motor accelerations from applied motor torques."""
    q = np.asarray(q_m, dtype=float)
    qd = np.asarray(qd_m, dtype=float)
    tau = np.asarray(tau_m, dtype=float)
    M = mass_matrix(model, params, q)
    bias = inverse_dynamics(model, params,
                            JointState(q, qd, np.zeros_like(q)),
                            friction=friction)
    Mb = M if M.ndim == 3 else M[None]
    eigs = np.linalg.eigvalsh(Mb)
    if eigs.min() < 1e-9:
        raise DegenerateModelError(
            f"mass matrix near-singular (min eigenvalue {eigs.min():.3e}) at q={q!r}"
        )
    rhs = tau - bias
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def kinetic_energy(model: RobotModel, params: DynamicParameters, q_m, qd_m):
    """0.5 qd^T M(q) qd, including motor inertias."""
    qd = np.asarray(qd_m, dtype=float)
    M = mass_matrix(model, params, q_m)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, M, qd)


def potential_energy(model: RobotModel, params: DynamicParameters, q_m):
    """Gravitational potential of all inertial links (zero at base origin)."""
    from .kinematics import frame_placements, tree_coordinates

    q = np.asarray(q_m, dtype=float)
    if q.ndim == 1:
        return _potential_single(model, params, q)
    return np.array([_potential_single(model, params, qi) for qi in q])


def _potential_single(model, params, q_m):
    from .kinematics import frame_placements, tree_coordinates

    comp = _compile(model)
    frames = frame_placements(model, tree_coordinates(model, q_m))
    g = model.gravity
    V = 0.0
    for k in comp.inertial:
        off = PARAMS_PER_LINK * comp.kin[k].link_idx
        th = params.theta[off:off + 10]
        h, m = th[6:9], th[9]
        T = frames[k]
        # m * c in world coordinates; V = -m g . c_world
        mc_world = T[:3, :3] @ h + m * T[:3, 3]
        V -= g @ mc_world
    return V


def sample_states(model: RobotModel, n: int, seed: int = 0,
                  limits=None, vel_scale: float = 1.0,
                  acc_scale: float = 1.0) -> JointState:
    """Deterministic random motor-space states for rank and audit work.

    Positions are drawn inside `limits` when given, otherwise inside a
    conservative default box (prismatic motors get a short positive stroke).
    """
    rng = np.random.default_rng(seed)
    if limits is not None:
        lo, hi = limits.lower, limits.upper
    else:
        lo = np.full(model.n_basis, -1.0)
        hi = np.full(model.n_basis, 1.0)
        for j in range(model.n_basis):
            lk_name = str(j + 1)
            try:
                lk = model.link(lk_name)
            except KeyError:
                continue
            if lk.kind == "prismatic":
                lo[j], hi[j] = 0.02, 0.24
    nb = model.n_basis
    vel = limits.velocity if limits is not None else np.ones(nb)
    q = rng.uniform(lo, hi, size=(n, nb))
    qd = rng.uniform(-vel_scale, vel_scale, size=(n, nb)) * vel
    qdd = rng.uniform(-acc_scale, acc_scale, size=(n, nb))
    return JointState(q, qd, qdd)
