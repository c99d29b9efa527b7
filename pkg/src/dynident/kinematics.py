"""Robot model loading, coordinate families, and spanning-tree kinematics.

The mechanism is described as a spanning tree of links in modified DH
convention.  Closed chains (parallelogram / remote-center mechanisms) are cut
open and the resulting auxiliary joints are declared as constant linear
functions of the seven basis joints, so every coordinate family used by the
dynamics is a constant linear image of the motor positions:

    q^b (7)  basis joints
    q^a (6)  auxiliary joints of the cut-open mechanism
    q  (13)  = [q^b; q^a], one slot per kinematic link
    q^d (7)  actuator-interface joints (gripper midline/opening convention)
    q^m (7)  motor positions
    q^c (20) = [q; q^m], the complete coordinate vector

Angles are radians, lengths meters.  Torque conventions live in dynamics.py.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DimensionError, ModelConfigError

N_BASIS = 7

_JOINT_SYMS = tuple(f"q{i}" for i in range(1, 8)) + tuple(f"qm{i}" for i in range(1, 8))

# Terms are split on +/- signs that do not belong to a float exponent.
_TERM_SPLIT = re.compile(r"(?<![eE*/+\-])([+-])")
_SYM_TERM = re.compile(
    r"^(?:(?P<coef>[0-9][0-9.eE+\-]*)\*)?(?P<sym>[A-Za-z_][A-Za-z0-9_']*)"
    r"(?:/(?P<div>[0-9][0-9.eE+\-]*))?$"
)


def _parse_affine(expr: str, lengths: dict[str, float], where: str):
    """Parse an affine expression into (constant, {joint: coefficient}).

    Supported terms: numeric literals, ``pi`` (optionally scaled or divided),
    length names declared in [lengths], and joint symbols q1..q7 / qm1..qm7
    with an optional numeric coefficient (``0.5*q3``, ``q3/2``).
    """
    text = expr.replace(" ", "")
    if not text or text == "-":
        return 0.0, {}
    const = 0.0
    joints: dict[str, float] = {}
    pieces = _TERM_SPLIT.split(text)
    # re.split keeps the sign separators; rebuild signed terms.
    terms = []
    sign = 1.0
    for piece in pieces:
        if piece == "":
            continue
        if piece == "+":
            sign = 1.0
            continue
        if piece == "-":
            sign = -1.0
            continue
        terms.append((sign, piece))
        sign = 1.0
    for sgn, term in terms:
        try:
            const += sgn * float(term)
            continue
        except ValueError:
            pass
        m = _SYM_TERM.match(term)
        if m is None:
            raise ModelConfigError(f"{where}: cannot parse term '{term}' in '{expr}'")
        coef = sgn * (float(m.group("coef")) if m.group("coef") else 1.0)
        if m.group("div"):
            coef /= float(m.group("div"))
        sym = m.group("sym")
        if sym == "pi":
            const += coef * math.pi
        elif sym in lengths:
            const += coef * lengths[sym]
        elif sym in _JOINT_SYMS:
            joints[sym] = joints.get(sym, 0.0) + coef
        else:
            raise ModelConfigError(f"{where}: unknown symbol '{sym}' in '{expr}'")
    return const, joints


@dataclass
class DhLink:
    """One row of the spanning-tree table (modified DH, parent-relative).

    Kinematic links have a parent and exactly one of theta/d may depend on a
    single basis joint.  Virtual rows (parent None) carry no geometry; their
    coordinate may be any constant linear combination of basis and motor
    joints and exists only to host friction / motor-inertia / spring terms.
    """

    name: str
    parent: str | None
    a: float
    alpha: float
    d_const: float
    theta_const: float
    d_joints: dict[str, float]
    theta_joints: dict[str, float]
    has_inertia: bool
    has_friction: bool
    has_motor_inertia: bool
    has_spring: bool
    motor: int | None  # 1-based motor index for the motor-inertia term

    @property
    def kind(self) -> str:
        if self.parent is None:
            return "virtual"
        if self.theta_joints:
            return "revolute"
        if self.d_joints:
            return "prismatic"
        return "fixed"

    @property
    def joint_coef(self):
        """(joint symbol, coefficient) for kinematic links, or None if fixed."""
        j = self.theta_joints or self.d_joints
        if not j:
            return None
        (sym, coef), = j.items()
        return sym, coef


@dataclass
class CoordinateMaps:
    """Constant linear maps between the coordinate families.

    A_b_to_q : (13, 7) basis -> full tree coordinates
    A_m_to_d : (7, 7)  motor -> actuator-interface joints (identity on 1..4)
    A_d_to_b : (7, 7)  actuator-interface -> basis (gripper map inverse)
    A_c      : (20, 7) motor -> complete coordinates [q; q^m]
    """

    A_b_to_q: np.ndarray
    A_m_to_d: np.ndarray
    A_d_to_b: np.ndarray
    A_c: np.ndarray
    A_b_to_d: np.ndarray
    A_m_to_b: np.ndarray  # = A_d_to_b @ A_m_to_d


@dataclass
class RobotModel:
    """Spanning-tree model with coupling maps and per-link term flags."""

    name: str
    links: list[DhLink]
    lengths: dict[str, float]
    gravity: np.ndarray
    coupling: np.ndarray | None  # (3, 3) motor->interface block for joints 5..7
    n_basis: int = N_BASIS
    maps: CoordinateMaps = field(repr=False, default=None)
    # Derived layout (filled by load):
    kin_idx: list[int] = field(default_factory=list, repr=False)
    parent_idx: list[int] = field(default_factory=list, repr=False)
    slot: dict[str, int] = field(default_factory=dict, repr=False)
    elem_rows: np.ndarray = field(default=None, repr=False)  # (n_links, n_basis) d(xi)/d(q^m)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_kinematic(self) -> int:
        return len(self.kin_idx)

    @property
    def n_aux(self) -> int:
        return self.n_kinematic - self.n_basis

    @property
    def n_params(self) -> int:
        return 15 * self.n_links

    @property
    def link_names(self) -> list[str]:
        return [lk.name for lk in self.links]

    def link(self, name: str) -> DhLink:
        for lk in self.links:
            if lk.name == name:
                return lk
        raise KeyError(name)


def _read_sections(path: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                sections.setdefault(current, [])
                continue
            if current is None:
                raise ModelConfigError(f"{path}:{lineno}: content before any [section]")
            sections[current].append((lineno, line))
    return sections


def _kv(entries, path, section) -> dict[str, str]:
    out = {}
    for lineno, line in entries:
        if "=" not in line:
            raise ModelConfigError(f"{path}:{lineno}: expected 'key = value' in [{section}]")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _parse_lengths(entries, path) -> dict[str, float]:
    lengths: dict[str, float] = {}
    for lineno, line in entries:
        if "=" not in line:
            raise ModelConfigError(f"{path}:{lineno}: expected 'name = value' in [lengths]")
        key, val = line.split("=", 1)
        key = key.strip()
        const, joints = _parse_affine(val.strip(), lengths, f"{path}:{lineno}")
        if joints:
            raise ModelConfigError(f"{path}:{lineno}: length '{key}' may not reference joints")
        lengths[key] = const
    return lengths


_FLAG_MAP = {"L": "has_inertia", "F": "has_friction", "M": "has_motor_inertia", "S": "has_spring"}


def _parse_links(entries, lengths, path) -> list[DhLink]:
    links = []
    for lineno, line in entries:
        cols = line.split()
        if len(cols) != 8:
            raise ModelConfigError(
                f"{path}:{lineno}: [links] rows need 8 columns "
                "(name parent a alpha d theta flags motor), got %d" % len(cols)
            )
        name, parent, a_s, alpha_s, d_s, theta_s, flags_s, motor_s = cols
        where = f"{path}:{lineno}"
        parent_name = None if parent == "-" else parent
        a_c, a_j = _parse_affine(a_s, lengths, where)
        al_c, al_j = _parse_affine(alpha_s, lengths, where)
        if a_j or al_j:
            raise ModelConfigError(f"{where}: a/alpha must be constant")
        d_c, d_j = _parse_affine(d_s, lengths, where)
        th_c, th_j = _parse_affine(theta_s, lengths, where)
        flags = {v: False for v in _FLAG_MAP.values()}
        if flags_s != "-":
            for f in flags_s.split(","):
                if f not in _FLAG_MAP:
                    raise ModelConfigError(f"{where}: unknown flag '{f}'")
                flags[_FLAG_MAP[f]] = True
        motor = None if motor_s == "-" else int(motor_s)
        if flags["has_motor_inertia"] and motor is None:
            raise ModelConfigError(f"{where}: link '{name}' has motor inertia but no motor index")
        link = DhLink(
            name=name, parent=parent_name, a=a_c, alpha=al_c,
            d_const=d_c, theta_const=th_c, d_joints=d_j, theta_joints=th_j,
            motor=motor, **flags,
        )
        if parent_name is not None:
            if d_j and th_j:
                raise ModelConfigError(f"{where}: link '{name}' drives both d and theta")
            for jd in (d_j, th_j):
                if len(jd) > 1 or any(s.startswith("qm") for s in jd):
                    raise ModelConfigError(
                        f"{where}: kinematic link '{name}' must depend on at most "
                        "one basis joint"
                    )
        links.append(link)
    return links


def _build_maps(model: RobotModel, dvrk_rows: dict[int, dict[str, float]]) -> None:
    links = model.links
    nb = model.n_basis
    # Identify basis links: the first kinematic link whose joint expression is
    # q_j with coefficient exactly 1 owns the basis slot for q_j.
    basis_owner: dict[int, int] = {}
    for i in model_kinematic_order(model):
        jc = links[i].joint_coef
        if jc is None:
            continue
        sym, coef = jc
        if sym.startswith("qm"):
            continue
        j = int(sym[1:])
        if coef == 1.0 and j not in basis_owner:
            basis_owner[j] = i
    if sorted(basis_owner) != list(range(1, nb + 1)):
        missing = [j for j in range(1, nb + 1) if j not in basis_owner]
        raise ModelConfigError(f"no basis link found for joints {missing}")

    aux = [i for i in model.kin_idx if i not in basis_owner.values()]
    n_kin = model.n_kinematic
    slot: dict[str, int] = {}
    for j, i in basis_owner.items():
        slot[links[i].name] = j - 1
    for rank, i in enumerate(aux):
        slot[links[i].name] = nb + rank
    model.slot = slot

    A_b_to_q = np.zeros((n_kin, nb))
    for i in model.kin_idx:
        jc = links[i].joint_coef
        if jc is None:
            continue
        sym, coef = jc
        A_b_to_q[slot[links[i].name], int(sym[1:]) - 1] = coef

    A_m_to_d = np.eye(nb)
    if model.coupling is not None:
        A_m_to_d[4:7, 4:7] = model.coupling

    A_b_to_d = np.eye(nb)
    for row_j, coeffs in dvrk_rows.items():
        A_b_to_d[row_j - 1, :] = 0.0
        for sym, coef in coeffs.items():
            A_b_to_d[row_j - 1, int(sym[1:]) - 1] = coef
    A_d_to_b = np.linalg.inv(A_b_to_d)

    A_m_to_b = A_d_to_b @ A_m_to_d
    A_c = np.vstack([A_b_to_q @ A_m_to_b, np.eye(nb)])
    model.maps = CoordinateMaps(
        A_b_to_q=A_b_to_q, A_m_to_d=A_m_to_d, A_d_to_b=A_d_to_b,
        A_c=A_c, A_b_to_d=A_b_to_d, A_m_to_b=A_m_to_b,
    )

    # Element coordinate of every link as a linear function of q^m.  This is
    # what friction, spring, and reporting act on.
    elem = np.zeros((model.n_links, nb))
    for i, lk in enumerate(links):
        if lk.parent is not None:
            jc = lk.joint_coef
            if jc is None:
                continue
            elem[i, :] = A_b_to_q[slot[lk.name], :] @ A_m_to_b
        else:
            joints = dict(lk.theta_joints)
            joints.update(lk.d_joints)
            for sym, coef in joints.items():
                if sym.startswith("qm"):
                    elem[i, int(sym[2:]) - 1] += coef
                else:
                    elem[i, :] += coef * A_m_to_b[int(sym[1:]) - 1, :]
    model.elem_rows = elem


def model_kinematic_order(model: RobotModel) -> list[int]:
    return model.kin_idx


def default_model_path() -> str:
    """Path of the bundled PSM-Si model config."""
    return str(resources.files("dynident.data") / "psm_si.cfg")


def default_limits_path() -> str:
    """Path of the bundled PSM-Si motor limit config."""
    return str(resources.files("dynident.data") / "psm_si_limits.cfg")


def load_model(path: str | None = None) -> RobotModel:
    """Load a robot model config and build all coordinate maps.

    The file has sections [lengths], [links], [coupling], [dvrk], [gravity];
    see the bundled psm_si.cfg for the schema.  With no path, loads the
    bundled PSM-Si model.
    """
    if path is None:
        path = default_model_path()
    sections = _read_sections(path)
    for required in ("lengths", "links", "gravity"):
        if required not in sections:
            raise ModelConfigError(f"{path}: missing [{required}] section")

    lengths = _parse_lengths(sections["lengths"], path)
    links = _parse_links(sections["links"], lengths, path)
    names = [lk.name for lk in links]
    if len(set(names)) != len(names):
        raise ModelConfigError(f"{path}: duplicate link names")

    coupling = None
    if "coupling" in sections:
        cp = _kv(sections["coupling"], path, "coupling")
        try:
            rows = [np.array([float(v) for v in cp[k].split()]) for k in ("row5", "row6", "row7")]
        except KeyError as exc:
            raise ModelConfigError(f"{path}: [coupling] needs row5/row6/row7") from exc
        coupling = np.vstack(rows)
        if coupling.shape != (3, 3):
            raise ModelConfigError(f"{path}: coupling rows must have 3 entries each")
        if abs(np.linalg.det(coupling)) < 1e-12:
            raise ModelConfigError(f"{path}: coupling matrix is singular")

    gv = _kv(sections["gravity"], path, "gravity")
    gravity = np.array([float(v) for v in gv["g"].split()])
    if gravity.shape != (3,):
        raise ModelConfigError(f"{path}: gravity needs 3 components")

    dvrk_rows: dict[int, dict[str, float]] = {}
    for lineno, line in sections.get("dvrk", []):
        key, val = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"d[1-7]", key):
            raise ModelConfigError(f"{path}:{lineno}: [dvrk] keys are d1..d7")
        const, joints = _parse_affine(val, lengths, f"{path}:{lineno}")
        if const != 0.0 or any(s.startswith("qm") for s in joints):
            raise ModelConfigError(
                f"{path}:{lineno}: [dvrk] rows are homogeneous in basis joints"
            )
        dvrk_rows[int(key[1])] = joints

    # Basis width: highest motor index referenced anywhere in the file.
    n_basis = 0
    for lk in links:
        for sym in list(lk.theta_joints) + list(lk.d_joints):
            idx = int(sym[2:]) if sym.startswith("qm") else int(sym[1:])
            n_basis = max(n_basis, idx)
    n_basis = max([n_basis] + list(dvrk_rows))
    if n_basis == 0:
        raise ModelConfigError(f"{path}: no joint symbols found")
    if coupling is not None and n_basis < 7:
        raise ModelConfigError(f"{path}: [coupling] needs joints 5..7 present")

    model = RobotModel(
        name=path, links=links, lengths=lengths, gravity=gravity, coupling=coupling,
        n_basis=n_basis,
    )

    # Kinematic tree: parents must be declared before children.
    index = {name: i for i, name in enumerate(names)}
    kin = []
    parent_idx = []
    for i, lk in enumerate(links):
        if lk.parent is None:
            continue
        kin.append(i)
        if lk.parent == "base":
            parent_idx.append(-1)
        else:
            if lk.parent not in index:
                raise ModelConfigError(f"{path}: link '{lk.name}' has unknown parent '{lk.parent}'")
            p = index[lk.parent]
            if p >= i:
                raise ModelConfigError(f"{path}: parent of '{lk.name}' declared after it")
            parent_idx.append(kin.index(p))
    model.kin_idx = kin
    model.parent_idx = parent_idx

    _build_maps(model, dvrk_rows)
    if model.n_aux < 0:
        raise ModelConfigError(f"{path}: fewer kinematic links than basis joints")
    return model


# ---------------------------------------------------------------------------
# Coordinate family maps


def _as_motor(q_m, nb: int) -> np.ndarray:
    q = np.asarray(q_m, dtype=float)
    if q.shape[-1] != nb:
        raise DimensionError(f"expected last axis {nb}, got {q.shape}")
    return q


def motor_to_basis(model: RobotModel, q_m) -> np.ndarray:
    return _as_motor(q_m, model.n_basis) @ model.maps.A_m_to_b.T


def basis_to_motor(model: RobotModel, q_b) -> np.ndarray:
    return _as_motor(q_b, model.n_basis) @ np.linalg.inv(model.maps.A_m_to_b).T


def motor_to_dvrk(model: RobotModel, q_m) -> np.ndarray:
    """Map motor positions through the coupling to interface joints."""
    return _as_motor(q_m, model.n_basis) @ model.maps.A_m_to_d.T


def dvrk_to_motor(model: RobotModel, q_d) -> np.ndarray:
    return _as_motor(q_d, model.n_basis) @ np.linalg.inv(model.maps.A_m_to_d).T


def gripper_basis_to_dvrk(model: RobotModel, q_b) -> np.ndarray:
    """Basis joints -> interface joints (jaw midline / opening convention)."""
    return _as_motor(q_b, model.n_basis) @ model.maps.A_b_to_d.T


def gripper_dvrk_to_basis(model: RobotModel, q_d) -> np.ndarray:
    return _as_motor(q_d, model.n_basis) @ model.maps.A_d_to_b.T


def tree_coordinates(model: RobotModel, q_m) -> np.ndarray:
    """Motor positions -> the full tree coordinate vector q (one per link)."""
    return motor_to_basis(model, q_m) @ model.maps.A_b_to_q.T


def expand_coordinates(model: RobotModel, q_m) -> np.ndarray:
    """Motor positions -> complete coordinates q^c = [q; q^m]."""
    return _as_motor(q_m, model.n_basis) @ model.maps.A_c.T


def coordinate_jacobian(model: RobotModel) -> np.ndarray:
    """Constant Jacobian d(q^c)/d(q^m), shape (n_kin + n_basis, n_basis)."""
    return model.maps.A_c.copy()


# ---------------------------------------------------------------------------
# Frame placement

def _mdh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ca, sa = math.cos(alpha), math.sin(alpha)
    ct, st = math.cos(theta), math.sin(theta)
    # Rx(alpha) Tx(a) Rz(theta) Tz(d), parent <- link
    return np.array([
        [ct, -st, 0.0, a],
        [st * ca, ct * ca, -sa, -d * sa],
        [st * sa, ct * sa, ca, d * ca],
        [0.0, 0.0, 0.0, 1.0],
    ])


def link_transform(link: DhLink, coord: float) -> np.ndarray:
    """Parent-to-link homogeneous transform at tree coordinate value `coord`."""
    d = link.d_const + (coord if link.kind == "prismatic" else 0.0)
    theta = link.theta_const + (coord if link.kind == "revolute" else 0.0)
    return _mdh_transform(link.a, link.alpha, d, theta)


def frame_placements(model: RobotModel, q) -> np.ndarray:
    """Base-frame pose of every kinematic link at tree coordinates q (n_kin,).

    Returns an array (n_kin, 4, 4) in declaration order of kinematic links.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_kinematic,):
        raise DimensionError(
            f"expected tree coordinates ({model.n_kinematic},), got {q.shape}"
        )
    out = np.empty((model.n_kinematic, 4, 4))
    for k, i in enumerate(model.kin_idx):
        lk = model.links[i]
        T = link_transform(lk, q[model.slot[lk.name]])
        p = model.parent_idx[k]
        out[k] = T if p < 0 else out[p] @ T
    return out
