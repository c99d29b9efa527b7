"""Reference parameter sets for the bundled models.

Values are synthetic: plausible in magnitude and strictly physically
consistent (positive mass, center of mass well inside each link's bounding
box, positive-definite pseudo-inertia), but not measurements of any robot.
They drive the simulation harness that the identification pipeline is tested
against.
"""

from __future__ import annotations

import numpy as np

from .dynamics import PARAMS_PER_LINK, DynamicParameters
from .kinematics import RobotModel


def link_inertial_from_com(m: float, com, gyration) -> np.ndarray:
    """Build [Ixx..Izz, h, m] about the link frame from COM-frame values.

    `gyration` gives the COM-frame gyration radii (diagonal inertia
    m * diag(g^2)); the parallel-axis shift to the frame origin introduces
    the products of inertia.  Distinct, moderate radii keep the triangle
    inequality strict, so the pseudo-inertia is positive definite.
    """
    com = np.asarray(com, dtype=float)
    g2 = np.asarray(gyration, dtype=float) ** 2
    I_c = m * np.diag(g2)
    # I about frame origin: I_c + m (c.c 1 - c c^T)
    I = I_c + m * (np.dot(com, com) * np.eye(3) - np.outer(com, com))
    h = m * com
    return np.array([I[0, 0], I[0, 1], I[0, 2], I[1, 1], I[1, 2], I[2, 2],
                     h[0], h[1], h[2], m])


# name -> (mass, com, gyration radii) for the inertial links, and
# name -> (Fv, Fc, Fb) / (Im,) / (Ks,) for the additional terms.
_PSM_INERTIAL = {
    "1":     (8.00, (0.050, 0.030, -0.040), (0.090, 0.110, 0.080)),
    "2":     (4.20, (0.180, 0.020, 0.010), (0.130, 0.160, 0.110)),
    "2''":   (2.60, (0.220, -0.010, 0.015), (0.150, 0.180, 0.120)),
    "2''''": (3.10, (0.150, 0.025, -0.020), (0.110, 0.140, 0.095)),
    "3":     (1.60, (-0.015, 0.020, -0.080), (0.060, 0.075, 0.050)),
}

_PSM_FRICTION = {
    "1":     (2.00, 1.00, 0.40),
    "2":     (1.50, 0.80, -0.30),
    "2''":   (0.30, 0.20, 0.05),
    "2''''": (0.35, 0.25, -0.04),
    "3":     (20.0, 3.00, 1.00),
    "3'":    (0.80, 0.40, 0.10),
    "4":     (0.120, 0.080, 0.020),
    "5":     (0.100, 0.070, -0.015),
    "6":     (0.060, 0.050, 0.010),
    "7":     (0.060, 0.050, -0.010),
    "F67":   (0.040, 0.030, 0.005),
    "M6":    (0.080, 0.060, 0.012),
    "M7":    (0.080, 0.060, -0.012),
}

_PSM_MOTOR_INERTIA = {"4": 0.050, "5": 0.040, "M6": 0.030, "M7": 0.030}
_PSM_SPRING = {"4": 5.0}


def psm_reference_parameters(model: RobotModel) -> DynamicParameters:
    """Ground-truth parameter vector for the bundled PSM model."""
    params = DynamicParameters.zeros(model)
    for i, lk in enumerate(model.links):
        off = PARAMS_PER_LINK * i
        if lk.has_inertia:
            if lk.name not in _PSM_INERTIAL:
                raise KeyError(f"no reference inertial values for link {lk.name}")
            m, com, gyr = _PSM_INERTIAL[lk.name]
            params.theta[off:off + 10] = link_inertial_from_com(m, com, gyr)
        if lk.has_friction:
            params.theta[off + 10:off + 13] = _PSM_FRICTION[lk.name]
        if lk.has_motor_inertia:
            params.theta[off + 13] = _PSM_MOTOR_INERTIA[lk.name]
        if lk.has_spring:
            params.theta[off + 14] = _PSM_SPRING[lk.name]
    params.validate(model)
    return params
