import numpy as np
import pytest

import dynident
from dynident import kinematics
from dynident.errors import DimensionError, ModelConfigError

from conftest import make_model, PENDULUM_CFG


def test_model_counts(model):
    assert model.n_links == 16
    assert model.n_kinematic == 13
    assert model.n_basis == 7
    assert model.n_aux == 6
    assert model.n_params == 240
    assert int(dynident.active_param_mask(model).sum()) == 94


def test_coupling_columns(model):
    # columns of the wrist coupling block, read off by pushing unit motor
    # displacements through the interface map
    e5 = np.zeros(7)
    e5[4] = 1.0
    e6 = np.zeros(7)
    e6[5] = 1.0
    d5 = kinematics.motor_to_dvrk(model, e5)
    d6 = kinematics.motor_to_dvrk(model, e6)
    assert np.allclose(d5, [0, 0, 0, 0, 1.0186, -0.8306, 0.0], atol=1e-12)
    assert np.allclose(d6, [0, 0, 0, 0, 0.0, 0.6089, -1.2177], atol=1e-12)


def test_motor_dvrk_round_trip(model):
    rng = np.random.default_rng(11)
    for _ in range(50):
        q = rng.normal(size=7)
        back = kinematics.dvrk_to_motor(model, kinematics.motor_to_dvrk(model, q))
        assert np.abs(back - q).max() < 1e-12


def test_gripper_interface_map(model):
    # the two jaw joints map to midline (q6+q7)/2 and opening q7-q6
    qb = np.zeros(7)
    qb[5], qb[6] = 0.1, 0.3
    qd = kinematics.gripper_basis_to_dvrk(model, qb)
    assert np.allclose(qd[5:7], [0.2, 0.2], atol=1e-14)

    qb2 = np.zeros(7)
    qb2[5], qb2[6] = 0.37, -0.12
    rt = kinematics.gripper_dvrk_to_basis(model, kinematics.gripper_basis_to_dvrk(model, qb2))
    assert np.abs(rt - qb2).max() < 1e-12


def test_expand_parallelogram_pattern(model):
    # a pure q2 displacement drives the closed-chain copies with signs -,+
    qm = np.zeros(7)
    qm[1] = 0.4
    qc = kinematics.expand_coordinates(model, qm)
    assert qc.shape == (20,)
    assert qc[model.slot["2"]] == pytest.approx(0.4, abs=1e-15)
    assert qc[model.slot["2''"]] == pytest.approx(-0.4, abs=1e-15)
    assert qc[model.slot["2''''"]] == pytest.approx(0.4, abs=1e-15)
    assert qc[model.slot["3"]] == 0.0
    assert np.allclose(qc[13:], qm, atol=1e-15)


def test_expand_pinv_round_trip(model):
    A = kinematics.coordinate_jacobian(model)
    pinv = np.linalg.pinv(A)
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = rng.normal(size=7)
        qc = kinematics.expand_coordinates(model, q)
        assert np.abs(pinv @ qc - q).max() < 1e-12


def test_maps_are_linear(model):
    rng = np.random.default_rng(7)
    for _ in range(20):
        x, y = rng.normal(size=(2, 7))
        a, b = rng.normal(size=2)
        lhs = kinematics.expand_coordinates(model, a * x + b * y)
        rhs = a * kinematics.expand_coordinates(model, x) + b * kinematics.expand_coordinates(model, y)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_coordinate_jacobian_matches_finite_differences(model):
    A = kinematics.coordinate_jacobian(model)
    assert A.shape == (20, 7)
    rng = np.random.default_rng(13)
    h = 1e-6
    for _ in range(100):
        q = rng.normal(size=7)
        for j in range(7):
            dq = np.zeros(7)
            dq[j] = h
            fd = (kinematics.expand_coordinates(model, q + dq)
                  - kinematics.expand_coordinates(model, q - dq)) / (2 * h)
            assert np.abs(fd - A[:, j]).max() < 1e-8


def test_frame_placements_are_rigid(model):
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = rng.normal(size=7)
        T = kinematics.frame_placements(model, kinematics.tree_coordinates(model, q))
        assert T.shape == (13, 4, 4)
        for Tk in T:
            R = Tk[:3, :3]
            assert np.abs(R @ R.T - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(R) - 1.0) < 1e-10
            assert np.allclose(Tk[3], [0, 0, 0, 1], atol=0)


def test_parallelogram_coupler_stays_level(model):
    # closing the chain means the coupler link keeps its orientation while
    # the pitched segment rotates with q2
    kin_names = [model.links[i].name for i in model.kin_idx]
    i_coupler = kin_names.index("2'''")
    i_distal = kin_names.index("2''''")
    R_coupler0 = R_distal0 = None
    distal_moved = 0.0
    for q2 in np.linspace(-1.2, 1.2, 9):
        qm = np.zeros(7)
        qm[1] = q2
        T = kinematics.frame_placements(model, kinematics.tree_coordinates(model, qm))
        if R_coupler0 is None:
            R_coupler0 = T[i_coupler][:3, :3]
            R_distal0 = T[i_distal][:3, :3]
        assert np.abs(T[i_coupler][:3, :3] - R_coupler0).max() < 1e-12
        distal_moved = max(distal_moved, np.abs(T[i_distal][:3, :3] - R_distal0).max())
    assert distal_moved > 0.5


def test_prismatic_insertion_is_pure_translation(model):
    kin_names = [model.links[i].name for i in model.kin_idx]
    i3 = kin_names.index("3")
    qm = np.zeros(7)
    T0 = kinematics.frame_placements(model, kinematics.tree_coordinates(model, qm))[i3]
    qm[2] = 0.1
    T1 = kinematics.frame_placements(model, kinematics.tree_coordinates(model, qm))[i3]
    assert np.abs(T1[:3, :3] - T0[:3, :3]).max() < 1e-14
    shift = T1[:3, 3] - T0[:3, 3]
    assert np.linalg.norm(shift) == pytest.approx(0.1, abs=1e-12)
    # translation happens along the frame's own z axis
    assert np.abs(np.cross(shift, T0[:3, :3] @ [0, 0, 1])).max() < 1e-12


def test_motor_and_basis_agree_on_uncoupled_joints(model):
    rng = np.random.default_rng(3)
    q = rng.normal(size=7)
    qb = kinematics.motor_to_basis(model, q)
    assert np.allclose(qb[:4], q[:4], atol=1e-14)
    back = kinematics.basis_to_motor(model, qb)
    assert np.abs(back - q).max() < 1e-12


def test_limits_frozen_values(limits):
    assert np.allclose(limits.lower, [-1.4, -0.9, 0.02, -2.2, -1.2, -1.2, -1.2])
    assert np.allclose(limits.upper, [1.4, 0.9, 0.24, 2.2, 1.2, 1.2, 1.2])
    assert np.allclose(limits.velocity, [1.0, 1.0, 0.15, 1.5, 1.5, 1.5, 1.5])
    assert np.all(limits.upper > limits.lower)


def test_minimal_single_link_model():
    m = make_model(PENDULUM_CFG)
    assert m.n_links == 1
    assert m.n_basis == 1
    assert m.n_kinematic == 1
    assert m.coupling is None
    assert np.allclose(m.maps.A_b_to_q @ m.maps.A_m_to_b, [[1.0]])


def test_wrong_width_rejected(model):
    with pytest.raises(DimensionError):
        kinematics.motor_to_basis(model, np.zeros(6))
    m1 = make_model(PENDULUM_CFG)
    with pytest.raises(DimensionError):
        kinematics.expand_coordinates(m1, np.zeros(7))


def test_missing_parent_rejected(model):
    broken = """
[lengths]

[links]
1   base  0  0  0  q1  L  -
2   zzz   0  0  0  q2  L  -

[gravity]
g = 0 0 -9.81
"""
    with pytest.raises(ModelConfigError):
        make_model(broken)


def test_no_joints_rejected():
    static = """
[lengths]

[links]
1  base  0  0  0  0  L  -

[gravity]
g = 0 0 -9.81
"""
    with pytest.raises(ModelConfigError):
        make_model(static)
