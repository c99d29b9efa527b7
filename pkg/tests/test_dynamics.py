import numpy as np
import pytest

import dynident
from dynident import kinematics
from dynident.dynamics import (
    DynamicParameters,
    FrictionConfig,
    JointState,
    SpringConfig,
    active_param_mask,
    forward_dynamics,
    friction_torque,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
    param_names,
    potential_energy,
    regressor,
    sample_states,
    spring_torque,
)
from dynident.errors import StructuralZeroError

from conftest import make_model, PENDULUM_CFG, DOUBLE_PENDULUM_CFG


def pendulum_setup(mass=2.3, r=0.37, extra=0.11):
    """Point mass at radius r plus extra rotor inertia, swinging in the g plane."""
    m = make_model(PENDULUM_CFG)
    p = DynamicParameters.zeros(m)
    p.theta[5] = mass * r * r + extra  # Izz about the joint axis
    p.theta[6] = mass * r              # hx
    p.theta[9] = mass
    return m, p, mass, r, extra


def test_pendulum_inverse_dynamics_analytic():
    # hand-derived for the gravity pendulum: tau = (m r^2 + I) qdd + m g r cos q
    m, p, mass, r, extra = pendulum_setup()
    rng = np.random.default_rng(3)
    q = rng.uniform(-2, 2, (50, 1))
    qd = rng.normal(size=(50, 1))
    qdd = rng.normal(size=(50, 1))
    tau = inverse_dynamics(m, p, JointState(q, qd, qdd))
    ref = (mass * r * r + extra) * qdd + mass * 9.81 * r * np.cos(q)
    assert np.abs(tau - ref).max() < 1e-12


def test_pendulum_mass_matrix():
    m, p, mass, r, extra = pendulum_setup()
    M = mass_matrix(m, p, np.array([0.3]))
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(mass * r * r + extra, abs=1e-14)


def test_pendulum_forward_dynamics():
    # torque-free release from the lowest-energy-crossing pose
    m, p, mass, r, extra = pendulum_setup()
    qdd = forward_dynamics(m, p, np.array([0.0]), np.array([0.0]), np.array([0.0]))
    assert qdd[0] == pytest.approx(-mass * 9.81 * r / (mass * r * r + extra), rel=1e-12)


def test_zero_parameters_zero_torque(model):
    p0 = DynamicParameters.zeros(model)
    st = sample_states(model, 20, seed=8)
    assert np.abs(inverse_dynamics(model, p0, st)).max() == 0.0


def test_rest_torque_is_pulled_back_bias(model, true_params):
    # at rest with gravity and spring switched off only the friction bias
    # survives, pulled back through the element rows
    z = np.zeros(7)
    tau = inverse_dynamics(model, true_params, JointState(z, z, z),
                           include_gravity=False, include_spring=False)
    fb = true_params.theta.reshape(model.n_links, 15)[:, 12]
    assert np.allclose(tau, model.elem_rows.T @ fb, atol=1e-15)
    # frozen from the reference parameter file
    assert np.allclose(tau, [0.4, -0.39, 0.95, 0.02, -0.015279, 0.0180885, -0.0180885],
                       atol=1e-12)
    assert np.allclose(friction_torque(model, true_params, z), tau, atol=1e-15)


def test_friction_smooth_model_value():
    m = make_model(PENDULUM_CFG)
    p = DynamicParameters.zeros(m)
    p.theta[10], p.theta[11], p.theta[12] = 1.0, 2.0, 0.5  # Fv, Fc, Fb
    tau = friction_torque(m, p, np.array([0.05]))
    # 1*0.05 + 2*tanh(100*0.05) + 0.5 with the default smoothing
    assert tau[0] == pytest.approx(2.54981840852519, abs=1e-12)
    tau_sharp = friction_torque(m, p, np.array([0.05]), config=FrictionConfig(epsilon=1000.0))
    assert tau_sharp[0] > tau[0]


def test_friction_slope_at_zero():
    # d tau / d qd at 0 is Fv + Fc * epsilon for the smoothed Coulomb term
    m = make_model(PENDULUM_CFG)
    p = DynamicParameters.zeros(m)
    p.theta[10], p.theta[11] = 0.7, 1.3
    h = 1e-7
    slope = (friction_torque(m, p, np.array([h]))[0]
             - friction_torque(m, p, np.array([-h]))[0]) / (2 * h)
    assert slope == pytest.approx(0.7 + 1.3 * 100.0, rel=1e-6)


def test_spring_torque_cases(model, true_params):
    z = np.zeros(7)
    assert np.abs(spring_torque(model, true_params, z)).max() == 0.0
    p0 = DynamicParameters.zeros(model)
    assert np.abs(spring_torque(model, p0, np.ones(7))).max() == 0.0
    # a preload offset shows up as Ks * s0 on the spring's motor row
    sc = SpringConfig.default(model)
    sc2 = SpringConfig(S=sc.S, s0=np.array([0.25]), owner=sc.owner)
    ks = true_params.theta[param_names(model).index("A4_Ks")]
    tau = spring_torque(model, true_params, z, config=sc2)
    expected = np.zeros(7)
    expected[3] = ks * 0.25
    assert np.allclose(tau, expected, atol=1e-14)


def test_regressor_matches_inverse_dynamics(model):
    # Y(x) theta must reproduce the recursive sweep for any masked theta
    mask = active_param_mask(model)
    rng = np.random.default_rng(17)
    st = sample_states(model, 40, seed=17)
    Y = regressor(model, st)
    assert Y.shape == (40, 7, model.n_params)
    for _ in range(5):
        p = DynamicParameters(rng.normal(size=model.n_params) * mask)
        tau = inverse_dynamics(model, p, st)
        err = np.linalg.norm(Y @ p.theta - tau) / np.linalg.norm(tau)
        assert err < 1e-9


def test_regressor_rest_support_without_gravity(model):
    # in zero gravity nothing but the bias columns can act on a resting arm
    cfg = open(dynident.default_model_path()).read().replace("g = 0 0 -9.81", "g = 0 0 0")
    m0 = make_model(cfg)
    z = np.zeros(7)
    Y = regressor(m0, JointState(z, z, z))
    support = set(np.nonzero(np.abs(Y).max(axis=0) > 1e-12)[0].tolist())
    fb_cols = {i for i, n in enumerate(param_names(m0)) if n.endswith("_Fb")
               and active_param_mask(m0)[i]}
    assert support == fb_cols


def test_mass_matrix_symmetry_and_linearity(model, true_params):
    st = sample_states(model, 10, seed=4)
    z = np.zeros(7)
    for q in st.q:
        M = mass_matrix(model, true_params, q)
        assert np.abs(M - M.T).max() < 1e-10
        ws, vs = np.linalg.eigh(M)
        assert ws.min() > 0
        # columns agree with inverse dynamics differences, which are exactly
        # linear in qdd
        for j in range(7):
            ej = np.zeros(7)
            ej[j] = 1.0
            col = (inverse_dynamics(model, true_params, JointState(q, z, ej),
                                    include_friction=False, include_spring=False)
                   - inverse_dynamics(model, true_params, JointState(q, z, z),
                                      include_friction=False, include_spring=False))
            assert np.abs(col - M[:, j]).max() < 1e-10


def test_motor_inertia_is_motor_space_diagonal(model):
    p = DynamicParameters.zeros(model)
    names = param_names(model)
    vals = {"A4_Im": 0.3, "A5_Im": 0.5, "AM6_Im": 0.7, "AM7_Im": 1.1}
    for nm, v in vals.items():
        p.theta[names.index(nm)] = v
    M = mass_matrix(model, p, np.zeros(7))
    expected = np.diag([0.0, 0.0, 0.0, 0.3, 0.5, 0.7, 1.1])
    assert np.abs(M - expected).max() < 1e-14


def test_forward_inverse_round_trip(model, true_params):
    rng = np.random.default_rng(9)
    st = sample_states(model, 20, seed=9)
    for q, qd, qdd in zip(st.q, st.qd, st.qdd):
        tau = inverse_dynamics(model, true_params, JointState(q, qd, qdd))
        back = forward_dynamics(model, true_params, q, qd, tau)
        assert np.abs(back - qdd).max() < 1e-8


def test_scalar_and_batched_paths_agree(model, true_params):
    st = sample_states(model, 15, seed=21)
    batched = inverse_dynamics(model, true_params, st)
    for i in range(15):
        one = inverse_dynamics(model, true_params,
                               JointState(st.q[i], st.qd[i], st.qdd[i]))
        assert np.abs(one - batched[i]).max() < 1e-10
    Mb = mass_matrix(model, true_params, st.q)
    for i in range(15):
        assert np.abs(mass_matrix(model, true_params, st.q[i]) - Mb[i]).max() < 1e-10


def test_double_pendulum_conserves_energy():
    # torque-free, gravity-free swing: kinetic energy is the invariant
    m = make_model(DOUBLE_PENDULUM_CFG)
    p = DynamicParameters.zeros(m)
    p.theta[5], p.theta[6], p.theta[9] = 1.1 * 0.25 ** 2 / 3, 1.1 * 0.25, 1.1
    p.theta[20], p.theta[21], p.theta[24] = 0.7 * 0.4 ** 2 + 0.015, 0.7 * 0.4, 0.7

    q = np.array([0.3, -0.8])
    qd = np.array([0.9, -0.4])
    E0 = kinetic_energy(m, p, q, qd)
    h = 1e-3
    tau0 = np.zeros(2)

    def f(q, qd):
        return qd, forward_dynamics(m, p, q, qd, tau0)

    for _ in range(2000):
        k1q, k1v = f(q, qd)
        k2q, k2v = f(q + 0.5 * h * k1q, qd + 0.5 * h * k1v)
        k3q, k3v = f(q + 0.5 * h * k2q, qd + 0.5 * h * k2v)
        k4q, k4v = f(q + h * k3q, qd + h * k3v)
        q = q + h / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    E1 = kinetic_energy(m, p, q, qd)
    assert abs(E1 - E0) / abs(E0) < 1e-9
    # the swing actually moved
    assert np.abs(q - [0.3, -0.8]).max() > 0.5


def test_inverse_dynamics_linear_in_parameters(model):
    mask = active_param_mask(model)
    rng = np.random.default_rng(31)
    st = sample_states(model, 10, seed=31)
    t1 = DynamicParameters(rng.normal(size=model.n_params) * mask)
    t2 = DynamicParameters(rng.normal(size=model.n_params) * mask)
    both = DynamicParameters(t1.theta + t2.theta)
    tau = inverse_dynamics(model, both, st)
    split = inverse_dynamics(model, t1, st) + inverse_dynamics(model, t2, st)
    assert np.abs(tau - split).max() < 1e-9
    half = inverse_dynamics(model, DynamicParameters(0.5 * t1.theta), st)
    assert np.abs(half - 0.5 * inverse_dynamics(model, t1, st)).max() < 1e-9


def test_energies_match_operators(model, true_params):
    st = sample_states(model, 10, seed=12)
    for q, qd in zip(st.q, st.qd):
        T = kinetic_energy(model, true_params, q, qd)
        assert T == pytest.approx(0.5 * qd @ mass_matrix(model, true_params, q) @ qd,
                                  abs=1e-10)
    z = np.zeros(7)
    h = 1e-6
    for q in st.q[:3]:
        grav = inverse_dynamics(model, true_params, JointState(q, z, z),
                                include_friction=False, include_spring=False,
                                include_motor_inertia=False)
        for j in range(7):
            dq = np.zeros(7)
            dq[j] = h
            g_fd = (potential_energy(model, true_params, q + dq)
                    - potential_energy(model, true_params, q - dq)) / (2 * h)
            assert grav[j] == pytest.approx(g_fd, abs=1e-6)


def test_structural_zero_validation(model, true_params):
    true_params.validate(model)
    bad = true_params.copy()
    bad.theta[param_names(model).index("L1'_m")] = 1.0  # link 1' carries no inertia
    with pytest.raises(StructuralZeroError):
        bad.validate(model)


def test_parameter_csv_round_trip(model, true_params, tmp_path):
    path = str(tmp_path / "params.csv")
    true_params.to_csv(path, model)
    back = DynamicParameters.from_csv(path, model)
    assert np.array_equal(back.theta, true_params.theta)


def test_sample_states_respect_limits(model, limits):
    st = sample_states(model, 200, seed=2, limits=limits)
    assert np.all(st.q >= limits.lower - 1e-12)
    assert np.all(st.q <= limits.upper + 1e-12)
    assert np.abs(st.qd).max() <= limits.velocity.max() + 1e-12
