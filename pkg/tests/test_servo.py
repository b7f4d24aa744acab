import math

import numpy as np
import pytest

from robust_mpc import servo
from robust_mpc.model import expm
from robust_mpc.servo import (
    PerturbationSpec,
    PlantState,
    ServoParams,
    ServoPlant,
    default_nominal_params,
    default_real_params,
    friction_torque,
    integrate_step,
)

LOAD_ALPHA = (0.5, 10.0, 0.5)


def linear_params():
    return default_nominal_params()  # L = 0, no friction


def test_friction_examples():
    assert friction_torque(0.0, LOAD_ALPHA) == 0.0
    assert friction_torque(0.5, LOAD_ALPHA) == pytest.approx(0.5 + 10 * math.exp(-0.25), rel=1e-15)
    assert friction_torque(0.5, LOAD_ALPHA) == pytest.approx(8.2880, abs=1e-4)


@pytest.mark.parametrize("w", [1e-9, 0.01, 0.5, 3.0, 1e3])
def test_friction_odd_and_bounded(w):
    f = friction_torque(w, LOAD_ALPHA)
    assert friction_torque(-w, LOAD_ALPHA) == -f
    assert 0 < f <= LOAD_ALPHA[0] + LOAD_ALPHA[1]


def test_rhs_equilibrium():
    p = default_real_params()
    d = servo.dynamics_rhs(p, PlantState.zero(p), 0.0)
    assert np.all(d.to_array() == 0.0)


def test_rhs_current_derivative():
    p = servo.real_base_params()
    d = servo.dynamics_rhs(p, PlantState.zero(p), 1.0)
    assert d.I_m == pytest.approx(1.25)
    assert d.omega_l == 0.0 and d.omega_m == 0.0


def test_rhs_relaxed_shaft():
    p = linear_params()
    s = PlantState(theta_l=0.3, theta_m=0.3 * p.rho)
    d = servo.dynamics_rhs(p, s, 0.0)
    assert d.omega_l == 0.0 and d.omega_m == 0.0


def test_zero_input_stays_at_rest():
    p = default_real_params()
    s = integrate_step(p, PlantState.zero(p), 0.0, 2.0, 50)
    assert np.all(s.to_array() == 0.0)


def test_rk4_fourth_order():
    # frictionless so the right-hand side is smooth
    p = default_real_params().frictionless()
    s0 = PlantState(0.1, 0.2, 1.0, -0.5, 0.01)
    ref = integrate_step(p, s0, 5.0, 0.1, 2560).to_array()
    errs = [np.linalg.norm(integrate_step(p, s0, 5.0, 0.1, k).to_array() - ref) for k in (40, 80)]
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.15)


def _linear_oracle(p, x0, V, t):
    cm = servo.continuous_linear_model(p)
    n = 4
    M = np.zeros((n + 1, n + 1))
    M[:n, :n], M[:n, n:] = cm.A, cm.B
    E = expm(M * t)
    return E[:n, :n] @ x0 + E[:n, n] * V


def test_rk4_matches_matrix_exponential():
    p = linear_params()
    x0 = np.array([0.2, -0.1, 3.0, 0.5])
    s = PlantState.from_array(x0)
    # the fastest pole is near -10; 40 substeps put the RK4 error below 1e-9
    for _ in range(10):
        s = integrate_step(p, s, 7.0, 0.1, 40)
    np.testing.assert_allclose(s.to_array(), _linear_oracle(p, x0, 7.0, 1.0), atol=1e-8)


def test_discretized_model_matches_rk4():
    p = linear_params()
    m = servo.nominal_linear_model(p, T=0.1)
    x0 = np.array([0.1, 0.0, 1.5, -0.2])
    s = integrate_step(p, PlantState.from_array(x0), 3.0, 0.1, 40)
    np.testing.assert_allclose(s.to_array(), m.A @ x0 + m.B[:, 0] * 3.0, atol=1e-8)


def _stored_energy(p, s):
    return servo.mechanical_energy(p, s) + 0.5 * p.L * (s.I_m or 0.0) ** 2


@pytest.mark.parametrize("L", [0.0, 0.8])
def test_energy_non_increasing(L):
    # friction is discontinuous at zero speed; 40 substeps keep the explicit
    # integrator from chattering energy in while the shafts stick
    p = ServoParams(**{**default_real_params().to_dict(), "L": L})
    s = PlantState(0.3, 1.0, -2.0, 4.0, 0.0 if L > 0 else None)
    e = _stored_energy(p, s)
    for _ in range(200):
        s = integrate_step(p, s, 0.0, 0.05, 40)
        e_next = _stored_energy(p, s)
        assert e_next <= e + 1e-12
        e = e_next


def test_energy_decays_without_friction():
    p = default_real_params().frictionless()
    s = PlantState(0.3, 1.0, -2.0, 4.0, 0.0)
    e0 = _stored_energy(p, s)
    for _ in range(200):
        s = integrate_step(p, s, 0.0, 0.1, 10)
    assert _stored_energy(p, s) < 1e-6 * e0


def test_measurement_noise():
    s = PlantState(theta_l=0.7)
    assert servo.measure(s, 0.0, np.random.default_rng(0)) == 0.7
    a = [servo.measure(s, 0.1, np.random.default_rng(5)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    rng = np.random.default_rng(1)
    y = np.array([servo.measure(s, 0.1, rng) for _ in range(100_000)])
    assert y.var() == pytest.approx(0.01, rel=0.03)


def test_plant_replays_with_seed():
    def run(seed):
        pl = ServoPlant(default_real_params(), np.random.default_rng(seed), accel_std=0.03, meas_std=0.01)
        out = []
        for _ in range(20):
            out.append(pl.measure()[0])
            pl.apply([10.0])
        return out

    assert run(4) == run(4)
    assert run(4) != run(5)


def test_plant_noise_increment_variance():
    # velocity increment per sample has variance accel_std^2 T, as in the discrete model
    p = ServoParams(**{**linear_params().to_dict(), "beta_l": 0.0, "k_theta": 1e-9})
    T, a = 0.1, 0.2
    incs = []
    for seed in range(2000):
        pl = ServoPlant(p, np.random.default_rng(seed), T=T, accel_std=a)
        pl.apply([0.0])
        incs.append(pl.state.omega_l)
    assert np.var(incs) == pytest.approx(a * a * T, rel=0.1)


def test_parameter_tables():
    nom = default_nominal_params()
    assert nom.to_dict() == {
        "L": 0.0, "J_m": 0.5, "beta_m": 0.1, "R": 20.0, "K_t": 10.0, "rho": 20.0, "k_theta": 1280.2,
        "J_l": 25.0, "beta_l": 25.0, "alpha_l": [0.0, 0.0, 0.0], "alpha_m": [0.0, 0.0, 0.0],
    }
    real = default_real_params()
    expected = dict(L=0.8, J_m=0.55, beta_m=0.11, R=21.0, K_t=11.0, rho=21.0, k_theta=1344.21, J_l=22.5, beta_l=27.5)
    for k, v in expected.items():
        assert getattr(real, k) == pytest.approx(v, rel=1e-12), k
    assert real.alpha_l == (0.5, 10.0, 0.5)
    assert real.alpha_m == (0.1, 2.0, 0.5)
    assert ServoParams.from_json(real.to_json()) == real


def test_params_validation():
    with pytest.raises(ValueError):
        ServoParams(**{**linear_params().to_dict(), "J_l": 0.0})
    with pytest.raises(ValueError):
        ServoParams(**{**linear_params().to_dict(), "alpha_l": (-1.0, 0.0, 0.0)})


def test_perturbation_zero_width():
    base = default_real_params()
    spec = PerturbationSpec(0.0, 0.0, 0.0)
    assert servo.perturb_params(base, spec, np.random.default_rng(0)) == base


def test_perturbation_bounds_and_mean():
    base = default_nominal_params()
    spec = PerturbationSpec()
    rng = np.random.default_rng(2)
    draws = [servo.perturb_params(base, spec, rng) for _ in range(10_000)]
    J_l = np.array([d.J_l for d in draws])
    assert J_l.min() >= 5.0 and J_l.max() <= 45.0
    K_t = np.array([d.K_t for d in draws])
    assert K_t.mean() == pytest.approx(10.0, rel=0.01)
    R = np.array([d.R for d in draws])
    assert R.min() >= 18.0 and R.max() <= 22.0


def test_perturbation_spec_seed():
    spec = PerturbationSpec(seed=11)
    assert servo.perturb_params(default_nominal_params(), spec) == servo.perturb_params(default_nominal_params(), spec)
    with pytest.raises(ValueError):
        PerturbationSpec(J_l_range=1.0)


def test_nominal_model_structure():
    p = linear_params()
    cm = servo.continuous_linear_model(p)
    np.testing.assert_allclose(cm.A[1], [-p.k_theta / p.J_l, -p.beta_l / p.J_l, p.k_theta / (p.rho * p.J_l), 0.0])
    assert np.min(np.abs(np.linalg.eigvals(cm.A))) < 1e-9  # integrating plant
    # rows agree with the frictionless nonlinear right-hand side
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, V = rng.standard_normal(4), rng.standard_normal()
        d = servo.dynamics_rhs(p, PlantState.from_array(x), V).to_array()
        np.testing.assert_allclose(d, cm.A @ x + cm.B[:, 0] * V, atol=1e-10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    p = ServoParams(**{**linear_params().to_dict(), "J_l": 1e-12})
    with pytest.raises(servo.DivergenceError):
        integrate_step(p, PlantState(theta_l=1.0), 0.0, 0.1, 10)
