"""Servomechanism: DC motor, gearbox, elastic shaft and load.

The nonlinear plant includes armature inductance and Coulomb/deadzone
friction on both shafts. The nominal model used by the controllers drops the
friction, sets the inductance to zero and is discretized with zero-order
hold.

State ordering is ``[theta_l, omega_l, theta_m, omega_m]`` with the armature
current ``I_m`` appended when ``L > 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import ContinuousModel, LinearModel, zoh_discretize

# Parameters trusted to within eps_min; the rest are "unreliable" (eps_max).
EPS_MIN_CLASS = ("R", "rho", "k_theta")
EPS_MAX_CLASS = ("J_m", "beta_m", "K_t", "beta_l")


@dataclass(frozen=True)
class ServoParams:
    L: float
    J_m: float
    beta_m: float
    R: float
    K_t: float
    rho: float
    k_theta: float
    J_l: float
    beta_l: float
    alpha_l: tuple[float, float, float] = (0.0, 0.0, 0.0)
    alpha_m: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "alpha_l", tuple(float(a) for a in self.alpha_l))
        object.__setattr__(self, "alpha_m", tuple(float(a) for a in self.alpha_m))
        for name in ("J_m", "R", "rho", "k_theta", "J_l"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta_m", "beta_l", "L"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if min(self.alpha_l + self.alpha_m) < 0:
            raise ValueError("friction coefficients must be nonnegative")
        if not self.K_t > 0:
            raise ValueError(f"K_t must be positive, got {self.K_t}")

    @property
    def n_states(self) -> int:
        return 5 if self.L > 0 else 4

    def frictionless(self) -> "ServoParams":
        return replace(self, alpha_l=(0.0, 0.0, 0.0), alpha_m=(0.0, 0.0, 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_l"] = list(self.alpha_l)
        d["alpha_m"] = list(self.alpha_m)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ServoParams":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ServoParams":
        return cls.from_dict(json.loads(text))


def default_nominal_params() -> ServoParams:
    return ServoParams(L=0.0, J_m=0.5, beta_m=0.1, R=20.0, K_t=10.0, rho=20.0,
                       k_theta=1280.2, J_l=25.0, beta_l=25.0)


def real_base_params() -> ServoParams:
    """Nominal values with the real plant's inductance and frictions, before perturbation."""
    return replace(default_nominal_params(), L=0.8, alpha_l=(0.5, 10.0, 0.5), alpha_m=(0.1, 2.0, 0.5))


def scale_params(base: ServoParams, deltas: dict[str, float]) -> ServoParams:
    """Multiply each named parameter by ``1 + delta``."""
    changes = {k: getattr(base, k) * (1.0 + d) for k, d in deltas.items()}
    bad = [k for k, v in changes.items() if not v > 0]
    if bad:
        raise ValueError(f"perturbation makes {bad} nonpositive")
    return replace(base, **changes)


def default_real_params(eps_min: float = 0.05, eps_max: float = 0.10) -> ServoParams:
    deltas = {k: eps_min for k in EPS_MIN_CLASS}
    deltas.update({k: eps_max for k in EPS_MAX_CLASS})
    deltas["J_l"] = -eps_max
    return scale_params(real_base_params(), deltas)


@dataclass(frozen=True)
class PerturbationSpec:
    eps_min_range: float = 0.10
    eps_max_range: float = 0.20
    J_l_range: float = 0.80
    seed: int | None = None

    def __post_init__(self):
        for name in ("eps_min_range", "eps_max_range", "J_l_range"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        return cls(**d)


def draw_deltas(spec: PerturbationSpec, rng: np.random.Generator) -> dict[str, float]:
    deltas = {}
    for k in EPS_MIN_CLASS:
        deltas[k] = rng.uniform(-spec.eps_min_range, spec.eps_min_range)
    for k in EPS_MAX_CLASS:
        deltas[k] = rng.uniform(-spec.eps_max_range, spec.eps_max_range)
    deltas["J_l"] = rng.uniform(-spec.J_l_range, spec.J_l_range)
    return deltas


def perturb_params(base: ServoParams, spec: PerturbationSpec, rng: np.random.Generator | None = None) -> ServoParams:
    """Random actual plant: each parameter scaled by ``1 + U(-w, w)`` for its class.

    ``L`` and the friction triples are left alone. Uses ``spec.seed`` when no
    generator is given.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return scale_params(base, draw_deltas(spec, rng))


# -- physics ------------------------------------------------------------------


def sgn(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def friction_torque(omega: float, alpha) -> float:
    """Coulomb plus deadzone friction ``a0 sgn(w) + a1 exp(-a2 |w|) sgn(w)``."""
    a0, a1, a2 = alpha
    s = sgn(omega)
    if s == 0.0:
        return 0.0
    return s * (a0 + a1 * math.exp(-a2 * abs(omega)))


@dataclass
class PlantState:
    theta_l: float = 0.0
    omega_l: float = 0.0
    theta_m: float = 0.0
    omega_m: float = 0.0
    I_m: float | None = None

    def to_array(self) -> np.ndarray:
        v = [self.theta_l, self.omega_l, self.theta_m, self.omega_m]
        if self.I_m is not None:
            v.append(self.I_m)
        return np.array(v, dtype=float)

    @classmethod
    def from_array(cls, a) -> "PlantState":
        a = [float(v) for v in a]
        return cls(*a[:4], a[4] if len(a) > 4 else None)

    @classmethod
    def zero(cls, p: ServoParams) -> "PlantState":
        return cls(I_m=0.0 if p.L > 0 else None)


def _rhs(p: ServoParams, s, V: float, acc=(0.0, 0.0)):
    th_l, w_l, th_m, w_m = s[0], s[1], s[2], s[3]
    T_s = (p.k_theta / p.rho) * (th_m / p.rho - th_l)
    if p.L > 0:
        I_m = s[4]
    else:
        I_m = (V - p.K_t * w_m) / p.R
    T_m = p.K_t * I_m
    dw_l = (p.rho * T_s - p.beta_l * w_l - friction_torque(w_l, p.alpha_l)) / p.J_l + acc[0]
    dw_m = (T_m - T_s - p.beta_m * w_m - friction_torque(w_m, p.alpha_m)) / p.J_m + acc[1]
    if p.L > 0:
        dI = (V - p.R * I_m - p.K_t * w_m) / p.L
        return (w_l, dw_l, w_m, dw_m, dI)
    return (w_l, dw_l, w_m, dw_m)


def dynamics_rhs(p: ServoParams, s: PlantState, V: float) -> PlantState:
    """Time derivative of the plant state under armature voltage ``V``."""
    return PlantState.from_array(_rhs(p, s.to_array(), V))


class DivergenceError(FloatingPointError):
    def __init__(self, t: float):
        super().__init__(f"plant state became non-finite at t={t:.4g} s")
        self.t = t


def _rk4(p: ServoParams, s: tuple, V: float, h: float, steps: int, acc, t0: float = 0.0):
    n = len(s)
    for k in range(steps):
        k1 = _rhs(p, s, V, acc)
        k2 = _rhs(p, tuple(s[i] + 0.5 * h * k1[i] for i in range(n)), V, acc)
        k3 = _rhs(p, tuple(s[i] + 0.5 * h * k2[i] for i in range(n)), V, acc)
        k4 = _rhs(p, tuple(s[i] + h * k3[i] for i in range(n)), V, acc)
        s = tuple(s[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(n))
        if not all(math.isfinite(v) for v in s):
            raise DivergenceError(t0 + (k + 1) * h)
    return s


def integrate_step(p: ServoParams, s: PlantState, V: float, T: float, substeps: int = 10, acc=(0.0, 0.0)) -> PlantState:
    """Advance by ``T`` seconds with ``V`` held, using fixed-step RK4."""
    if not T > 0 or substeps < 1:
        raise ValueError("need T > 0 and substeps >= 1")
    out = _rk4(p, tuple(s.to_array()), float(V), T / substeps, substeps, acc)
    return PlantState.from_array(out)


def measure(s: PlantState, noise_std: float, rng: np.random.Generator) -> float:
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    return s.theta_l + noise_std * rng.standard_normal()


def mechanical_energy(p: ServoParams, s: PlantState) -> float:
    """Kinetic energy of both inertias plus shaft strain energy."""
    twist = s.theta_m / p.rho - s.theta_l
    return 0.5 * (p.J_l * s.omega_l**2 + p.J_m * s.omega_m**2 + p.k_theta * twist**2)


# -- plant wrapper ------------------------------------------------------------


@dataclass
class ServoPlant:
    """Nonlinear plant driven by the closed loop.

    Process noise enters as piecewise-constant accelerations on both shafts
    with standard deviation ``accel_std / sqrt(T)`` so that each sample
    receives a velocity increment of variance ``accel_std**2 * T``.
    """

    params: ServoParams
    rng: np.random.Generator
    T: float = 0.1
    substeps: int = 10
    accel_std: float = 0.0
    meas_std: float = 0.0
    state: PlantState = field(default=None)
    time: float = 0.0

    def __post_init__(self):
        if self.state is None:
            self.state = PlantState.zero(self.params)
        self._s = tuple(self.state.to_array())

    def measure(self) -> np.ndarray:
        noise = self.rng.standard_normal()
        return np.array([self._s[0] + self.meas_std * noise])

    def apply(self, u) -> None:
        a = self.rng.standard_normal(2) * (self.accel_std / math.sqrt(self.T))
        V = float(np.asarray(u).ravel()[0])
        self._s = _rk4(self.params, self._s, V, self.T / self.substeps, self.substeps,
                       (float(a[0]), float(a[1])), self.time)
        self.time += self.T
        self.state = PlantState.from_array(self._s)


# -- nominal linear model -----------------------------------------------------


def continuous_linear_model(p: ServoParams, accel_std: float = 0.01, meas_std: float = 0.01) -> ContinuousModel:
    """Frictionless model with the current eliminated (``L`` treated as 0).

    Noise has ``n + p = 5`` channels: accelerations on both shafts, then
    the load-angle sensor.
    """
    kr = p.k_theta / p.rho
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-p.k_theta / p.J_l, -p.beta_l / p.J_l, p.k_theta / (p.rho * p.J_l), 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [kr / p.J_m, 0.0, -kr / (p.rho * p.J_m), -(p.beta_m + p.K_t**2 / p.R) / p.J_m],
    ])
    B = np.array([[0.0], [0.0], [0.0], [p.K_t / (p.R * p.J_m)]])
    C = np.array([[1.0, 0.0, 0.0, 0.0]])
    G = np.zeros((4, 5))
    G[1, 1] = accel_std
    G[3, 3] = accel_std
    D = np.zeros((1, 5))
    D[0, 4] = meas_std
    return ContinuousModel(A, B, C, D, G)


def nominal_linear_model(p: ServoParams | None = None, accel_std: float = 0.01,
                         meas_std: float = 0.01, T: float = 0.1) -> LinearModel:
    if p is None:
        p = default_nominal_params()
    return zoh_discretize(continuous_linear_model(p, accel_std, meas_std), T)


def initial_covariance(model: LinearModel, reg: float = 1e-6) -> np.ndarray:
    """Prior ``G G^T + reg I`` (process-noise covariance, made definite)."""
    return model.GGT + reg * np.eye(model.n)
