"""One-step state estimators sharing a Kalman-like recursion.

All filters propagate the one-step predicted estimate ``x[t|t-1]`` and the
nominal prior covariance ``P_t``. The robust and risk-sensitive variants
replace ``P_t`` by an inflated least-favorable covariance ``V_t`` in the gain
and in the Riccati update:

    V_t     = (P_t^-1 - theta_t I)^-1
    L_t     = V_t C^T (C V_t C^T + D D^T)^-1,   K_t = A L_t
    P_{t+1} = A V_t A^T - K_t (C V_t C^T + D D^T) K_t^T + G G^T

``theta_t`` is found by bisection for the KL-robust filter (tolerance ``c``)
and is fixed for the risk-sensitive filter.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.linalg

from .model import GaussianBelief, LinearModel, expm, is_observable, is_reachable


class FilterError(ArithmeticError):
    """A filter recursion cannot be evaluated."""


class ToleranceOutOfRange(FilterError, ValueError):
    pass


class RiskParameterTooLarge(FilterError, ValueError):
    pass


# -- variants -----------------------------------------------------------------


@dataclass(frozen=True)
class Standard:
    label = "S"


@dataclass(frozen=True)
class Robust:
    c: float
    label = "R"

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError(f"tolerance must be nonnegative, got {self.c}")


@dataclass(frozen=True)
class RiskSensitive:
    theta_bar: float
    label = "RS"

    def __post_init__(self):
        if not self.theta_bar >= 0:
            raise ValueError(f"risk parameter must be nonnegative, got {self.theta_bar}")


@dataclass(frozen=True)
class RiskSensitiveTau:
    theta_bar: float
    label = "RST"

    def __post_init__(self):
        if not self.theta_bar >= 0:
            raise ValueError(f"risk parameter must be nonnegative, got {self.theta_bar}")


FilterVariant = Union[Standard, Robust, RiskSensitive, RiskSensitiveTau]


def variant_to_dict(v: FilterVariant) -> dict:
    if isinstance(v, Standard):
        return {"kind": "standard"}
    if isinstance(v, Robust):
        return {"kind": "robust", "c": v.c}
    if isinstance(v, RiskSensitive):
        return {"kind": "risk_sensitive", "theta_bar": v.theta_bar}
    return {"kind": "risk_sensitive_tau", "theta_bar": v.theta_bar}


def variant_from_dict(d: dict) -> FilterVariant:
    kind = d["kind"]
    if kind == "standard":
        return Standard()
    if kind == "robust":
        return Robust(float(d["c"]))
    if kind == "risk_sensitive":
        return RiskSensitive(float(d["theta_bar"]))
    if kind == "risk_sensitive_tau":
        return RiskSensitiveTau(float(d["theta_bar"]))
    raise ValueError(f"unknown filter kind {kind!r}")


# -- state --------------------------------------------------------------------


@dataclass(frozen=True)
class FilterState:
    """Filter memory at step ``t``.

    ``L`` and ``K`` are the gains used on the step that produced this state
    (zero for the initial state); ``V`` and ``theta`` likewise.
    """

    x_pred: np.ndarray
    P: np.ndarray
    V: np.ndarray
    theta: float
    L: np.ndarray
    K: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray, P0: np.ndarray, p: int) -> "FilterState":
        x0 = np.asarray(x0, dtype=float).ravel()
        P0 = np.atleast_2d(np.asarray(P0, dtype=float))
        n = x0.size
        if P0.shape != (n, n):
            raise ValueError(f"P0 has shape {P0.shape}, expected {(n, n)}")
        try:
            np.linalg.cholesky(P0)
        except np.linalg.LinAlgError:
            raise FilterError("initial covariance is not positive definite") from None
        return cls(x0.copy(), P0.copy(), P0.copy(), 0.0, np.zeros((n, p)), np.zeros((n, p)), 0)

    @classmethod
    def from_belief(cls, belief: GaussianBelief, p: int) -> "FilterState":
        return cls.initial(belief.mean, belief.cov, p)


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


# -- divergence and the theta equation ---------------------------------------


def kl_gaussian(f_tilde: GaussianBelief, f: GaussianBelief) -> float:
    """KL divergence D(f_tilde || f) between two Gaussians of equal dimension."""
    if f_tilde.dim != f.dim:
        raise ValueError("dimension mismatch")
    d = f.dim
    try:
        cf = scipy.linalg.cho_factor(f.cov, lower=True)
    except np.linalg.LinAlgError:
        raise FilterError("reference covariance is singular") from None
    dm = f.mean - f_tilde.mean
    tr = np.trace(scipy.linalg.cho_solve(cf, f_tilde.cov))
    quad = dm @ scipy.linalg.cho_solve(cf, dm)
    logdet_f = 2.0 * np.sum(np.log(np.diag(cf[0])))
    sign, logdet_ft = np.linalg.slogdet(f_tilde.cov)
    if sign <= 0:
        raise FilterError("divergence is infinite: f_tilde covariance is singular")
    val = 0.5 * (tr - d + quad + logdet_f - logdet_ft)
    if not math.isfinite(val):
        raise FilterError("non-finite divergence")
    return max(float(val), 0.0)


def _gamma_eig(lam: np.ndarray, theta: float) -> float:
    x = theta * lam
    if np.any(x >= 1.0):
        raise ToleranceOutOfRange(f"I - theta P is not positive definite (theta={theta})")
    # log(1-x) + 1/(1-x) - 1, written to avoid cancellation for small x
    return float(np.sum(np.log1p(-x) + x / (1.0 - x)))


def gamma(P: np.ndarray, theta: float) -> float:
    """``log det(I - theta P) + tr[(I - theta P)^-1] - n``.

    Zero at ``theta = 0`` and strictly increasing on ``[0, 1/lambda_max(P))``.
    """
    lam = np.linalg.eigvalsh(_sym(np.atleast_2d(P)))
    return _gamma_eig(lam, theta)


def solve_theta(P: np.ndarray, c: float, eps: float = 1e-9) -> float:
    """Bisection for the unique ``theta`` with ``gamma(P, theta) = c``.

    The search runs on the normalized variable ``s = theta * lambda_max(P)``
    over ``[eps, 1 - eps]`` until the bracket is narrower than ``eps``, so the
    stopping rule does not depend on the scale of ``P``.
    """
    if not c > 0:
        raise ValueError(f"tolerance must be positive, got {c}")
    lam = np.linalg.eigvalsh(_sym(np.atleast_2d(P)))
    lam_max = lam[-1]
    if not lam_max > 0:
        raise FilterError("P is not positive definite")
    mu = lam / lam_max
    lo, hi = eps, 1.0 - eps
    if _gamma_eig(mu, hi) < c:
        raise ToleranceOutOfRange(
            f"tolerance out of range: c={c} exceeds gamma at the bracket end "
            f"({_gamma_eig(mu, hi):.6g})"
        )
    if _gamma_eig(mu, lo) >= c:
        return lo / lam_max
    while hi - lo > eps:
        mid = 0.5 * (lo + hi)
        if _gamma_eig(mu, mid) < c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) / lam_max


def inflate(P: np.ndarray, theta: float) -> np.ndarray:
    """Least-favorable covariance ``(P^-1 - theta I)^-1 = (I - theta P)^-1 P``."""
    n = P.shape[0]
    if theta == 0.0:
        return P.copy()
    M = np.eye(n) - theta * P
    try:
        V = scipy.linalg.solve(M, P, assume_a="gen")
    except np.linalg.LinAlgError:
        raise RiskParameterTooLarge("I - theta P is singular") from None
    return _sym(V)


def tau_divergence_V(P: np.ndarray, theta_bar: float) -> np.ndarray:
    """``V = F exp(theta_bar F^T F) F^T`` with ``P = F F^T`` (lower Cholesky).

    Positive definite for every ``theta_bar >= 0``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    try:
        F = np.linalg.cholesky(_sym(P))
    except np.linalg.LinAlgError:
        raise FilterError("P is not positive definite") from None
    return _sym(F @ expm(theta_bar * (F.T @ F)) @ F.T)


# -- recursions ---------------------------------------------------------------


def _recursion(model: LinearModel, st: FilterState, y, u, V: np.ndarray, theta: float):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    A, B, C = model.A, model.B, model.C
    S = _sym(C @ V @ C.T + model.DDT)
    try:
        cS = scipy.linalg.cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise FilterError(f"innovation covariance is singular at step {st.t}") from None
    L = scipy.linalg.cho_solve(cS, C @ V).T
    K = A @ L
    innov = y - C @ st.x_pred
    x_filt = st.x_pred + L @ innov
    x_next = A @ st.x_pred + K @ innov + B @ u
    P_next = _sym(A @ V @ A.T - K @ S @ K.T + model.GGT)
    nxt = FilterState(x_next, P_next, V, float(theta), L, K, st.t + 1)
    return x_filt, nxt


def kalman_step(model: LinearModel, st: FilterState, y, u):
    """Standard Kalman filter: returns ``(x[t|t], next_state)``."""
    return _recursion(model, st, y, u, st.P, 0.0)


def robust_step(model: LinearModel, st: FilterState, y, u, c: float, eps: float = 1e-9):
    """KL-robust filter step with per-step ``theta_t`` solving ``gamma(P_t, theta) = c``."""
    theta = solve_theta(st.P, c, eps)
    lam_max = np.linalg.eigvalsh(st.P)[-1]
    assert theta * lam_max < 1.0
    V = inflate(st.P, theta)
    try:
        np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise FilterError(f"least-favorable covariance lost definiteness at step {st.t}") from None
    return _recursion(model, st, y, u, V, theta)


def risk_sensitive_step(model: LinearModel, st: FilterState, y, u, theta_bar: float):
    """Risk-sensitive step, i.e. the robust recursion with a fixed ``theta``."""
    lam_max = np.linalg.eigvalsh(st.P)[-1]
    if theta_bar * lam_max >= 1.0:
        raise RiskParameterTooLarge(
            f"risk parameter too large at step {st.t}: theta_bar*lambda_max(P)={theta_bar * lam_max:.4g}"
        )
    return _recursion(model, st, y, u, inflate(st.P, theta_bar), theta_bar)


def risk_sensitive_tau_step(model: LinearModel, st: FilterState, y, u, theta_bar: float):
    return _recursion(model, st, y, u, tau_divergence_V(st.P, theta_bar), theta_bar)


def filter_step(model: LinearModel, variant: FilterVariant, st: FilterState, y, u):
    if isinstance(variant, Standard):
        return kalman_step(model, st, y, u)
    if isinstance(variant, Robust):
        if variant.c == 0:
            return kalman_step(model, st, y, u)
        return robust_step(model, st, y, u, variant.c)
    if isinstance(variant, RiskSensitive):
        return risk_sensitive_step(model, st, y, u, variant.theta_bar)
    if isinstance(variant, RiskSensitiveTau):
        return risk_sensitive_tau_step(model, st, y, u, variant.theta_bar)
    raise TypeError(f"unknown filter variant {variant!r}")


# -- static least-favorable problem ------------------------------------------


@dataclass(frozen=True)
class StaticRobustSolution:
    gain: np.ndarray
    offset: np.ndarray
    P: np.ndarray
    V: np.ndarray
    theta: float
    nominal: GaussianBelief
    tilde: GaussianBelief

    def estimate(self, y) -> np.ndarray:
        return self.offset + self.gain @ np.atleast_1d(y)


def static_robust_update(m_x, m_y, K_x, K_xy, K_y, c: float, eps: float = 1e-12) -> StaticRobustSolution:
    """Least-favorable joint density of ``z = [x; y]`` in a KL ball of radius ``c``.

    The estimator is the nominal Bayes estimator. The least-favorable density
    keeps the mean and the ``y`` blocks, and replaces the ``x`` block so that
    the posterior covariance becomes ``V = (P^-1 - theta I)^-1``. For Gaussians
    ``D(tilde || nominal) = gamma(P, theta) / 2``, so ``theta`` solves
    ``gamma = 2c``.
    """
    m_x = np.atleast_1d(np.asarray(m_x, dtype=float))
    m_y = np.atleast_1d(np.asarray(m_y, dtype=float))
    K_x, K_xy, K_y = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (K_x, K_xy, K_y))
    try:
        cy = scipy.linalg.cho_factor(K_y, lower=True)
    except np.linalg.LinAlgError:
        raise FilterError("K_y is singular") from None
    gain = scipy.linalg.cho_solve(cy, K_xy.T).T
    reduction = _sym(gain @ K_xy.T)
    P = _sym(K_x - reduction)
    if c == 0:
        theta, V = 0.0, P.copy()
    else:
        theta = solve_theta(P, 2.0 * c, eps)
        V = inflate(P, theta)
    mean = np.concatenate([m_x, m_y])
    K = np.block([[K_x, K_xy], [K_xy.T, K_y]])
    Kt = np.block([[V + reduction, K_xy], [K_xy.T, K_y]])
    return StaticRobustSolution(
        gain, m_x - gain @ m_y, P, V, theta, GaussianBelief(mean, K), GaussianBelief(mean.copy(), Kt)
    )


# -- steady state ------------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    P: np.ndarray
    V: np.ndarray
    theta: float
    L: np.ndarray
    K: np.ndarray
    converged: bool
    iterations: int
    spectral_radius: float


def steady_state(
    model: LinearModel,
    variant: FilterVariant,
    P0: np.ndarray,
    max_iters: int = 5000,
    tol: float = 1e-10,
) -> SteadyState:
    """Iterate the covariance recursion of ``variant`` to a fixed point.

    Non-convergence is reported through ``converged`` rather than raised.
    Errors from the per-step recursion (tolerance or risk parameter out of
    range) propagate.
    """
    if not is_reachable(model.A, model.G):
        warnings.warn("(A, G) is not reachable; convergence is not guaranteed", stacklevel=2)
    if not is_observable(model.A, model.C):
        warnings.warn("(A, C) is not observable; convergence is not guaranteed", stacklevel=2)
    st = FilterState.initial(np.zeros(model.n), P0, model.p)
    y, u = np.zeros(model.p), np.zeros(model.q)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        _, nxt = filter_step(model, variant, st, y, u)
        delta = np.max(np.abs(nxt.P - st.P))
        st = nxt
        if not np.all(np.isfinite(st.P)):
            break
        if delta < tol:
            converged = True
            break
    rho = float(np.max(np.abs(np.linalg.eigvals(model.A - st.K @ model.C))))
    return SteadyState(st.P, st.V, st.theta, st.L, st.K, converged, it, rho)


# -- tolerance heuristic -----------------------------------------------------


def one_step_joint(model: LinearModel, x_pred, P, u) -> GaussianBelief:
    """Density of ``z_t = [x_{t+1}; y_t]`` given past outputs under ``model``."""
    x_pred = np.atleast_1d(np.asarray(x_pred, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    A, C, G, D = model.A, model.C, model.G, model.D
    mean = np.concatenate([A @ x_pred + model.B @ u, C @ x_pred])
    AC = np.vstack([A, C])
    GD = np.vstack([G, D])
    return GaussianBelief(mean, _sym(AC @ P @ AC.T + GD @ GD.T))


def suggest_tolerance(
    pairs: Sequence[tuple[GaussianBelief, GaussianBelief]], t_max: int | None = None
) -> float:
    """Initial guess for ``c``: mean of ``D(actual_t || nominal_t)`` for ``t = 1..t_max``."""
    pairs = list(pairs)[:t_max] if t_max is not None else list(pairs)
    if not pairs:
        raise ValueError("empty trajectory")
    return float(np.mean([kl_gaussian(ft, f) for ft, f in pairs]))


# -- traces ------------------------------------------------------------------


def trace_header(n: int) -> list[str]:
    return (
        ["t"]
        + [f"x_pred_{i}" for i in range(n)]
        + [f"P_{i}{i}" for i in range(n)]
        + [f"V_{i}{i}" for i in range(n)]
        + ["theta", "L_norm", "K_norm"]
    )


def trace_row(st: FilterState) -> list[float]:
    return (
        [st.t]
        + list(st.x_pred)
        + list(np.diag(st.P))
        + list(np.diag(st.V))
        + [st.theta, float(np.linalg.norm(st.L)), float(np.linalg.norm(st.K))]
    )


def write_trace_csv(path, states: Iterable[FilterState]) -> None:
    states = list(states)
    if not states:
        raise ValueError("no filter states to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(states[0].x_pred.size))
        for st in states:
            w.writerow([repr(float(v)) if not isinstance(v, int) else v for v in trace_row(st)])
