"""Unconstrained receding-horizon control and the closed-loop driver.

Stacked predictions over ``Hp`` steps are ``Y = Psi x + Theta U`` and the
first block of the unconstrained minimizer of

    ||Theta U - (r - Psi x)||_Q^2 + ||U||_R^2

is applied. With ``cost="increment"`` the decision variable is the sequence
of input moves, the input is held after the control horizon, and the free
response gets the extra term ``Upsilon u_prev``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
import scipy.linalg

from .filters import FilterError, FilterState, FilterVariant, filter_step
from .model import LinearModel
from .results import ScenarioResult

THETA_CONVENTIONS = ("toeplitz_zero_tail", "held_input")
COSTS = ("input", "increment")


def _weight(W, k: int) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape == (1, 1) and k > 1:
        return W[0, 0] * np.eye(k)
    return W


@dataclass(frozen=True)
class MpcConfig:
    """Horizons and per-step weights.

    ``Q`` and ``R`` are either scalars (applied to every output/input
    channel) or ``p x p`` / ``q x q`` matrices.
    """

    Hp: int = 10
    Hu: int = 3
    Q: float | np.ndarray = 0.1
    R: float | np.ndarray = 0.1
    theta_convention: str = "toeplitz_zero_tail"
    cost: str = "input"

    def __post_init__(self):
        if not 1 <= self.Hu <= self.Hp:
            raise ValueError(f"need 1 <= Hu <= Hp, got Hp={self.Hp}, Hu={self.Hu}")
        if self.theta_convention not in THETA_CONVENTIONS:
            raise ValueError(f"unknown theta_convention {self.theta_convention!r}")
        if self.cost not in COSTS:
            raise ValueError(f"unknown cost {self.cost!r}")
        Q, R = np.atleast_2d(self.Q), np.atleast_2d(self.R)
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < 0:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
            raise ValueError("R must be positive definite")

    def to_dict(self) -> dict:
        return {
            "Hp": self.Hp,
            "Hu": self.Hu,
            "Q": np.asarray(self.Q).tolist(),
            "R": np.asarray(self.R).tolist(),
            "theta_convention": self.theta_convention,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        return cls(
            int(d["Hp"]),
            int(d["Hu"]),
            np.asarray(d["Q"], dtype=float) if isinstance(d["Q"], list) else float(d["Q"]),
            np.asarray(d["R"], dtype=float) if isinstance(d["R"], list) else float(d["R"]),
            d.get("theta_convention", "toeplitz_zero_tail"),
            d.get("cost", "input"),
        )


@dataclass(frozen=True)
class PredictorMatrices:
    Psi: np.ndarray
    Theta: np.ndarray
    Qblk: np.ndarray
    Rblk: np.ndarray
    gain: np.ndarray  # q x (p*Hp): [I 0 ...](Theta'Q Theta + R)^-1 Theta'Q
    Upsilon: np.ndarray | None = None  # (p*Hp) x q, increment cost only
    cost: str = "input"
    dims: tuple[int, int, int] = field(default=(0, 0, 0))  # (n, q, p)

    @property
    def gain_row(self) -> np.ndarray:
        """State feedback part ``gain @ Psi`` (q x n)."""
        return self.gain @ self.Psi

    @property
    def Hp(self) -> int:
        return self.Psi.shape[0] // self.dims[2]


def build_predictor(model: LinearModel, cfg: MpcConfig) -> PredictorMatrices:
    A, B, C = model.A, model.B, model.C
    n, q, p = model.n, model.q, model.p
    Hp, Hu = cfg.Hp, cfg.Hu

    CA = [C]  # C A^k for k = 0..Hp
    for _ in range(Hp):
        CA.append(CA[-1] @ A)
    Psi = np.vstack(CA[1:])
    step = [CA[k] @ B for k in range(Hp)]  # C A^k B
    cum = np.cumsum(np.stack(step), axis=0)  # sum_{k<=i} C A^k B

    Theta = np.zeros((p * Hp, q * Hu))
    for i in range(Hp):
        rows = slice(i * p, (i + 1) * p)
        for j in range(min(i + 1, Hu)):
            cols = slice(j * q, (j + 1) * q)
            if cfg.cost == "increment":
                Theta[rows, cols] = cum[i - j]
            elif cfg.theta_convention == "held_input" and j == Hu - 1:
                Theta[rows, cols] = cum[i - j]
            else:
                Theta[rows, cols] = step[i - j]
    Upsilon = np.vstack(list(cum)) if cfg.cost == "increment" else None

    Qblk = scipy.linalg.block_diag(*[_weight(cfg.Q, p)] * Hp)
    Rblk = scipy.linalg.block_diag(*[_weight(cfg.R, q)] * Hu)
    H = Theta.T @ Qblk @ Theta + Rblk
    H = 0.5 * (H + H.T)
    cH = scipy.linalg.cho_factor(H)
    gain = scipy.linalg.cho_solve(cH, Theta.T @ Qblk)[:q]
    return PredictorMatrices(Psi, Theta, Qblk, Rblk, gain, Upsilon, cfg.cost, (n, q, p))


def control_law(pm: PredictorMatrices, x_filt, refs, u_prev=None) -> np.ndarray:
    """First input of the receding-horizon solution.

    ``refs`` is the stacked window ``[r_{t+1}; ...; r_{t+Hp}]``. ``u_prev``
    (the previously applied input) is required for the increment cost.
    """
    x_filt = np.atleast_1d(np.asarray(x_filt, dtype=float))
    refs = np.asarray(refs, dtype=float).ravel()
    if refs.size != pm.Psi.shape[0]:
        raise ValueError(f"reference window has {refs.size} entries, expected {pm.Psi.shape[0]}")
    if x_filt.size != pm.Psi.shape[1]:
        raise ValueError(f"state has {x_filt.size} entries, expected {pm.Psi.shape[1]}")
    err = refs - pm.Psi @ x_filt
    if pm.cost == "increment":
        if u_prev is None:
            raise ValueError("increment cost needs the previous input")
        u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
        return u_prev + pm.gain @ (err - pm.Upsilon @ u_prev)
    return pm.gain @ err


def reference_window(refs: np.ndarray, t: int, Hp: int) -> np.ndarray:
    """``[r_{t+1}; ...; r_{t+Hp}]``, holding the last reference past the end."""
    refs = np.asarray(refs, dtype=float)
    if refs.ndim == 1:
        refs = refs[:, None]
    idx = np.minimum(np.arange(t + 1, t + Hp + 1), len(refs) - 1)
    return refs[idx].ravel()


class Plant(Protocol):
    def measure(self) -> np.ndarray: ...

    def apply(self, u: np.ndarray) -> None: ...


class ClosedLoopError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"closed loop aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class LinearPlant:
    """Plant that is itself a discrete linear model driven by unit Gaussian noise.

    ``noise_scale`` multiplies the noise; 0 gives a deterministic plant.
    """

    model: LinearModel
    x: np.ndarray
    rng: np.random.Generator
    noise_scale: float = 1.0
    _v: np.ndarray | None = None

    def _noise(self) -> np.ndarray:
        if self._v is None:
            m = self.model.m
            self._v = self.noise_scale * self.rng.standard_normal(m) if self.noise_scale else np.zeros(m)
        return self._v

    def measure(self) -> np.ndarray:
        return self.model.C @ self.x + self.model.D @ self._noise()

    def apply(self, u) -> None:
        v = self._noise()
        self.x = self.model.A @ self.x + self.model.B @ np.atleast_1d(u) + self.model.G @ v
        self._v = None

    @property
    def state(self) -> np.ndarray:
        return self.x


def closed_loop(
    plant: Plant,
    model: LinearModel,
    cfg: MpcConfig,
    variant: FilterVariant,
    refs: np.ndarray,
    steps: int,
    init: FilterState,
    T: float = 1.0,
    predictor: PredictorMatrices | None = None,
    label: str = "",
) -> ScenarioResult:
    """Run estimator + MPC against ``plant`` for ``steps`` samples.

    Each step measures ``y_t``, updates the estimate, computes ``u_t`` from
    the filtered state, applies it, and advances the filter prediction with
    the applied input.
    """
    pm = predictor if predictor is not None else build_predictor(model, cfg)
    refs = np.asarray(refs, dtype=float)
    refs2 = refs[:, None] if refs.ndim == 1 else refs
    n, q, p = model.n, model.q, model.p
    Y = np.zeros((steps, p))
    U = np.zeros((steps, q))
    Xf = np.zeros((steps, n))
    theta = np.zeros(steps)
    st = init
    u_prev = np.zeros(q)
    for t in range(steps):
        try:
            y = np.atleast_1d(plant.measure())
            # u_t enters the predictor only through B u_t, added once known
            x_filt, nxt = filter_step(model, variant, st, y, np.zeros(q))
            u = control_law(pm, x_filt, reference_window(refs2, t, pm.Hp), u_prev)
            nxt = replace(nxt, x_pred=nxt.x_pred + model.B @ u)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError("non-finite control input")
            plant.apply(u)
        except (FilterError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ClosedLoopError(t, exc) from exc
        Y[t], U[t], Xf[t], theta[t] = y, u, x_filt, nxt.theta
        st = nxt
        u_prev = u
    r = np.array([refs2[min(t, len(refs2) - 1)] for t in range(steps)])
    return ScenarioResult(
        label=label,
        t=np.arange(steps) * T,
        r=r,
        y=Y,
        u=U,
        x_hat=Xf,
        theta=theta,
        T=T,
    )
