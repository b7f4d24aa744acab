"""Discrete and continuous linear state-space models.

The discrete model is

    x[t+1] = A x[t] + B u[t] + G v[t]
    y[t]   = C x[t] + D v[t]

with v[t] unit-variance white Gaussian noise shared between the state and
the output equation. Independence of the two noise channels is expressed as
G D^T = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

GD_TOL = 1e-12
SYM_TOL = 1e-10


def _as_matrix(a) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time model ``(A, B, C, D, G)``.

    Dimensions are ``n`` states, ``q`` inputs, ``p`` outputs and ``m`` noise
    channels. Matrices are stored as 2-D float arrays.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in "ABCDG":
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[0], self.G.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def GGT(self) -> np.ndarray:
        return self.G @ self.G.T

    @property
    def DDT(self) -> np.ndarray:
        return self.D @ self.D.T

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in "ABCDG"}
        d["dims"] = dict(zip("nqpm", self.dims))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        model = cls(*(np.array(d[k], dtype=float) for k in "ABCDG"))
        dims = d.get("dims")
        if dims is not None and tuple(dims[k] for k in "nqpm") != model.dims:
            raise ValueError(f"dims {dims} do not match matrices {model.dims}")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time counterpart ``dx = A x dt + B u dt + G dw``, ``y = C x + D w'``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in "ABCDG":
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[0], self.G.shape[1]


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = _as_matrix(self.cov)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_valid(self, strict: bool = False) -> bool:
        """Symmetric and PSD (PD when ``strict``)."""
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > SYM_TOL:
            return False
        lam = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        return bool(lam.min() > 0) if strict else bool(lam.min() >= -SYM_TOL)


def _shape_violations(A, B, C, D, G) -> list[str]:
    out = []
    n = A.shape[0]
    if A.shape != (n, n):
        out.append(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        out.append(f"B has {B.shape[0]} rows, expected {n}")
    if C.shape[1] != n:
        out.append(f"C has {C.shape[1]} columns, expected {n}")
    if D.shape[0] != C.shape[0]:
        out.append(f"D has {D.shape[0]} rows, expected {C.shape[0]}")
    if G.shape[0] != n:
        out.append(f"G has {G.shape[0]} rows, expected {n}")
    if G.shape[1] != D.shape[1]:
        out.append(f"G and D noise widths differ ({G.shape[1]} vs {D.shape[1]})")
    return out


def validate(model: LinearModel) -> list[str]:
    """Return a description of every violated model assumption.

    An empty list means the model is usable by all filters in this package.
    """
    out = _shape_violations(model.A, model.B, model.C, model.D, model.G)
    if out:
        return out
    mats = (model.A, model.B, model.C, model.D, model.G)
    if not all(np.all(np.isfinite(M)) for M in mats):
        out.append("non-finite matrix entries")
        return out
    if np.max(np.abs(model.G @ model.D.T), initial=0.0) > GD_TOL:
        out.append("G·Dᵀ ≠ 0 (state and output noise correlated)")
    DDT = model.DDT
    if DDT.size == 0 or np.linalg.matrix_rank(DDT) < DDT.shape[0]:
        out.append("D·Dᵀ singular")
    return out


def expm(M: np.ndarray) -> np.ndarray:
    E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("matrix exponential overflowed")
    return E


def zoh_discretize(cm: ContinuousModel, T: float) -> LinearModel:
    """Zero-order-hold discretization with sampling time ``T``.

    ``A = exp(A_c T)`` and ``B = int_0^T exp(A_c s) ds B_c`` are read off the
    exponential of the augmented block ``[[A_c, B_c], [0, 0]]``. The noise
    gain becomes ``sqrt(T) G_c`` (variance of a Wiener increment over one
    sample); ``C`` and ``D`` are unchanged.
    """
    if not T > 0:
        raise ValueError(f"sampling time must be positive, got {T}")
    n, q = cm.A.shape[0], cm.B.shape[1]
    M = np.zeros((n + q, n + q))
    M[:n, :n] = cm.A
    M[:n, n:] = cm.B
    E = expm(M * T)
    return LinearModel(E[:n, :n], E[:n, n:], cm.C.copy(), cm.D.copy(), np.sqrt(T) * cm.G)


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def numerical_rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0:
        return 0
    tol = max(M.shape) * s[0] * np.finfo(float).eps
    return int(np.sum(s > tol))


def is_reachable(A: np.ndarray, G: np.ndarray) -> bool:
    return numerical_rank(controllability_matrix(A, G)) == A.shape[0]


def is_observable(A: np.ndarray, C: np.ndarray) -> bool:
    return numerical_rank(controllability_matrix(A.T, C.T)) == A.shape[0]
