"""Closed-loop time series and tracking metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def settling_time(y, r: float, band: float = 0.05, T: float = 0.1) -> float | None:
    """First time after which ``|y - r| <= band |r|`` holds until the end.

    Returns ``None`` if the last sample is outside the band.
    """
    if r == 0:
        raise ValueError("settling band is relative to a nonzero reference")
    y = np.asarray(y, dtype=float).ravel()
    outside = np.abs(y - r) > band * abs(r)
    if not outside.any():
        return 0.0
    last = int(np.nonzero(outside)[0][-1])
    if last == y.size - 1:
        return None
    return (last + 1) * T


def mse(y, r, t, window: float = 20.0) -> float:
    """Mean squared tracking error over samples with ``0 < t <= window``."""
    y = np.asarray(y, dtype=float).ravel()
    r = np.broadcast_to(np.asarray(r, dtype=float).ravel(), y.shape)
    t = np.asarray(t, dtype=float)
    sel = (t > 0) & (t <= window + 1e-9)
    if not sel.any():
        raise ValueError("no samples inside the MSE window")
    return float(np.mean((y[sel] - r[sel]) ** 2))


def input_energy(u, T: float) -> float:
    return float(np.sum(np.asarray(u, dtype=float) ** 2) * T)


@dataclass
class ScenarioResult:
    """Per-run signals. Arrays are indexed by sample; ``y``, ``u`` and
    ``x_hat`` are 2-D (samples x channels)."""

    label: str
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    x_hat: np.ndarray
    theta: np.ndarray
    T: float
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.t)

    def mse(self, window: float = 20.0) -> float:
        return mse(self.y[:, 0], self.r[:, 0], self.t, window)

    def settling_time(self, band: float = 0.05) -> float | None:
        return settling_time(self.y[:, 0], float(self.r[-1, 0]), band, self.T)

    def input_energy(self) -> float:
        return input_energy(self.u, self.T)

    def metrics(self, window: float = 20.0, band: float = 0.05) -> dict:
        return {
            "mse": self.mse(window),
            "settling_time": self.settling_time(band),
            "input_energy": self.input_energy(),
        }

    def header(self) -> list[str]:
        n = self.x_hat.shape[1]
        return ["t_seconds", "r", "y", "u", "y_hat", "theta"] + [f"x_hat_{i}" for i in range(n)]

    def rows(self, C: np.ndarray | None = None):
        y_hat = self.x_hat @ C[0] if C is not None else self.x_hat[:, 0]
        for k in range(len(self)):
            yield [
                repr(float(self.t[k])),
                repr(float(self.r[k, 0])),
                repr(float(self.y[k, 0])),
                repr(float(self.u[k, 0])),
                repr(float(y_hat[k])),
                repr(float(self.theta[k])),
            ] + [repr(float(v)) for v in self.x_hat[k]]

    def to_csv(self, path, C: np.ndarray | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows(C))
