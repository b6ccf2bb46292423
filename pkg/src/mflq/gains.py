"""Centralized and decentralized feedback gains.

Both flavors produce a triple (Theta, Theta1, Theta2) so that the control is
u = -Theta x_own - Theta1 aggregate - Theta2, where aggregate is the
empirical average of all agents (centralized) or the mean field limit
process (decentralized).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SingularInverse
from .limit_riccati import LimitSolution, _guarded_inverse, r1, r2
from .model import ModelParams
from .odecore import MatrixTrajectory

PointEval = Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class GainSet:
    """Time-indexed feedback gains plus the auxiliary weight inverses."""

    flavor: str                 # "centralized" or "decentralized"
    N: int | None               # population size for the centralized flavor
    Theta: MatrixTrajectory     # n1 x n
    Theta1: MatrixTrajectory    # n1 x n
    Theta2: MatrixTrajectory    # n1 vector
    aux: dict[str, MatrixTrajectory]
    # exact evaluator wired to the dense Riccati output; the sampled
    # trajectories above are for tabulation and only interpolate linearly
    point: PointEval | None = field(default=None, repr=False)

    def eval(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.point is not None:
            return self.point(t)
        return self.Theta.eval(t), self.Theta1.eval(t), self.Theta2.eval(t)


def _decentralized_at(model: ModelParams, L1: np.ndarray, L2: np.ndarray,
                      S: np.ndarray):
    """Pointwise decentralized gains; returns (Theta, Theta1, Theta2, H, H1)."""
    B, B0, B1, D, D0 = model.B, model.B0, model.B1, model.D, model.D0
    H = _guarded_inverse(r1(model, L1), "R1(Lambda1)")
    H1 = _guarded_inverse(r2(model, L1, L2), "R2(Lambda1, Lambda2)")
    Ehat = H1 - H
    Theta = H @ B.T @ L1
    Theta1 = Ehat @ B.T @ (L1 + L2) + H @ B.T @ L2
    Theta2 = H1 @ (B.T @ S + B1.T @ L1 @ D + B0.T @ (L1 + L2) @ D0)
    return Theta, Theta1, Theta2, H, H1


def _centralized_at(model: ModelParams, N: int, L1: np.ndarray,
                    L2: np.ndarray, S: np.ndarray):
    """Pointwise centralized gains; returns (Theta, Theta1, Theta2, EN, HN)."""
    from .finite_riccati import en_hn

    B, B0, B1, D, D0 = model.B, model.B0, model.B1, model.D, model.D0
    EN, HN = en_hn(model, N, L1, L2)
    Theta = (HN - EN) @ B.T @ (L1 - L2 / N)
    Theta1 = N * EN @ B.T @ L1 + (HN + (N - 2) * EN) @ B.T @ L2
    Theta2 = (HN + (N - 1) * EN) @ (
        B.T @ S + B1.T @ L1 @ D + B0.T @ (L1 + (1 - 1 / N) * L2) @ D0)
    return Theta, Theta1, Theta2, EN, HN


def decentralized_gains(model: ModelParams, limit: LimitSolution) -> GainSet:
    """Gains of the mean-field feedback built from the limiting solution.

    H = R1(L1)^-1, H1 = R2(L1, L2)^-1, Ehat = H1 - H, and
    Theta = H B' L1, Theta1 = Ehat B' (L1+L2) + H B' L2,
    Theta2 = H1 (B' S + B1' L1 D + B0' (L1+L2) D0).
    """
    grid = limit.Lambda1.grid
    n, n1 = model.n, model.n1

    def point(t: float):
        Th, Th1, Th2, _, _ = _decentralized_at(
            model, limit.Lambda1.eval(t), limit.Lambda2.eval(t),
            limit.S.eval(t))
        return Th, Th1, Th2

    theta = np.empty((len(grid), n1, n))
    theta1 = np.empty((len(grid), n1, n))
    theta2 = np.empty((len(grid), n1))
    H_vals = np.empty((len(grid), n1, n1))
    H1_vals = np.empty((len(grid), n1, n1))
    for k, t in enumerate(grid):
        out = _decentralized_at(
            model, limit.Lambda1.eval(t), limit.Lambda2.eval(t),
            limit.S.eval(t))
        theta[k], theta1[k], theta2[k], H_vals[k], H1_vals[k] = out
    aux = {
        "H": MatrixTrajectory(grid=grid, values=H_vals),
        "H1": MatrixTrajectory(grid=grid, values=H1_vals),
        "Ehat": MatrixTrajectory(grid=grid, values=H1_vals - H_vals),
    }
    return GainSet(
        flavor="decentralized", N=None,
        Theta=MatrixTrajectory(grid=grid, values=theta),
        Theta1=MatrixTrajectory(grid=grid, values=theta1),
        Theta2=MatrixTrajectory(grid=grid, values=theta2),
        aux=aux, point=point,
    )


def centralized_gains(model: ModelParams, N: int, finite) -> GainSet:
    """Population-size-aware gains built from the finite-N solution.

    ThetaN  = (HN - EN) B' (L1N - L2N/N)
    Theta1N = N EN B' L1N + (HN + (N-2) EN) B' L2N
    Theta2N = (HN + (N-1) EN) (B' SN + B1' L1N D + B0' (L1N + (1-1/N) L2N) D0)
    """
    grid = finite.Lambda1N.grid
    n, n1 = model.n, model.n1

    def point(t: float):
        Th, Th1, Th2, _, _ = _centralized_at(
            model, N, finite.Lambda1N.eval(t), finite.Lambda2N.eval(t),
            finite.SN.eval(t))
        return Th, Th1, Th2

    theta = np.empty((len(grid), n1, n))
    theta1 = np.empty((len(grid), n1, n))
    theta2 = np.empty((len(grid), n1))
    EN_vals = np.empty((len(grid), n1, n1))
    HN_vals = np.empty((len(grid), n1, n1))
    for k, t in enumerate(grid):
        out = _centralized_at(
            model, N, finite.Lambda1N.eval(t), finite.Lambda2N.eval(t),
            finite.SN.eval(t))
        theta[k], theta1[k], theta2[k], EN_vals[k], HN_vals[k] = out
    aux = {
        "EN": MatrixTrajectory(grid=grid, values=EN_vals),
        "HN": MatrixTrajectory(grid=grid, values=HN_vals),
    }
    return GainSet(
        flavor="centralized", N=N,
        Theta=MatrixTrajectory(grid=grid, values=theta),
        Theta1=MatrixTrajectory(grid=grid, values=theta1),
        Theta2=MatrixTrajectory(grid=grid, values=theta2),
        aux=aux, point=point,
    )


def control_eval(gains: GainSet, t: float, Xi: np.ndarray,
                 aggregate: np.ndarray) -> np.ndarray:
    """Feedback control u = -Theta Xi - Theta1 aggregate - Theta2 at time t."""
    Th, Th1, Th2 = gains.eval(t)
    Xi = np.asarray(Xi, dtype=float).reshape(-1)
    aggregate = np.asarray(aggregate, dtype=float).reshape(-1)
    return -(Th @ Xi) - (Th1 @ aggregate) - Th2
