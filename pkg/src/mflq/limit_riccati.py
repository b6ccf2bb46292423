"""Limiting low-dimensional Riccati system and the solvability verdict.

Solves the coupled pair (Lambda1, Lambda2) backward from T under the strict
positivity of the effective control weights R1(Lambda1) and
R2(Lambda1, Lambda2), then the driven linear pair (S, r). Existence of the
pair on all of [0, T] is the solvability criterion for the N-agent family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolated, SingularInverse
from .model import DerivedWeights, ModelParams, derived_weights, sym
from .odecore import (
    MatrixTrajectory,
    SolveOutcome,
    SolveStatus,
    integrate_backward,
)

_SINGULAR_TOL = 1e-12


def _guarded_inverse(M: np.ndarray, what: str) -> np.ndarray:
    M = np.atleast_2d(M)
    w = np.linalg.eigvalsh(sym(M))
    if np.min(np.abs(w)) < _SINGULAR_TOL:
        raise SingularInverse(f"{what} is numerically singular (|eig|min={np.min(np.abs(w)):.3e})")
    return np.linalg.inv(M)


def r1(model: ModelParams, L1: np.ndarray) -> np.ndarray:
    """Effective individual control weight R + B1' L1 B1."""
    return sym(model.R + model.B1.T @ L1 @ model.B1)


def r2(model: ModelParams, L1: np.ndarray, L2: np.ndarray) -> np.ndarray:
    """Effective aggregate control weight R + B1' L1 B1 + B0' (L1+L2) B0."""
    return sym(r1(model, L1) + model.B0.T @ (L1 + L2) @ model.B0)


def psi1(model: ModelParams, L1: np.ndarray) -> np.ndarray:
    """Riccati field of Lambda1 (forward-time derivative)."""
    A, B, Q = model.A, model.B, model.Q
    R1inv = _guarded_inverse(r1(model, L1), "R1(Lambda1)")
    return sym(L1 @ B @ R1inv @ B.T @ L1 - L1 @ A - A.T @ L1 - Q)


def psi2(model: ModelParams, L1: np.ndarray, L2: np.ndarray,
         derived: DerivedWeights | None = None) -> np.ndarray:
    """Riccati field of Lambda2 (forward-time derivative)."""
    if derived is None:
        derived = derived_weights(model)
    A, B, G = model.A, model.B, model.G
    L3 = L1 + L2
    R1inv = _guarded_inverse(r1(model, L1), "R1(Lambda1)")
    R2inv = _guarded_inverse(r2(model, L1, L2), "R2(Lambda1, Lambda2)")
    quad = L3 @ B @ R2inv @ B.T @ L3 - L1 @ B @ R1inv @ B.T @ L1
    cross = L1 @ G + L2 @ (A + G)
    return sym(quad - cross - cross.T - derived.QGamma)


def phi1(model: ModelParams, L1: np.ndarray, L2: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Field of the offset vector S driven by (Lambda1, Lambda2)."""
    A, B, G = model.A, model.B, model.G
    R2inv = _guarded_inverse(r2(model, L1, L2), "R2(Lambda1, Lambda2)")
    forcing = B.T @ S + model.B1.T @ L1 @ model.D + model.B0.T @ (L1 + L2) @ model.D0
    return (L1 + L2) @ B @ R2inv @ forcing - (A + G).T @ S


def phi2(model: ModelParams, L1: np.ndarray, L2: np.ndarray, S: np.ndarray) -> float:
    """Field of the scalar offset r driven by (Lambda1, Lambda2, S)."""
    B = model.B
    R2inv = _guarded_inverse(r2(model, L1, L2), "R2(Lambda1, Lambda2)")
    forcing = B.T @ S + model.B1.T @ L1 @ model.D + model.B0.T @ (L1 + L2) @ model.D0
    out = forcing @ R2inv @ forcing - model.D @ L1 @ model.D \
        - model.D0 @ (L1 + L2) @ model.D0
    return float(out)


@dataclass
class LimitSolution:
    """Solved limiting system with positivity margins along the grid."""

    Lambda1: MatrixTrajectory
    Lambda2: MatrixTrajectory
    Lambda3: MatrixTrajectory
    S: MatrixTrajectory
    r: MatrixTrajectory
    min_eig_R1: MatrixTrajectory
    min_eig_R2: MatrixTrajectory
    terminal_linear: np.ndarray


@dataclass(frozen=True)
class SolvabilityVerdict:
    solvable: bool
    reason: str | None = None
    failure_time: float | None = None
    failed_constraint: str | None = None


def solve_limit(
    model: ModelParams,
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> SolveOutcome:
    """Solve (Lambda1, Lambda2) jointly, then (S, r); verdict on failure.

    terminal_linear is the weight K of an optional linear terminal cost
    2 K' X_i(T); it sets S(T) = K and defaults to zero.
    """
    derived = derived_weights(model)
    n = model.n
    K = np.zeros(n) if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(n)

    def riccati_rhs(t, blocks):
        L1, L2 = blocks["Lambda1"], blocks["Lambda2"]
        return {
            "Lambda1": psi1(model, L1),
            "Lambda2": psi2(model, L1, L2, derived),
        }

    outcome = integrate_backward(
        riccati_rhs,
        {"Lambda1": model.QF, "Lambda2": derived.QGammaF},
        model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[
            ("R1", lambda b: r1(model, b["Lambda1"])),
            ("R2", lambda b: r2(model, b["Lambda1"], b["Lambda2"])),
        ],
        symmetric=("Lambda1", "Lambda2"),
    )
    if not outcome.ok:
        return outcome

    L1_traj = outcome.trajectories["Lambda1"]
    L2_traj = outcome.trajectories["Lambda2"]

    def linear_rhs(t, blocks):
        L1, L2 = L1_traj.eval(t), L2_traj.eval(t)
        S = blocks["S"]
        return {
            "S": phi1(model, L1, L2, S),
            "r": np.array(phi2(model, L1, L2, S)),
        }

    linear = integrate_backward(
        linear_rhs,
        {"S": K, "r": np.array(0.0)},
        model.T,
        rtol=rtol, atol=atol,
        follow_grid=outcome.grid,
    )
    if not linear.ok:
        return linear

    grid = outcome.grid
    lam3 = MatrixTrajectory(
        grid=grid,
        values=L1_traj.values + L2_traj.values,
        _dense=None, _spec=None)
    # Use dense interpolation from the parts for off-node evaluation.
    lam3.eval = lambda t, _a=L1_traj, _b=L2_traj: _a.eval(t) + _b.eval(t)  # type: ignore[method-assign]
    sol = LimitSolution(
        Lambda1=L1_traj,
        Lambda2=L2_traj,
        Lambda3=lam3,
        S=linear.trajectories["S"],
        r=linear.trajectories["r"],
        min_eig_R1=MatrixTrajectory(grid=grid, values=outcome.margins["R1"]),
        min_eig_R2=MatrixTrajectory(grid=grid, values=outcome.margins["R2"]),
        terminal_linear=K,
    )
    outcome.trajectories["S"] = sol.S
    outcome.trajectories["r"] = sol.r
    outcome.trajectories["Lambda3"] = lam3
    outcome.solution = sol
    return outcome


def solve_limit_lambda3(model: ModelParams, *, rtol: float = 1e-8,
                        atol: float = 1e-10) -> SolveOutcome:
    """Solve the equivalent (Lambda1, Lambda3) parametrization directly.

    Provided as a cross-check of solve_limit: Lambda3 := Lambda1 + Lambda2
    obeys its own Riccati flow with weight Q3 and terminal Q3F.
    """
    derived = derived_weights(model)
    A, B, G = model.A, model.B, model.G
    AG = A + G

    def rhs(t, blocks):
        L1, L3 = blocks["Lambda1"], blocks["Lambda3"]
        R3 = sym(model.R + model.B1.T @ L1 @ model.B1 + model.B0.T @ L3 @ model.B0)
        R3inv = _guarded_inverse(R3, "R2(Lambda1, Lambda3-Lambda1)")
        dL3 = L3 @ B @ R3inv @ B.T @ L3 - L3 @ AG - AG.T @ L3 - derived.Q3
        return {"Lambda1": psi1(model, L1), "Lambda3": sym(dL3)}

    return integrate_backward(
        rhs,
        {"Lambda1": model.QF, "Lambda3": derived.Q3F},
        model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[
            ("R1", lambda b: r1(model, b["Lambda1"])),
            ("R2", lambda b: sym(model.R + model.B1.T @ b["Lambda1"] @ model.B1
                                 + model.B0.T @ b["Lambda3"] @ model.B0)),
        ],
        symmetric=("Lambda1", "Lambda3"),
    )


def asymptotic_solvability(model: ModelParams, *, rtol: float = 1e-8,
                           atol: float = 1e-10) -> SolvabilityVerdict:
    """Yes iff the limiting pair exists on [0, T] with positive weights."""
    outcome = solve_limit(model, rtol=rtol, atol=atol)
    if outcome.ok:
        return SolvabilityVerdict(solvable=True)
    return SolvabilityVerdict(
        solvable=False,
        reason=outcome.failure_reason(),
        failure_time=outcome.failure_time,
        failed_constraint=outcome.failed_constraint,
    )


@dataclass(frozen=True)
class ProbeReport:
    holds_for_Lambda1: bool
    holds_for_Lambda3: bool
    margins: dict


def sufficient_probe(model: ModelParams, K: np.ndarray, *, rtol: float = 1e-8,
                     atol: float = 1e-10) -> ProbeReport:
    """Sufficient solvability test against a constant comparison weight K.

    Requires Q >= 0 and QF >= 0 and K > 0. Solves the standard Riccati
    comparison flows with K in place of the effective weight and checks that
    the actual effective weights dominate K pointwise.
    """
    derived = derived_weights(model)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if np.linalg.eigvalsh(sym(model.Q))[0] < -1e-10:
        raise PreconditionViolated("probe requires Q >= 0")
    if np.linalg.eigvalsh(sym(model.QF))[0] < -1e-10:
        raise PreconditionViolated("probe requires QF >= 0")
    if np.linalg.eigvalsh(sym(K))[0] <= 0:
        raise PreconditionViolated("probe requires K > 0")

    A, B, G = model.A, model.B, model.G
    Kinv = _guarded_inverse(K, "K")
    margins: dict[str, float] = {}

    def tilde_rhs(Qw, Aw):
        def rhs(t, blocks):
            L = blocks["L"]
            return {"L": sym(L @ B @ Kinv @ B.T @ L - L @ Aw - Aw.T @ L - Qw)}
        return rhs

    tilde1 = integrate_backward(
        tilde_rhs(model.Q, A), {"L": model.QF}, model.T,
        rtol=rtol, atol=atol, symmetric=("L",))
    holds1 = False
    if tilde1.ok:
        traj = tilde1.trajectories["L"]
        m = min(
            float(np.linalg.eigvalsh(sym(model.R + model.B1.T @ L @ model.B1) - K)[0])
            for L in traj.values
        )
        margins["Lambda1"] = m
        holds1 = m >= -1e-10
    else:
        margins["Lambda1"] = float("nan")

    # Second stage needs the actual Lambda1 flow.
    lam1 = integrate_backward(
        lambda t, b: {"L": psi1(model, b["L"])},
        {"L": model.QF}, model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[("R1", lambda b: r1(model, b["L"]))],
        symmetric=("L",))
    tilde3 = integrate_backward(
        tilde_rhs(derived.Q3, A + G), {"L": derived.Q3F}, model.T,
        rtol=rtol, atol=atol, symmetric=("L",))
    holds3 = False
    if tilde3.ok and lam1.ok:
        traj3 = tilde3.trajectories["L"]
        lam1_traj = lam1.trajectories["L"]
        m = min(
            float(np.linalg.eigvalsh(
                sym(model.R + model.B1.T @ lam1_traj.eval(t) @ model.B1
                    + model.B0.T @ traj3.eval(t) @ model.B0) - K)[0])
            for t in traj3.grid
        )
        margins["Lambda3"] = m
        holds3 = m >= -1e-10
    else:
        margins["Lambda3"] = float("nan")

    return ProbeReport(holds_for_Lambda1=holds1, holds_for_Lambda3=holds3,
                       margins=margins)


def interpretation_gains(model: ModelParams, limit: LimitSolution
                         ) -> tuple[MatrixTrajectory, MatrixTrajectory]:
    """Single-agent reading of the limiting solution as feedback maps.

    Returns g1(t) = (R + B1' L1 B1)^{-1} B' L1 and
    g2(t) = (R + B1' L1 B1 + B0' L3 B0)^{-1} B' L3.

    Note: these are reported with a leading plus sign, matching their source
    presentation, although every closed-loop control elsewhere in this
    library enters with a minus sign (u = -Theta x - ...). Callers composing
    a stabilizing control from g1/g2 almost certainly want the negated maps;
    g1 coincides with the decentralized gain Theta.
    """
    grid = limit.Lambda1.grid
    g1_vals = np.empty((len(grid), model.n1, model.n))
    g2_vals = np.empty((len(grid), model.n1, model.n))
    for k, t in enumerate(grid):
        L1 = limit.Lambda1.eval(t)
        L3 = limit.Lambda3.eval(t)
        R1inv = _guarded_inverse(r1(model, L1), "R1(Lambda1)")
        R3 = sym(model.R + model.B1.T @ L1 @ model.B1 + model.B0.T @ L3 @ model.B0)
        R3inv = _guarded_inverse(R3, "R2(Lambda1, Lambda3-Lambda1)")
        g1_vals[k] = R1inv @ model.B.T @ L1
        g2_vals[k] = R3inv @ model.B.T @ L3
    return (MatrixTrajectory(grid=grid, values=g1_vals),
            MatrixTrajectory(grid=grid, values=g2_vals))
