"""Finite-population rescaled Riccati systems and the closed-loop cost check.

Two backward systems live here. The first is the nonlinear pair
(Lambda1N, Lambda2N) with O(1/N) perturbations g1/g2 plus its driven linear
offsets (SN, rN); it encodes the centralized optimum at population size N in
n-dimensional variables. The second is the seven-unknown linear "check"
system (cLambda1N ... crN) that prices the decentralized feedback inside the
N-agent game; its coefficients are the decentralized gains evaluated along a
solved limiting system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gains import decentralized_gains
from .limit_riccati import (
    LimitSolution,
    _guarded_inverse,
    phi1,
    phi2,
    psi1,
    psi2,
    r1,
    r2,
    solve_limit,
)
from .model import DerivedWeights, ModelParams, derived_weights, sym
from .odecore import (
    MatrixTrajectory,
    SolveOutcome,
    integrate_backward,
    sup_distance,
)


def en_hn(model: ModelParams, N: int, L1: np.ndarray, L2: np.ndarray
          ) -> tuple[np.ndarray, np.ndarray]:
    """Correction pair (EN, HN) entering the inverse effective weight.

    EN = (1/N) { [R2(L1,L2) - (1/N) B0' L2 B0]^-1 - R1(L1)^-1 },
    HN = EN + R1(L1)^-1. EN is O(1/N) and symmetric.
    """
    B0 = model.B0
    inv_r2n = _guarded_inverse(
        r2(model, L1, L2) - (B0.T @ L2 @ B0) / N,
        "R2(L1,L2) - (1/N) B0' L2 B0")
    inv_r1 = _guarded_inverse(r1(model, L1), "R1(L1)")
    EN = (inv_r2n - inv_r1) / N
    return EN, EN + inv_r1


def xi_n(model: ModelParams, N: int, L1: np.ndarray, L2: np.ndarray
         ) -> np.ndarray:
    """Cancellation-free form of N EN + R1^-1 - R2^-1.

    The literal difference subtracts O(1) matrices to produce an O(1/N)
    result; this equivalent product keeps full relative accuracy.
    """
    B0 = model.B0
    inv_a = _guarded_inverse(
        r2(model, L1, (1.0 - 1.0 / N) * L2), "R2(L1, (1-1/N) L2)")
    inv_b = _guarded_inverse(r2(model, L1, L2), "R2(L1,L2)")
    return sym(inv_a @ (B0.T @ L2 @ B0) @ inv_b / N)


def g1_g2(model: ModelParams, N: int, L1: np.ndarray, L2: np.ndarray,
          derived: DerivedWeights | None = None
          ) -> tuple[np.ndarray, np.ndarray]:
    """O(1/N) perturbations of the rescaled pair (Lambda1N, Lambda2N)."""
    if derived is None:
        derived = derived_weights(model)
    B, G = model.B, model.G
    EN, HN = en_hn(model, N, L1, L2)
    BEB = B @ EN @ B.T
    inv_r1 = _guarded_inverse(r1(model, L1), "R1(L1)")
    g1 = (L1 @ BEB @ L1
          + (1.0 - 1.0 / N) * (L2 @ BEB @ L1 + L1 @ BEB @ L2)
          + (1.0 / N - 1.0 / N**2) * (L2 @ B @ (HN + (N - 2) * EN) @ B.T @ L2)
          - (1.0 / N) * ((L1 @ G + G.T @ L1)
                         + (1.0 - 1.0 / N) * (L2 @ G + G.T @ L2))
          - derived.QGamma / N)
    L3 = L1 + L2
    g2 = (L3 @ B @ xi_n(model, N, L1, L2) @ B.T @ L3
          - (2.0 / N) * (L2 @ B @ inv_r1 @ B.T @ L2)
          + (1.0 / N - 2.0) * (L2 @ BEB @ L2)
          - L1 @ BEB @ L2 - L2 @ BEB @ L1
          + (L2 @ G + G.T @ L2) / N)
    return sym(g1), sym(g2)


def _g01(model: ModelParams, N: int, L1: np.ndarray, L2: np.ndarray,
         S: np.ndarray) -> np.ndarray:
    """O(1/N) perturbation of the SN field."""
    B, B0, B1, D, D0 = model.B, model.B0, model.B1, model.D, model.D0
    Lw = L1 + (1.0 - 1.0 / N) * L2
    inv_r2n = _guarded_inverse(
        r2(model, L1, L2) - (B0.T @ L2 @ B0) / N,
        "R2(L1,L2) - (1/N) B0' L2 B0")
    inv_r2 = _guarded_inverse(r2(model, L1, L2), "R2(L1,L2)")
    fw = B.T @ S + B1.T @ L1 @ D + B0.T @ Lw @ D0
    ff = B.T @ S + B1.T @ L1 @ D + B0.T @ (L1 + L2) @ D0
    return Lw @ B @ inv_r2n @ fw - (L1 + L2) @ B @ inv_r2 @ ff


def _g02(model: ModelParams, N: int, L1: np.ndarray, L2: np.ndarray,
         S: np.ndarray) -> float:
    """O(1/N) perturbation of the rN field."""
    B, B0, B1, D, D0 = model.B, model.B0, model.B1, model.D, model.D0
    Lw = L1 + (1.0 - 1.0 / N) * L2
    inv_r2n = _guarded_inverse(
        r2(model, L1, L2) - (B0.T @ L2 @ B0) / N,
        "R2(L1,L2) - (1/N) B0' L2 B0")
    inv_r2 = _guarded_inverse(r2(model, L1, L2), "R2(L1,L2)")
    fw = B.T @ S + B1.T @ L1 @ D + B0.T @ Lw @ D0
    ff = B.T @ S + B1.T @ L1 @ D + B0.T @ (L1 + L2) @ D0
    return float(fw @ inv_r2n @ fw - ff @ inv_r2 @ ff
                 + (D0 @ L2 @ D0) / N)


@dataclass
class FiniteSolution:
    """Solved population-N rescaled system with its weight corrections."""

    N: int
    Lambda1N: MatrixTrajectory
    Lambda2N: MatrixTrajectory
    SN: MatrixTrajectory
    rN: MatrixTrajectory
    EN: MatrixTrajectory
    HN: MatrixTrajectory
    min_eig_R1: MatrixTrajectory
    min_eig_R2: MatrixTrajectory
    min_eig_R2N: MatrixTrajectory
    terminal_linear: np.ndarray


def solve_finite(
    model: ModelParams,
    N: int,
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> SolveOutcome:
    """Solve (Lambda1N, Lambda2N) under three positivity constraints, then (SN, rN).

    terminal_linear is the weight K of an optional linear terminal cost
    2 K' X_i(T); it sets SN(T) = K and defaults to zero.
    """
    if N < 1:
        raise ValueError(f"population size must be >= 1, got {N}")
    derived = derived_weights(model)
    B0 = model.B0
    K = np.zeros(model.n) if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(model.n)

    def riccati_rhs(t, blocks):
        L1, L2 = blocks["Lambda1N"], blocks["Lambda2N"]
        G1, G2 = g1_g2(model, N, L1, L2, derived)
        return {
            "Lambda1N": psi1(model, L1) + G1,
            "Lambda2N": psi2(model, L1, L2, derived) + G2,
        }

    outcome = integrate_backward(
        riccati_rhs,
        {"Lambda1N": sym(model.QF + derived.QGammaF / N),
         "Lambda2N": derived.QGammaF.copy()},
        model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[
            ("R1", lambda b: r1(model, b["Lambda1N"])),
            ("R2", lambda b: r2(model, b["Lambda1N"], b["Lambda2N"])),
            ("R2N", lambda b: r2(model, b["Lambda1N"], b["Lambda2N"])
             - (B0.T @ b["Lambda2N"] @ B0) / N),
        ],
        symmetric=("Lambda1N", "Lambda2N"),
    )
    if not outcome.ok:
        return outcome

    L1_traj = outcome.trajectories["Lambda1N"]
    L2_traj = outcome.trajectories["Lambda2N"]

    def linear_rhs(t, blocks):
        L1, L2 = L1_traj.eval(t), L2_traj.eval(t)
        S = blocks["SN"]
        return {
            "SN": phi1(model, L1, L2, S) + _g01(model, N, L1, L2, S),
            "rN": np.array(phi2(model, L1, L2, S) + _g02(model, N, L1, L2, S)),
        }

    linear = integrate_backward(
        linear_rhs,
        {"SN": K, "rN": np.array(0.0)},
        model.T,
        rtol=rtol, atol=atol,
        follow_grid=outcome.grid,
    )
    if not linear.ok:
        return linear

    grid = outcome.grid
    en_vals = np.empty((len(grid), model.n1, model.n1))
    hn_vals = np.empty((len(grid), model.n1, model.n1))
    for k, t in enumerate(grid):
        en_vals[k], hn_vals[k] = en_hn(model, N, L1_traj.eval(t),
                                       L2_traj.eval(t))
    sol = FiniteSolution(
        N=N,
        Lambda1N=L1_traj,
        Lambda2N=L2_traj,
        SN=linear.trajectories["SN"],
        rN=linear.trajectories["rN"],
        EN=MatrixTrajectory(grid=grid, values=en_vals),
        HN=MatrixTrajectory(grid=grid, values=hn_vals),
        min_eig_R1=MatrixTrajectory(grid=grid, values=outcome.margins["R1"]),
        min_eig_R2=MatrixTrajectory(grid=grid, values=outcome.margins["R2"]),
        min_eig_R2N=MatrixTrajectory(grid=grid, values=outcome.margins["R2N"]),
        terminal_linear=K,
    )
    outcome.trajectories["SN"] = sol.SN
    outcome.trajectories["rN"] = sol.rN
    outcome.solution = sol
    return outcome


@dataclass
class CheckSolution:
    """Decentralized-control cost decomposition at population size N.

    cLambda12N is genuinely non-symmetric and is stored as integrated.
    """

    N: int
    cLambda1N: MatrixTrajectory
    cLambda2N: MatrixTrajectory
    cLambda12N: MatrixTrajectory
    cLambda22N: MatrixTrajectory
    cS1N: MatrixTrajectory
    cS2N: MatrixTrajectory
    crN: MatrixTrajectory
    terminal_linear: np.ndarray


def solve_check(
    model: ModelParams,
    N: int,
    limit: LimitSolution,
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> SolveOutcome:
    """Integrate the seven linear ODEs pricing the decentralized feedback.

    The coefficients are the decentralized gains along the given limiting
    solution; being linear, the system needs no positivity constraints.
    terminal_linear sets cS1N(T) = K and defaults to the limit's own linear
    terminal weight so the two stay consistent.
    """
    if N < 1:
        raise ValueError(f"population size must be >= 1, got {N}")
    derived = derived_weights(model)
    A, B, B0, B1 = model.A, model.B, model.B0, model.B1
    D, D0, G, Q = model.D, model.D0, model.G, model.Q
    AG = A + G
    K = np.asarray(limit.terminal_linear, dtype=float).reshape(model.n) \
        if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(model.n)
    gains = decentralized_gains(model, limit)

    def rhs(t, blocks):
        L1c, L2c = blocks["cLambda1N"], blocks["cLambda2N"]
        L12c, L22c = blocks["cLambda12N"], blocks["cLambda22N"]
        S1c, S2c = blocks["cS1N"], blocks["cS2N"]
        Th, Th1, Th2 = gains.eval(t)
        Z0 = -B0 @ (Th + Th1)
        Z1 = AG - B @ (Th + Th1)
        R1c = r1(model, L1c)
        R2c = r2(model, L1c, L2c)
        ABTh = A - B @ Th
        AGBTh = AG - B @ Th
        resid0 = D0 - B0 @ Th2
        Lw = L1c + (1.0 - 1.0 / N) * L2c
        cg1 = (Th.T @ B0.T @ Lw @ B0 @ Th + Lw @ G + G.T @ Lw
               + derived.QGamma) / N
        cg2 = -(Th.T @ B0.T @ L2c @ B0 @ Th + L2c @ G + G.T @ L2c) / N
        cg12 = (-Th.T @ B0.T @ L2c @ B0 @ Th1 + L2c @ B @ Th1) / N
        cg22 = -(Th1.T @ B0.T @ L2c @ B0 @ Th1) / N
        cg01 = (Th.T @ B0.T @ L2c @ resid0 + L2c @ B @ Th2) / N
        cg02 = (-Th1.T @ B0.T @ L2c @ B0 @ Th2
                + Th1.T @ B0.T @ L2c @ D0) / N
        cg03 = (-Th2 @ B0.T @ L2c @ B0 @ Th2
                + 2.0 * (D0 @ L2c @ B0 @ Th2) - D0 @ L2c @ D0) / N
        # displayed equations give -d/dt; negate on return
        m1 = Th.T @ R1c @ Th + L1c @ ABTh + ABTh.T @ L1c + Q + cg1
        m2 = (Th.T @ B0.T @ (L1c + L2c) @ B0 @ Th + L1c @ G + G.T @ L1c
              + L2c @ AGBTh + AGBTh.T @ L2c + derived.QGamma + cg2)
        m12 = (Th.T @ R2c @ Th1 + Th.T @ B0.T @ L12c @ B0 @ (Th + Th1)
               - (L1c + L2c) @ B @ Th1 + AGBTh.T @ L12c
               + L12c @ (AG - B @ (Th1 + Th)) + cg12)
        m22 = (Th1.T @ R2c @ Th1 - L12c.T @ B @ Th1 - Th1.T @ B.T @ L12c
               + L22c @ Z1 + Z1.T @ L22c - Z0.T @ L12c.T @ B0 @ Th1
               - Th1.T @ B0.T @ L12c @ Z0 + Z0.T @ L22c @ Z0 + cg22)
        drive = B.T @ S1c + B1.T @ L1c @ D + B0.T @ (L1c + L2c) @ D0
        mS1 = (Th.T @ R2c @ Th2 - (L1c + L2c + L12c) @ B @ Th2
               - Th.T @ drive - Th.T @ B0.T @ L12c @ resid0
               + AG.T @ S1c + cg01)
        mS2 = (Th1.T @ R2c @ Th2 + Z1.T @ S2c - Th1.T @ drive
               + (Z0.T @ L22c + Z0.T @ L12c.T
                  - Th1.T @ B0.T @ L12c) @ resid0
               - (L12c.T + L22c) @ B @ Th2 + cg02)
        row = (S1c + S2c) @ B + D @ L1c @ B1 + D0 @ (L1c + L2c) @ B0
        mr = (Th2 @ R2c @ Th2 + D @ L1c @ D + D0 @ (L1c + L2c) @ D0
              - row @ Th2
              - Th2 @ (B.T @ (S1c + S2c) + B1.T @ L1c @ D
                       + B0.T @ (L1c + L2c) @ D0)
              + resid0 @ (L22c + L12c + L12c.T) @ resid0 + cg03)
        return {
            "cLambda1N": -m1, "cLambda2N": -m2,
            "cLambda12N": -m12, "cLambda22N": -m22,
            "cS1N": -mS1, "cS2N": -mS2, "crN": np.array(-mr),
        }

    n = model.n
    outcome = integrate_backward(
        rhs,
        {"cLambda1N": sym(model.QF + derived.QGammaF / N),
         "cLambda2N": derived.QGammaF.copy(),
         "cLambda12N": np.zeros((n, n)),
         "cLambda22N": np.zeros((n, n)),
         "cS1N": K, "cS2N": np.zeros(n), "crN": np.array(0.0)},
        model.T,
        rtol=rtol, atol=atol,
        symmetric=("cLambda1N", "cLambda2N", "cLambda22N"),
        follow_grid=limit.Lambda1.grid,
    )
    if not outcome.ok:
        return outcome
    tr = outcome.trajectories
    outcome.solution = CheckSolution(
        N=N,
        cLambda1N=tr["cLambda1N"], cLambda2N=tr["cLambda2N"],
        cLambda12N=tr["cLambda12N"], cLambda22N=tr["cLambda22N"],
        cS1N=tr["cS1N"], cS2N=tr["cS2N"], crN=tr["crN"],
        terminal_linear=K,
    )
    return outcome


def convergence_table(
    model: ModelParams,
    Ns: list[int],
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> dict[str, np.ndarray]:
    """Sup-norm distances of the population-N system from its limit.

    Columns: N, e1 = sup|Lambda1N - Lambda1|, e2 = sup|Lambda2N - Lambda2|,
    eS = sup|SN - S|, er = sup|rN - r|. Each column halves (up to curvature)
    when N doubles.
    """
    base = solve_limit(model, terminal_linear, rtol=rtol, atol=atol)
    if not base.ok:
        raise RuntimeError("limiting system unsolvable: "
                           + base.failure_reason())
    lim: LimitSolution = base.solution
    rows = {"N": [], "e1": [], "e2": [], "eS": [], "er": []}
    for N in Ns:
        out = solve_finite(model, N, terminal_linear, rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError(f"population size {N} unsolvable: "
                               + out.failure_reason())
        fin: FiniteSolution = out.solution
        rows["N"].append(N)
        rows["e1"].append(sup_distance(fin.Lambda1N, lim.Lambda1))
        rows["e2"].append(sup_distance(fin.Lambda2N, lim.Lambda2))
        rows["eS"].append(sup_distance(fin.SN, lim.S))
        rows["er"].append(sup_distance(fin.rN, lim.r))
    return {k: np.asarray(v) for k, v in rows.items()}
