"""Competitive-equilibrium benchmark for the cooperative solution.

Solves the four-matrix ODE system pricing the non-cooperative game played
by the same population, then measures the asymptotic per-agent saving of
the cooperative control. The first game matrix satisfies the same Riccati
equation as the cooperative one, so their agreement doubles as a
cross-solver consistency check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolated
from .limit_riccati import LimitSolution, _guarded_inverse, psi1, r1, solve_limit
from .model import InitialLaw, ModelParams, sym
from .odecore import MatrixTrajectory, SolveOutcome, integrate_backward


@dataclass
class MfgSolution:
    """Game-side matrices; only Lambda1g is structurally symmetric."""

    Lambda1g: MatrixTrajectory
    Lambda2g: MatrixTrajectory
    Lambda3g: MatrixTrajectory
    Lambda4g: MatrixTrajectory
    Hg: MatrixTrajectory
    min_eig_R1: MatrixTrajectory


def solve_mfg(model: ModelParams, *, rtol: float = 1e-8,
              atol: float = 1e-10) -> SolveOutcome:
    """Integrate the four game ODEs backward under R1(Lambda1g) > 0.

    Lambda2g carries the cross term between an agent and the average of the
    others, Lambda4g the average-against-average term; Lambda3g is not
    needed by compare but belongs to the system and is solved with it.
    """
    A, B, B0, B1 = model.A, model.B, model.B0, model.B1
    G, Gamma, Q = model.G, model.Gamma, model.Q

    def rhs(t, blocks):
        L1, L2 = blocks["Lambda1g"], blocks["Lambda2g"]
        L3, L4 = blocks["Lambda3g"], blocks["Lambda4g"]
        Hg = _guarded_inverse(r1(model, L1), "R1(Lambda1g)")
        M = B @ Hg @ B.T
        sum12 = L1 + L2
        quad = L1 + L2 + L2.T + L4
        common = (L1 + L2.T) @ B @ Hg @ B0.T @ quad @ B0 @ Hg @ B.T @ sum12
        dL2 = (L2 @ M @ L2 + L2 @ M @ L1 + L1 @ M @ L2
               - L1 @ G - L2 @ (A + G) - A.T @ L2 + Q @ Gamma)
        dL3 = (L3 @ M @ L1 + L1 @ M @ L3 + L4 @ M @ L2
               + L2.T @ M @ (L2 + L4)
               - L1 @ B @ Hg @ B1.T @ L3 @ B1 @ Hg @ B.T @ L1
               - common
               - L3 @ A - (L2.T + L4.T) @ G - A.T @ L3
               - G.T @ (L2 + L4) - Gamma.T @ Q @ Gamma)
        dL4 = (L4 @ M @ sum12 + L1 @ M @ L4 + L2.T @ M @ (L2 + L4)
               - common
               - (L2.T + L4) @ G - L4 @ A - G.T @ (L2 + L4) - A.T @ L4
               - Gamma.T @ Q @ Gamma)
        return {"Lambda1g": psi1(model, L1), "Lambda2g": dL2,
                "Lambda3g": dL3, "Lambda4g": dL4}

    QfGf = model.QF @ model.GammaF
    GfQfGf = model.GammaF.T @ model.QF @ model.GammaF
    outcome = integrate_backward(
        rhs,
        {"Lambda1g": model.QF.copy(), "Lambda2g": -QfGf,
         "Lambda3g": GfQfGf.copy(), "Lambda4g": GfQfGf.copy()},
        model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[("R1", lambda b: r1(model, b["Lambda1g"]))],
        symmetric=("Lambda1g",),
    )
    if not outcome.ok:
        return outcome

    tr = outcome.trajectories
    hg_vals = np.array([_guarded_inverse(r1(model, L), "R1(Lambda1g)")
                        for L in tr["Lambda1g"].values])
    hg = MatrixTrajectory(grid=outcome.grid, values=hg_vals)
    src = tr["Lambda1g"]
    hg.eval = lambda t, _s=src, _m=model: _guarded_inverse(  # type: ignore[method-assign]
        r1(_m, _s.eval(t)), "R1(Lambda1g)")
    sol = MfgSolution(
        Lambda1g=tr["Lambda1g"], Lambda2g=tr["Lambda2g"],
        Lambda3g=tr["Lambda3g"], Lambda4g=tr["Lambda4g"],
        Hg=hg,
        min_eig_R1=MatrixTrajectory(grid=outcome.grid,
                                    values=outcome.margins["R1"]),
    )
    outcome.trajectories["Hg"] = hg
    outcome.solution = sol
    return outcome


def mfg_quadratic_weight(mfg: MfgSolution, t: float) -> np.ndarray:
    """Matrix weighting mu0 in the game's per-agent cost at time t."""
    return (mfg.Lambda1g.eval(t) + mfg.Lambda2g.eval(t)
            + mfg.Lambda2g.eval(t).T + mfg.Lambda4g.eval(t))


def compare(
    model: ModelParams,
    law: InitialLaw,
    *,
    limit: LimitSolution | None = None,
    mfg: MfgSolution | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> dict:
    """Asymptotic per-agent costs of both solution notions and their gap.

    J_soc_bar = Tr[Lambda1(0) Sigma0] + mu0'(Lambda1 + Lambda2)(0) mu0,
    J_mfg_bar uses the game weight; gain = J_mfg_bar - J_soc_bar >= 0.
    Only stated for models without additive noise.
    """
    if np.any(model.D != 0.0) or np.any(model.D0 != 0.0):
        raise PreconditionViolated(
            "cost comparison is defined for models with D = D0 = 0")
    if limit is None:
        out = solve_limit(model, rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("cooperative limit system unsolvable: "
                               + out.failure_reason())
        limit = out.solution
    if mfg is None:
        out = solve_mfg(model, rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("game system unsolvable: "
                               + out.failure_reason())
        mfg = out.solution
    mu0, Sigma0 = law.mu0, law.sigma0
    L1_0 = limit.Lambda1.t0_value
    soc_w = sym(L1_0 + limit.Lambda2.t0_value)
    mfg_w = sym(mfg_quadratic_weight(mfg, 0.0))
    j_soc = float(np.trace(L1_0 @ Sigma0) + mu0 @ soc_w @ mu0)
    j_mfg = float(np.trace(mfg.Lambda1g.t0_value @ Sigma0)
                  + mu0 @ mfg_w @ mu0)
    return {"J_soc_bar": j_soc, "J_mfg_bar": j_mfg, "gain": j_mfg - j_soc}


def weight_difference(limit: LimitSolution, mfg: MfgSolution
                      ) -> MatrixTrajectory:
    """Trajectory of the game-minus-cooperative quadratic weight.

    Evaluates Lambda1g + Lambda2g + Lambda2g' + Lambda4g - Lambda3 on the
    game grid; its t=0 value weights mu0 in the cost gap.
    """
    grid = mfg.Lambda1g.grid

    def at(t: float) -> np.ndarray:
        return mfg_quadratic_weight(mfg, t) - limit.Lambda3.eval(t)

    vals = np.array([at(float(t)) for t in grid])
    out = MatrixTrajectory(grid=grid, values=vals)
    out.eval = lambda t: at(float(t))  # type: ignore[method-assign]
    return out
