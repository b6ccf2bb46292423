"""Unstructured N-agent ground truth for the rescaled solvers.

Everything here works on the stacked Nn-dimensional system with no
exploitation of its replicated structure: the structure is the thing under
test. assemble materializes every block matrix literally; solve_full
integrates the big Riccati triple (P, S, r); solve_full_check integrates the
six-ODE decentralized-cost system. Block-pattern lemmas are then verified
numerically and the rescaled low-dimensional trajectories extracted for
comparison with the n-dimensional solvers.

Deliberately slow and explicit. The cap on Nn keeps runs at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, SingularInverse, StructureViolation
from .finite_riccati import CheckSolution, FiniteSolution, solve_finite
from .gains import decentralized_gains
from .limit_riccati import LimitSolution, r1
from .model import InitialLaw, ModelParams, derived_weights, sym
from .odecore import (
    MatrixTrajectory,
    SolveOutcome,
    integrate_backward,
    sup_distance,
)

_COND_LIMIT = 1e12


def _spd_inverse(M: np.ndarray, what: str) -> np.ndarray:
    """Inverse through a symmetric eigenfactorization; SPD required.

    The callers' positivity constraints guarantee SPD along accepted
    trajectories, so an indefinite or ill-conditioned input here signals a
    violation and is raised for the step controller to reject.
    """
    w, V = np.linalg.eigh(sym(M))
    if w[0] <= 0.0 or w[-1] / w[0] > _COND_LIMIT:
        raise SingularInverse(
            f"{what} is not safely positive definite "
            f"(eig range [{w[0]:.3e}, {w[-1]:.3e}])")
    return (V / w) @ V.T


def _derived_traj(src: MatrixTrajectory, fn) -> MatrixTrajectory:
    """Trajectory of fn(source value), dense-evaluating through the source."""
    vals = np.array([fn(v) for v in src.values])
    out = MatrixTrajectory(grid=src.grid, values=vals)
    out.eval = lambda t, _s=src, _f=fn: _f(_s.eval(t))  # type: ignore[method-assign]
    return out


@dataclass
class BigSystem:
    """All stacked matrices of the N-agent system, materialized literally."""

    N: int
    n: int
    n1: int
    bold_A: np.ndarray       # Nn x Nn
    bold_Bhat: np.ndarray    # Nn x Nn1, block-diagonal stack of B
    bold_B0: np.ndarray      # Nn x n1, ones-stack of B0/N
    bold_D0: np.ndarray      # (Nn,), ones-stack of D0
    bold_Bk: np.ndarray      # (N, Nn, n1), agent-k slot carrying B1
    bold_Dk: np.ndarray      # (N, Nn), agent-k slot carrying D
    bold_Q: np.ndarray       # Nn x Nn
    bold_QF: np.ndarray      # Nn x Nn
    bold_R: np.ndarray       # Nn1 x Nn1
    Ihat: np.ndarray         # n1 x Nn1, row of identities
    e_sel: np.ndarray        # (N, n1, Nn1), agent-k control selector

    def m0(self, Z: np.ndarray) -> float:
        """Scalar diffusion functional of an Nn x Nn matrix."""
        out = 0.5 * self.bold_D0 @ Z @ self.bold_D0
        for i in range(self.N):
            out += 0.5 * self.bold_Dk[i] @ Z @ self.bold_Dk[i]
        return float(out)

    def m1(self, Z: np.ndarray) -> np.ndarray:
        """Row functional (length Nn1) coupling drift offsets to controls."""
        out = (self.bold_D0 @ Z @ self.bold_B0) @ self.Ihat
        for i in range(self.N):
            out = out + (self.bold_Dk[i] @ Z @ self.bold_Bk[i]) @ self.e_sel[i]
        return out

    def m2(self, Z: np.ndarray) -> np.ndarray:
        """Control-weight correction (Nn1 x Nn1) from the noise channels."""
        out = 0.5 * self.Ihat.T @ (self.bold_B0.T @ Z @ self.bold_B0) @ self.Ihat
        for i in range(self.N):
            out = out + 0.5 * self.e_sel[i].T \
                @ (self.bold_Bk[i].T @ Z @ self.bold_Bk[i]) @ self.e_sel[i]
        return out


def assemble(model: ModelParams, N: int, cap: int = 64) -> BigSystem:
    """Materialize the stacked N-agent system matrices.

    Refuses to build beyond N*n > cap: the oracle exists for desk-scale
    verification, not production solves.
    """
    n, n1 = model.n, model.n1
    if N < 1:
        raise ValueError(f"population size must be >= 1, got {N}")
    if N * n > cap:
        raise CapExceeded(
            f"stacked dimension N*n = {N * n} exceeds the oracle cap {cap}")
    derived = derived_weights(model)
    eyeN = np.eye(N)
    onesNN = np.ones((N, N))
    bold_A = np.kron(eyeN, model.A) + np.kron(onesNN, model.G / N)
    bold_Bhat = np.kron(eyeN, model.B)
    bold_B0 = np.kron(np.ones((N, 1)), model.B0 / N)
    bold_D0 = np.tile(model.D0, N)
    bold_Bk = np.zeros((N, N * n, n1))
    bold_Dk = np.zeros((N, N * n))
    for k in range(N):
        bold_Bk[k, k * n:(k + 1) * n, :] = model.B1
        bold_Dk[k, k * n:(k + 1) * n] = model.D
    bold_Q = np.kron(eyeN, model.Q) + np.kron(onesNN, derived.QGamma / N)
    bold_QF = np.kron(eyeN, model.QF) + np.kron(onesNN, derived.QGammaF / N)
    bold_R = np.kron(eyeN, model.R)
    Ihat = np.kron(np.ones((1, N)), np.eye(n1))
    e_sel = np.zeros((N, n1, N * n1))
    for k in range(N):
        e_sel[k, :, k * n1:(k + 1) * n1] = np.eye(n1)
    return BigSystem(
        N=N, n=n, n1=n1,
        bold_A=bold_A, bold_Bhat=bold_Bhat, bold_B0=bold_B0, bold_D0=bold_D0,
        bold_Bk=bold_Bk, bold_Dk=bold_Dk,
        bold_Q=sym(bold_Q), bold_QF=sym(bold_QF), bold_R=sym(bold_R),
        Ihat=Ihat, e_sel=e_sel,
    )


@dataclass
class FullSolution:
    """Solved stacked system (P, S, r) with its positivity margin."""

    N: int
    n: int
    P: MatrixTrajectory
    Sbold: MatrixTrajectory
    rbold: MatrixTrajectory
    min_eig_margin: MatrixTrajectory
    l1_norm_over_N: MatrixTrajectory
    big: BigSystem
    terminal_linear: np.ndarray

    def value(self, t: float, x: np.ndarray) -> float:
        """Optimal cost-to-go x'P(t)x + 2x'S(t) + r(t) from state x."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(x @ self.P.eval(t) @ x + 2.0 * x @ self.Sbold.eval(t)
                     + self.rbold.eval(t))


def solve_full(
    model: ModelParams,
    N: int,
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    cap: int = 64,
) -> SolveOutcome:
    """Integrate the stacked Riccati equation, then its linear offsets.

    Tolerances default tighter than the production solvers: block-structure
    verification downstream compares at 1e-8 and needs headroom.
    """
    big = assemble(model, N, cap=cap)
    K = np.zeros(model.n) if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(model.n)

    def riccati_rhs(t, blocks):
        P = blocks["P"]
        Winv = _spd_inverse(big.bold_R + 2.0 * big.m2(P), "R + 2 M2(P)")
        return {"P": sym(P @ big.bold_Bhat @ Winv @ big.bold_Bhat.T @ P
                         - P @ big.bold_A - big.bold_A.T @ P - big.bold_Q)}

    outcome = integrate_backward(
        riccati_rhs,
        {"P": big.bold_QF.copy()},
        model.T,
        rtol=rtol, atol=atol,
        pos_constraints=[
            ("R2M2", lambda b: sym(big.bold_R + 2.0 * big.m2(b["P"]))),
        ],
        symmetric=("P",),
    )
    if not outcome.ok:
        return outcome

    P_traj = outcome.trajectories["P"]

    def linear_rhs(t, blocks):
        P = P_traj.eval(t)
        S = blocks["S"]
        Winv = _spd_inverse(big.bold_R + 2.0 * big.m2(P), "R + 2 M2(P)")
        forcing = big.bold_Bhat.T @ S + big.m1(P)
        return {
            "S": P @ big.bold_Bhat @ Winv @ forcing - big.bold_A.T @ S,
            "r": np.array(forcing @ Winv @ forcing - 2.0 * big.m0(P)),
        }

    linear = integrate_backward(
        linear_rhs,
        {"S": np.tile(K, N), "r": np.array(0.0)},
        model.T,
        rtol=rtol, atol=atol,
        follow_grid=outcome.grid,
    )
    if not linear.ok:
        return linear

    grid = outcome.grid
    l1 = np.array([np.sum(np.abs(v)) / N for v in P_traj.values])
    sol = FullSolution(
        N=N, n=model.n,
        P=P_traj,
        Sbold=linear.trajectories["S"],
        rbold=linear.trajectories["r"],
        min_eig_margin=MatrixTrajectory(grid=grid,
                                        values=outcome.margins["R2M2"]),
        l1_norm_over_N=MatrixTrajectory(grid=grid, values=l1),
        big=big,
        terminal_linear=K,
    )
    outcome.trajectories["Sbold"] = sol.Sbold
    outcome.trajectories["rbold"] = sol.rbold
    outcome.solution = sol
    return outcome


def _two_block_split(M: np.ndarray, N: int, n: int
                     ) -> tuple[np.ndarray, np.ndarray, float]:
    """Mean diagonal and off-diagonal n-blocks plus the worst deviation."""
    Z = M.reshape(N, n, N, n)
    diag = np.array([Z[i, :, i, :] for i in range(N)])
    pi1 = diag.mean(axis=0)
    dev = float(np.max(np.abs(diag - pi1))) if N >= 1 else 0.0
    if N > 1:
        off = np.array([Z[i, :, j, :]
                        for i in range(N) for j in range(N) if i != j])
        pi2 = off.mean(axis=0)
        dev = max(dev, float(np.max(np.abs(off - pi2))),
                  float(np.max(np.abs(pi2 - pi2.T))))
    else:
        pi2 = np.zeros((n, n))
    return pi1, pi2, dev


def _stacked_split(v: np.ndarray, N: int, n: int
                   ) -> tuple[np.ndarray, float]:
    """Mean n-block of a stacked vector or tall matrix, with deviation."""
    blocks = v.reshape(N, n, *v.shape[1:])
    mean = blocks.mean(axis=0)
    return mean, float(np.max(np.abs(blocks - mean)))


def extract_blocks(full: FullSolution, N: int, *, tol: float = 1e-8):
    """Verify the two-block/stacked patterns of (P, S) and rescale.

    Returns (Pi1N, Pi2N, SN_block, (Lambda1N, Lambda2N, SN, rN)) as
    trajectories. Any block deviating from its pattern by more than tol
    raises StructureViolation: the pattern is guaranteed, so a violation
    means an assembly or integration defect.

    At N=1 no off-diagonal blocks exist and the returned Lambda2N is
    identically zero; the single-agent equations do not see it (its
    contributions carry 1-1/N factors or cancel inside the inverses), so
    only Lambda1N, SN, rN are comparable against a 1-agent rescaled solve.
    """
    if N != full.N:
        raise ValueError(f"population mismatch: solution has N={full.N}")
    n = full.n
    worst = 0.0
    worst_t = float(full.P.grid[0])
    for tval, Pv, Sv in zip(full.P.grid, full.P.values, full.Sbold.values):
        _, _, devP = _two_block_split(Pv, N, n)
        _, devS = _stacked_split(Sv, N, n)
        dev = max(devP, devS)
        if dev > worst:
            worst, worst_t = dev, float(tval)
    if worst > tol:
        raise StructureViolation(
            f"stacked solution deviates from its block pattern by "
            f"{worst:.3e} > {tol:.1e} at t={worst_t:.6g}")

    pi1 = _derived_traj(full.P, lambda M: _two_block_split(M, N, n)[0])
    pi2 = _derived_traj(full.P, lambda M: _two_block_split(M, N, n)[1])
    lam1 = _derived_traj(full.P, lambda M: _two_block_split(M, N, n)[0])
    lam2 = _derived_traj(full.P,
                         lambda M: N * _two_block_split(M, N, n)[1])
    sN = _derived_traj(full.Sbold, lambda v: _stacked_split(v, N, n)[0])
    rN = _derived_traj(full.rbold, lambda v: v / N)
    return pi1, pi2, sN, (lam1, lam2, sN, rN)


def eig_factorization_check(model: ModelParams, full: FullSolution, N: int,
                            t: float, *, tol: float = 1e-7) -> bool:
    """Spectrum of R + 2 M2(P(t)) versus its two-factor prediction.

    The prediction uses the extracted (Lambda1N, Lambda2N): with
    KN = (1/N) B0' [Lambda1N + (1-1/N) Lambda2N] B0 and FN = KN + R1(Lambda1N),
    the spectrum is eig(FN + (N-1) KN) plus eig(FN - KN) with multiplicity
    N-1.
    """
    big = full.big
    P = full.P.eval(t)
    direct = np.sort(np.linalg.eigvalsh(sym(big.bold_R + 2.0 * big.m2(P))))
    pi1, pi2, _ = _two_block_split(P, N, full.n)
    L1, L2 = pi1, N * pi2
    B0 = model.B0
    KN = (B0.T @ (L1 + (1.0 - 1.0 / N) * L2) @ B0) / N
    FN = KN + r1(model, L1)
    lead = np.linalg.eigvalsh(sym(FN + (N - 1) * KN))
    rep = np.linalg.eigvalsh(sym(FN - KN))
    predicted = np.sort(np.concatenate([lead] + [rep] * (N - 1)))
    return bool(np.max(np.abs(direct - predicted)) <= tol)


def optimal_value(
    model: ModelParams,
    N: int,
    law: InitialLaw,
    *,
    finite: FiniteSolution | None = None,
    terminal_linear: np.ndarray | None = None,
) -> dict:
    """Social and per-agent optimal cost from the rescaled solution.

    J_i = Tr[Lambda1N(0) Sigma0_i] + mu0'(Lambda1N(0) + (1-1/N) Lambda2N(0))mu0
          + 2 SN(0)'mu0 + rN(0), and J_soc is their sum over agents.
    """
    if finite is None:
        out = solve_finite(model, N, terminal_linear)
        if not out.ok:
            raise RuntimeError("population system unsolvable: "
                               + out.failure_reason())
        finite = out.solution
    L1_0 = finite.Lambda1N.t0_value
    L2_0 = finite.Lambda2N.t0_value
    S_0 = finite.SN.t0_value
    r_0 = float(finite.rN.t0_value)
    mu0 = law.mu0
    mu_part = float(mu0 @ (L1_0 + (1.0 - 1.0 / N) * L2_0) @ mu0
                    + 2.0 * S_0 @ mu0 + r_0)
    if law.per_agent_sigma is not None:
        if len(law.per_agent_sigma) != N:
            raise ValueError(
                f"need {N} per-agent covariances, got {len(law.per_agent_sigma)}")
        per_agent = np.array([float(np.trace(L1_0 @ Sig)) + mu_part
                              for Sig in law.per_agent_sigma])
    else:
        per_agent = np.full(N, float(np.trace(L1_0 @ law.sigma0)) + mu_part)
    return {"J_soc": float(per_agent.sum()), "per_agent": per_agent}


@dataclass
class FullCheckSolution:
    """Stacked decentralized-cost system with its rescaled extraction."""

    N: int
    n: int
    P1: MatrixTrajectory
    P12: MatrixTrajectory
    P2: MatrixTrajectory
    S1: MatrixTrajectory
    S2: MatrixTrajectory
    rbold: MatrixTrajectory
    extracted: dict[str, MatrixTrajectory]
    big: BigSystem
    terminal_linear: np.ndarray

    def value(self, t: float, x: np.ndarray, xbar: np.ndarray) -> float:
        """Decentralized cost-to-go from stacked state x and mean-field xbar."""
        x = np.asarray(x, dtype=float).reshape(-1)
        xbar = np.asarray(xbar, dtype=float).reshape(-1)
        return float(
            x @ self.P1.eval(t) @ x + xbar @ self.P2.eval(t) @ xbar
            + 2.0 * x @ self.P12.eval(t) @ xbar
            + 2.0 * x @ self.S1.eval(t) + 2.0 * xbar @ self.S2.eval(t)
            + self.rbold.eval(t))

    def compare(self, check: CheckSolution) -> dict[str, float]:
        """Sup-norm distances between the extraction and a low-dim solve."""
        return {name: sup_distance(self.extracted[name], getattr(check, name))
                for name in self.extracted}


def solve_full_check(
    model: ModelParams,
    N: int,
    limit: LimitSolution,
    terminal_linear: np.ndarray | None = None,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    cap: int = 64,
    tol: float = 1e-8,
) -> FullCheckSolution:
    """Integrate the six stacked ODEs pricing the decentralized feedback.

    Verifies the block patterns (two-block P1, stacked-equal P12 and S1) and
    returns the rescaled extraction alongside the raw trajectories. The
    system is linear, so a solver failure here is raised, not reported.
    """
    big = assemble(model, N, cap=cap)
    n, n1 = model.n, model.n1
    K = np.asarray(limit.terminal_linear, dtype=float).reshape(n) \
        if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(n)
    gains = decentralized_gains(model, limit)
    A, B, B0, D0, G = model.A, model.B, model.B0, model.D0, model.G
    eyeN = np.eye(N)
    ones_col = np.ones((N, 1))
    Ihat_n = np.kron(np.ones((1, N)), np.eye(n))
    Bh, bA = big.bold_Bhat, big.bold_A
    B0b, Ih = big.bold_B0, big.Ihat
    D0b = big.bold_D0

    def rhs(t, blocks):
        P1, P12, P2 = blocks["P1"], blocks["P12"], blocks["P2"]
        S1, S2 = blocks["S1"], blocks["S2"]
        Th, Th1, Th2 = gains.eval(t)
        ThH = np.kron(eyeN, Th)
        Th1H = np.kron(ones_col, Th1)
        Th2H = np.tile(Th2, N)
        Z0 = -B0 @ (Th + Th1)
        Z1 = A + G - B @ (Th + Th1)
        W = sym(big.bold_R + big.m2(2.0 * P1))
        resid0 = D0 - B0 @ Th2
        m_P1 = (ThH.T @ W @ ThH + P1 @ (bA - Bh @ ThH)
                + (bA - Bh @ ThH).T @ P1 + big.bold_Q)
        m_P12 = (ThH.T @ W @ Th1H - P1 @ Bh @ Th1H
                 + (bA.T - ThH.T @ Bh.T) @ P12 + P12 @ Z1
                 - ThH.T @ Ih.T @ B0b.T @ P12 @ Z0)
        m_P2 = (Th1H.T @ W @ Th1H - P12.T @ Bh @ Th1H - Th1H.T @ Bh.T @ P12
                - Z0.T @ P12.T @ B0b @ Ih @ Th1H
                - Th1H.T @ Ih.T @ B0b.T @ P12 @ Z0
                + P2 @ Z1 + Z1.T @ P2 + Z0.T @ P2 @ Z0)
        forcing = Bh.T @ S1 + big.m1(P1)
        m_S1 = (ThH.T @ W @ Th2H - ThH.T @ forcing + bA.T @ S1
                - P12 @ (B @ Th2) - ThH.T @ Ih.T @ B0b.T @ P12 @ resid0
                - P1 @ Bh @ Th2H)
        m_S2 = (Th1H.T @ W @ Th2H - Th1H.T @ forcing - P12.T @ Bh @ Th2H
                - P2 @ (B @ Th2) + Z1.T @ S2 + Z0.T @ P2 @ resid0
                + Z0.T @ P12.T @ (D0b - B0b @ Ih @ Th2H)
                - Th1H.T @ Ih.T @ B0b.T @ P12 @ resid0)
        m_r = (Th2H @ W @ Th2H - 2.0 * forcing @ Th2H
               - 2.0 * S2 @ (B @ Th2)
               + resid0 @ (P2 + 2.0 * Ihat_n @ P12) @ resid0
               + big.m0(2.0 * P1))
        return {
            "P1": -m_P1, "P12": -m_P12, "P2": -m_P2,
            "S1": -m_S1, "S2": -m_S2, "r": np.array(-m_r),
        }

    outcome = integrate_backward(
        rhs,
        {"P1": big.bold_QF.copy(), "P12": np.zeros((N * n, n)),
         "P2": np.zeros((n, n)), "S1": np.tile(K, N),
         "S2": np.zeros(n), "r": np.array(0.0)},
        model.T,
        rtol=rtol, atol=atol,
        symmetric=("P1", "P2"),
        follow_grid=limit.Lambda1.grid,
    )
    if not outcome.ok:
        raise RuntimeError("stacked linear system failed: "
                           + outcome.failure_reason())

    tr = outcome.trajectories
    worst = 0.0
    worst_t = float(tr["P1"].grid[0])
    for tval, P1v, P12v, S1v in zip(tr["P1"].grid, tr["P1"].values,
                                    tr["P12"].values, tr["S1"].values):
        _, _, d1 = _two_block_split(P1v, N, n)
        _, d12 = _stacked_split(P12v, N, n)
        _, dS1 = _stacked_split(S1v, N, n)
        dev = max(d1, d12, dS1)
        if dev > worst:
            worst, worst_t = dev, float(tval)
    if worst > tol:
        raise StructureViolation(
            f"decentralized-cost solution deviates from its block pattern "
            f"by {worst:.3e} > {tol:.1e} at t={worst_t:.6g}")

    extracted = {
        "cLambda1N": _derived_traj(tr["P1"],
                                   lambda M: _two_block_split(M, N, n)[0]),
        "cLambda2N": _derived_traj(tr["P1"],
                                   lambda M: N * _two_block_split(M, N, n)[1]),
        "cLambda12N": _derived_traj(tr["P12"],
                                    lambda M: _stacked_split(M, N, n)[0]),
        "cLambda22N": _derived_traj(tr["P2"], lambda M: M / N),
        "cS1N": _derived_traj(tr["S1"], lambda v: _stacked_split(v, N, n)[0]),
        "cS2N": _derived_traj(tr["S2"], lambda v: v / N),
        "crN": _derived_traj(tr["r"], lambda v: v / N),
    }
    return FullCheckSolution(
        N=N, n=n,
        P1=tr["P1"], P12=tr["P12"], P2=tr["P2"],
        S1=tr["S1"], S2=tr["S2"], rbold=tr["r"],
        extracted=extracted, big=big, terminal_linear=K,
    )


def stacked_linear_residual(model: ModelParams, full: FullSolution,
                            finite: FiniteSolution, *, num: int = 801
                            ) -> tuple[float, float]:
    """Defect of the stacked (SN, N rN) in the big linear offset equations.

    Rebuilds S(t) := ones-stack of SN(t) and r(t) := N rN(t) from the
    low-dimensional solution and measures how well they satisfy the stacked
    offset ODEs driven by the oracle's P, via a finite-difference derivative
    on a uniform num-point grid. Rates the rescaling consistency end to end.
    """
    big = full.big
    N = full.N
    ts = np.linspace(0.0, model.T, num)
    S_vals = np.array([np.tile(finite.SN.eval(t), N) for t in ts])
    r_vals = np.array([N * float(finite.rN.eval(t)) for t in ts])
    dS = np.gradient(S_vals, ts, axis=0, edge_order=2)
    dr = np.gradient(r_vals, ts, edge_order=2)
    worstS = worstr = 0.0
    for k in range(1, num - 1):
        P = full.P.eval(ts[k])
        Winv = _spd_inverse(big.bold_R + 2.0 * big.m2(P), "R + 2 M2(P)")
        forcing = big.bold_Bhat.T @ S_vals[k] + big.m1(P)
        fS = P @ big.bold_Bhat @ Winv @ forcing - big.bold_A.T @ S_vals[k]
        fr = forcing @ Winv @ forcing - 2.0 * big.m0(P)
        worstS = max(worstS,
                     float(np.max(np.abs(dS[k] - fS) / (1.0 + np.abs(fS)))))
        worstr = max(worstr, float(abs(dr[k] - fr) / (1.0 + abs(fr))))
    return worstS, worstr
