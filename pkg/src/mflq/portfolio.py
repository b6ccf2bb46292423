"""Mean-variance portfolio selection as a scalar instance of the solvers.

The wealth dynamics dX = [rho X + (alpha-rho) u] dt + sigma u dW with cost
(gamma/2) Var(X(T)) - E X(T) map onto the scalar model with Q = R = 0,
Q_f = gamma/2, Gamma_f = 1 and a terminal linear weight K = -1/2. Everything
then has closed forms, which makes this the sharpest end-to-end test of the
limit solver: R = 0, so positivity of the effective control weight comes
entirely from the controlled diffusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gains import decentralized_gains
from .limit_riccati import solve_limit
from .model import ModelParams, build_model
from .odecore import SolveOutcome

TERMINAL_LINEAR_WEIGHT = -0.5


@dataclass(frozen=True)
class PortfolioParams:
    """Market constants for one bond and one stock."""

    rho: float = 0.05
    alpha: float = 0.15
    sigma: float = 0.25
    gamma: float = 1.0
    T: float = 1.0
    x0: float = 1.0

    def __post_init__(self):
        if not self.alpha > self.rho:
            raise ValueError(f"need alpha > rho, got {self.alpha} <= {self.rho}")
        if not self.sigma > 0:
            raise ValueError(f"need sigma > 0, got {self.sigma}")
        if not self.gamma > 0:
            raise ValueError(f"need gamma > 0, got {self.gamma}")
        if not self.T > 0:
            raise ValueError(f"need T > 0, got {self.T}")

    @property
    def lambda_rate(self) -> float:
        return (self.rho - self.alpha) ** 2 / self.sigma ** 2

    @property
    def risk_coef(self) -> float:
        """Feedback coefficient (alpha - rho) / sigma^2."""
        return (self.alpha - self.rho) / self.sigma ** 2


def closed_forms(p: PortfolioParams) -> dict:
    """Closed-form ingredients of the optimal allocation.

    A_of_t and C_of_t solve the scalar terminal-value ODEs with A_T = gamma,
    C_T = 1; Lambda1_of_t = A_of_t / 2 and S_of_t = -C_of_t / 2 are the same
    objects in the cooperative solver's coordinates.
    """
    lam = p.lambda_rate

    def A_of_t(t):
        return p.gamma * np.exp((2.0 * p.rho - lam) * (p.T - t))

    def C_of_t(t):
        return np.exp(p.rho * (p.T - t))

    return {
        "lambda_rate": lam,
        "A_of_t": A_of_t,
        "C_of_t": C_of_t,
        "Lambda1_of_t": lambda t: 0.5 * A_of_t(t),
        "S_of_t": lambda t: -0.5 * C_of_t(t),
    }


def as_model(p: PortfolioParams) -> tuple[ModelParams, np.ndarray]:
    """The scalar model realizing the portfolio problem, with its K."""
    m = np.array
    raw = ModelParams(
        n=1, n1=1,
        A=m([[p.rho]]), B=m([[p.alpha - p.rho]]),
        B0=m([[0.0]]), B1=m([[p.sigma]]),
        D=m([0.0]), D0=m([0.0]), G=m([[0.0]]),
        Gamma=m([[0.0]]), GammaF=m([[1.0]]),
        Q=m([[0.0]]), R=m([[0.0]]), QF=m([[p.gamma / 2.0]]), T=p.T,
    )
    model, _ = build_model(raw)
    return model, np.array([TERMINAL_LINEAR_WEIGHT])


def mean_wealth(p: PortfolioParams, t) -> np.ndarray:
    """Optimally controlled mean wealth E X(t).

    Closed form obtained from the mean ODE dEX/dt = rho EX + lambda C_t/A_t
    with EX(0) = x0.
    """
    lam = p.lambda_rate
    t = np.asarray(t, dtype=float)
    return (p.x0 * np.exp(p.rho * t)
            + np.exp(lam * p.T - p.rho * (p.T - t)) / p.gamma
            - np.exp((lam - p.rho) * (p.T - t)) / p.gamma)


def u_hat_explicit(p: PortfolioParams, t: float, X: float) -> float:
    """Allocation with the mean substituted by its closed form."""
    lam = p.lambda_rate
    return p.risk_coef * (p.x0 * math.exp(p.rho * t)
                          + math.exp(lam * p.T - p.rho * (p.T - t)) / p.gamma
                          - X)


def control_compare(p: PortfolioParams, t: float, X: float,
                    Xbar: float) -> dict:
    """Both printed allocation rules at (t, X, Xbar).

    u_mv carries the mean-variance form with the C/A ratio; u_soc carries the
    cooperative form with -S/Lambda1. The two ratios agree identically, so
    the rules differ only in how the mean term is produced.
    """
    cf = closed_forms(p)
    ca = float(cf["C_of_t"](t)) / float(cf["A_of_t"](t))
    s_over = -float(cf["S_of_t"](t)) / float(cf["Lambda1_of_t"](t))
    dev = X - Xbar
    return {
        "u_mv": p.risk_coef * (ca - dev),
        "u_soc": p.risk_coef * (s_over - dev),
    }


def _limit_outcome(p: PortfolioParams, rtol: float, atol: float
                   ) -> tuple[ModelParams, SolveOutcome]:
    model, K = as_model(p)
    return model, solve_limit(model, terminal_linear=K, rtol=rtol, atol=atol)


def verify_against_solver(p: PortfolioParams, *, rtol: float = 1e-10,
                          atol: float = 1e-12, num: int = 201) -> dict:
    """Closed forms versus the numerical limit solve, as sup errors.

    Reports errors for Lambda1, S, the Lambda3 = 0 and Lambda2 = -Lambda1
    identities, the -S/Lambda1 = C/A ratio identity on a 20-point grid, and
    the three feedback gains against their printed constants or forms.
    """
    cf = closed_forms(p)
    model, outcome = _limit_outcome(p, rtol, atol)
    if not outcome.ok:
        return {"solved": False, "reason": outcome.failure_reason()}
    lim = outcome.solution
    ts = np.linspace(0.0, p.T, num)

    def sup(f) -> float:
        return float(max(abs(f(float(t))) for t in ts))

    err_lambda1 = sup(lambda t: float(lim.Lambda1.eval(t)[0, 0])
                      - float(cf["Lambda1_of_t"](t)))
    err_s = sup(lambda t: float(lim.S.eval(t)[0]) - float(cf["S_of_t"](t)))
    err_lambda3 = sup(lambda t: float(lim.Lambda3.eval(t)[0, 0]))
    err_lambda2 = sup(lambda t: float(lim.Lambda2.eval(t)[0, 0])
                      + float(lim.Lambda1.eval(t)[0, 0]))

    t20 = np.linspace(0.0, p.T, 20)
    identity_err = float(max(
        abs(-float(cf["S_of_t"](t)) / float(cf["Lambda1_of_t"](t))
            - float(cf["C_of_t"](t)) / float(cf["A_of_t"](t)))
        for t in t20))

    gains = decentralized_gains(model, lim)
    theta_ref = p.risk_coef

    def gain_errs(t: float) -> tuple[float, float, float]:
        th, th1, th2 = gains.eval(float(t))
        th2_ref = theta_ref * float(cf["S_of_t"](t)) / float(cf["Lambda1_of_t"](t))
        return (abs(float(th[0, 0]) - theta_ref),
                abs(float(th1[0, 0]) + theta_ref),
                abs(float(th2[0]) - th2_ref))

    errs = np.array([gain_errs(t) for t in ts])
    report = {
        "solved": True,
        "lambda_rate": cf["lambda_rate"],
        "err_lambda1": err_lambda1,
        "err_s": err_s,
        "err_lambda3": err_lambda3,
        "err_lambda2_plus_lambda1": err_lambda2,
        "identity_err": identity_err,
        "err_theta": float(errs[:, 0].max()),
        "err_theta1": float(errs[:, 1].max()),
        "err_theta2": float(errs[:, 2].max()),
        "min_eig_R1": float(np.min(lim.min_eig_R1.values)),
        "pass_lambda1": err_lambda1 <= 1e-8,
        "pass_s": err_s <= 1e-8,
        "pass_lambda3": err_lambda3 <= 1e-9,
        "pass_lambda2": err_lambda2 <= 1e-8,
        "pass_identity": identity_err <= 1e-12,
        "pass_gains": bool(errs.max() <= 1e-8),
    }
    return report


def time_consistency_error(p: PortfolioParams, t0: float, *,
                           rtol: float = 1e-10, atol: float = 1e-12,
                           num: int = 50) -> float:
    """Gain discrepancy between the [0,T] solve and a fresh [t0,T] solve.

    The coefficients are constant in time, so re-solving on the shorter
    horizon must reproduce the original gains shifted by t0; the cooperative
    allocation rule is time consistent.
    """
    if not 0.0 <= t0 < p.T:
        raise ValueError(f"need 0 <= t0 < T, got t0={t0}")
    model, outcome = _limit_outcome(p, rtol, atol)
    if not outcome.ok:
        raise RuntimeError(outcome.failure_reason())
    gains = decentralized_gains(model, outcome.solution)

    import dataclasses
    p_short = dataclasses.replace(p, T=p.T - t0)
    model_s, outcome_s = _limit_outcome(p_short, rtol, atol)
    if not outcome_s.ok:
        raise RuntimeError(outcome_s.failure_reason())
    gains_s = decentralized_gains(model_s, outcome_s.solution)

    worst = 0.0
    for s in np.linspace(0.0, p.T - t0, num):
        th_a, th1_a, th2_a = gains.eval(float(s) + t0)
        th_b, th1_b, th2_b = gains_s.eval(float(s))
        worst = max(worst,
                    float(np.max(np.abs(th_a - th_b))),
                    float(np.max(np.abs(th1_a - th1_b))),
                    float(np.max(np.abs(th2_a - th2_b))))
    return worst
