"""Closed-loop Monte Carlo for the N-agent system and exact gap evaluation.

Simulation integrates the original controlled SDEs under a feedback law by
Euler-Maruyama: per-agent noise W_i, one shared common noise W_0, controls
from a GainSet. The decentralized flavor co-simulates the mean field process
driven by the same W_0 realization. The optimality gap of the decentralized
control also has an exact ODE-based expression, evaluated here without any
sampling; Monte Carlo with common random numbers cross-validates it.

Reproducibility contract: a fixed seed gives bit-identical results no matter
how many worker threads run, because every (path, agent) pair owns a
counter-based RNG substream and all reductions are pairwise sums in a fixed
order. Worker count only changes wall time.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator, Philox

from .errors import NonFiniteState
from .finite_riccati import (
    CheckSolution,
    FiniteSolution,
    solve_check,
    solve_finite,
)
from .gains import GainSet, centralized_gains, decentralized_gains
from .limit_riccati import LimitSolution, solve_limit
from .model import InitialLaw, ModelParams
from .odecore import MatrixTrajectory

_COMMON_STREAM = 2 ** 63    # substream id of W_0; unreachable as an agent index
_CHUNK = 256


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run description."""

    N: int
    paths: int
    law: InitialLaw
    dt: float | None = None     # defaults to T/200; must divide T
    seed: int = 0
    crn: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"need N >= 1, got {self.N}")
        if self.paths < 1:
            raise ValueError(f"need paths >= 1, got {self.paths}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def steps(self, T: float) -> int:
        dt = self.dt if self.dt is not None else T / 200.0
        m = round(T / dt)
        if m < 1 or abs(m * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"dt={dt} does not divide the horizon T={T}")
        return m


@dataclass
class SimResult:
    """Social cost estimate with its sampling error and path diagnostics."""

    J_soc_hat: float
    ci_half: float
    per_agent: float
    second_moment_max: float
    mf_error: float | None = None
    node_stats: dict | None = None
    paths: int = 0


def _mean_ci(x: np.ndarray) -> tuple[float, float]:
    # np.add.reduce is pairwise: summation order fixed by array order
    m = int(x.shape[0])
    mean = float(np.add.reduce(x) / m)
    if m == 1:
        return mean, 0.0
    var = float(np.add.reduce((x - mean) ** 2) / (m - 1))
    return mean, 1.96 * math.sqrt(var / m)


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _draw_chunk(seed: int, lo: int, hi: int, N: int, n: int, steps: int,
                dt: float, law: InitialLaw) -> tuple[np.ndarray, np.ndarray,
                                                     np.ndarray]:
    """Initial states and Brownian increments for paths lo..hi-1.

    Stream layout: substream (path, agent) yields n initial-state normals
    followed by the agent's increments; substream (path, _COMMON_STREAM)
    yields the common increments. Adding agents or paths never changes the
    draws of existing ones.
    """
    P = hi - lo
    sqdt = math.sqrt(dt)
    if law.per_agent_sigma is not None:
        roots = [_sqrt_psd(Sig) for Sig in law.per_agent_sigma]
    else:
        roots = [law.sqrt_sigma0()] * N
    X0 = np.empty((P, N, n))
    dW = np.empty((P, N, steps))
    dW0 = np.empty((P, steps))
    for p in range(P):
        path = lo + p
        for i in range(N):
            g = Generator(Philox(key=seed, counter=[0, 0, path, i]))
            vals = g.standard_normal(n + steps)
            X0[p, i] = law.mu0 + roots[i] @ vals[:n]
            dW[p, i] = vals[n:] * sqdt
        g0 = Generator(Philox(key=seed, counter=[0, 0, path, _COMMON_STREAM]))
        dW0[p] = g0.standard_normal(steps) * sqdt
    return X0, dW, dW0


class _GainTable:
    """Per-step dense evaluation of a GainSet, shared by all chunks."""

    def __init__(self, gains: GainSet, ts: np.ndarray, model: ModelParams):
        self.flavor = gains.flavor
        self.Theta = [gains.eval(float(t)) for t in ts]
        B, B0, B1 = model.B, model.B0, model.B1
        # mean-field propagation pieces, used when this flavor co-simulates it
        self.z1 = []
        self.off_drift = []
        self.off_noise = []
        self.w0c = []
        for th, th1, th2 in self.Theta:
            self.z1.append(model.A + model.G - B @ (th + th1))
            self.off_drift.append(B @ th2)
            self.off_noise.append(model.D0 - B0 @ th2)
            self.w0c.append(B0 @ (th + th1))


def _chunk_run(
    model: ModelParams,
    tables: list[_GainTable],
    cfg: SimConfig,
    lo: int,
    hi: int,
    steps: int,
    dt: float,
    K: np.ndarray | None,
    xbar_table: _GainTable | None,
    collect_nodes: bool,
) -> dict:
    """Simulate paths lo..hi-1 for every flavor on shared noise."""
    n = model.n
    N = cfg.N
    A, B, B0, B1 = model.A, model.B, model.B0, model.B1
    D, D0, G = model.D, model.D0, model.G
    Q, R, QF = model.Q, model.R, model.QF
    Gamma, GammaF = model.Gamma, model.GammaF
    X0, dW, dW0 = _draw_chunk(cfg.seed, lo, hi, N, n, steps, dt, cfg.law)
    P = hi - lo
    F = len(tables)
    X = [X0.copy() for _ in range(F)]
    xbar = [np.tile(cfg.law.mu0, (P, 1)) if tb.flavor == "decentralized"
            else None for tb in tables]
    xbar_ext = np.tile(cfg.law.mu0, (P, 1)) if xbar_table is not None else None
    cost = np.zeros((P, F))
    ssq = np.zeros((steps + 1, F))
    track_gap = tables[0].flavor == "decentralized" or xbar_table is not None
    mfacc = np.zeros(steps + 1) if track_gap else None
    nodes = {
        "mean_sq_x1": np.zeros(steps + 1),
        "running_cost": np.zeros(steps + 1),
    } if collect_nodes else None

    for k in range(steps + 1):
        w = dt if 0 < k < steps else dt / 2.0
        for f, tb in enumerate(tables):
            th, th1, th2 = tb.Theta[k]
            Xf = X[f]
            agg = Xf.mean(axis=1)
            ctrl_agg = xbar[f] if tb.flavor == "decentralized" else agg
            U = -Xf @ th.T - (ctrl_agg @ th1.T)[:, None, :] - th2
            dev = Xf - (agg @ Gamma.T)[:, None, :]
            run = (np.einsum("pia,ab,pib->p", dev, Q, dev)
                   + np.einsum("pia,ab,pib->p", U, R, U))
            cost[:, f] += w * run
            ssq[k, f] = np.add.reduce(
                np.einsum("pia,pia->pi", Xf, Xf).ravel())
            if f == 0:
                if collect_nodes:
                    nodes["mean_sq_x1"][k] = np.add.reduce(
                        np.einsum("pa,pa->p", Xf[:, 0, :], Xf[:, 0, :]))
                    nodes["running_cost"][k] = np.add.reduce(run)
                if track_gap:
                    ref = xbar[0] if tb.flavor == "decentralized" else xbar_ext
                    diff = agg - ref
                    mfacc[k] = np.add.reduce(
                        np.einsum("pa,pa->p", diff, diff))
            if k == steps:
                devf = Xf - (agg @ GammaF.T)[:, None, :]
                term = np.einsum("pia,ab,pib->p", devf, QF, devf)
                if K is not None:
                    term = term + 2.0 * np.einsum("pia,a->p", Xf, K)
                cost[:, f] += term
                continue
            u_mean = U.mean(axis=1)
            drift = Xf @ A.T + U @ B.T + (agg @ G.T)[:, None, :]
            idio = (U @ B1.T + D) * dW[:, :, k, None]
            common = ((u_mean @ B0.T + D0) * dW0[:, k, None])[:, None, :]
            X[f] = Xf + drift * dt + idio + common
            if xbar[f] is not None:
                xb = xbar[f]
                xbar[f] = (xb + (xb @ tb.z1[k].T - tb.off_drift[k]) * dt
                           + (tb.off_noise[k] - xb @ tb.w0c[k].T)
                           * dW0[:, k, None])
        if k < steps and xbar_ext is not None:
            tb = xbar_table
            xbar_ext = (xbar_ext
                        + (xbar_ext @ tb.z1[k].T - tb.off_drift[k]) * dt
                        + (tb.off_noise[k] - xbar_ext @ tb.w0c[k].T)
                        * dW0[:, k, None])
        if not all(np.all(np.isfinite(Xf)) for Xf in X):
            raise NonFiniteState(
                f"state escaped to non-finite values near t={(k + 1) * dt:.6g}; "
                "the closed loop is unstable on this grid or the model blows up")

    out = {"cost": cost, "ssq": ssq, "paths": P}
    if track_gap:
        out["mfacc"] = mfacc
    if collect_nodes:
        out["nodes"] = nodes
    return out


def _worker_count(chunks: int) -> int:
    env = os.environ.get("MFLQ_THREADS", "").strip()
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, chunks))


def _run_chunks(model, tables, cfg, K, xbar_table, collect_nodes,
                steps, dt) -> list[dict]:
    ranges = [(lo, min(lo + _CHUNK, cfg.paths))
              for lo in range(0, cfg.paths, _CHUNK)]
    workers = _worker_count(len(ranges))
    if workers == 1:
        return [_chunk_run(model, tables, cfg, lo, hi, steps, dt, K,
                           xbar_table, collect_nodes)
                for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(_chunk_run, model, tables, cfg, lo, hi, steps,
                            dt, K, xbar_table, collect_nodes)
                for lo, hi in ranges]
        return [f.result() for f in futs]


def _combine(results: list[dict], cfg) -> dict:
    # chunk results combined in submission order: reductions stay pairwise
    # and order-fixed, so worker count cannot perturb the output
    cost = np.concatenate([r["cost"] for r in results], axis=0)
    ssq = np.add.reduce(np.array([r["ssq"] for r in results]), axis=0)
    out = {
        "cost": cost,
        "second_moment": ssq / (cfg.paths * cfg.N),
    }
    if "mfacc" in results[0]:
        mf = np.add.reduce(np.array([r["mfacc"] for r in results]), axis=0)
        out["mf_profile"] = mf / cfg.paths
    if "nodes" in results[0]:
        out["nodes"] = {
            key: np.add.reduce(np.array([r["nodes"][key] for r in results]),
                               axis=0) / cfg.paths
            for key in results[0]["nodes"]
        }
    return out


def simulate(
    model: ModelParams,
    gains: GainSet,
    cfg: SimConfig,
    *,
    terminal_linear: np.ndarray | None = None,
    collect_node_stats: bool = False,
) -> SimResult:
    """Estimate the social cost of a feedback law by Euler-Maruyama.

    Centralized gains aggregate through the empirical average of the agent
    states; decentralized gains aggregate through a co-simulated mean field
    process sharing the common-noise increments. Running cost uses the
    trapezoid rule on the simulation grid.
    """
    steps = cfg.steps(model.T)
    dt = model.T / steps
    ts = np.linspace(0.0, model.T, steps + 1)
    table = _GainTable(gains, ts, model)
    K = None if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(model.n)
    results = _run_chunks(model, [table], cfg, K, None, collect_node_stats,
                          steps, dt)
    agg = _combine(results, cfg)
    per_path = agg["cost"][:, 0]
    mean, ci = _mean_ci(per_path)
    mf_err = (float(np.max(agg["mf_profile"]))
              if "mf_profile" in agg else None)
    node_stats = None
    if collect_node_stats:
        node_stats = {
            "t": ts,
            "mean_sq_x1": agg["nodes"]["mean_sq_x1"],
            "mean_sq_mfgap": (agg["mf_profile"] if "mf_profile" in agg
                              else np.full(steps + 1, np.nan)),
            "running_cost": agg["nodes"]["running_cost"],
        }
    return SimResult(
        J_soc_hat=mean, ci_half=ci, per_agent=mean / cfg.N,
        second_moment_max=float(np.max(agg["second_moment"][:, 0])),
        mf_error=mf_err, node_stats=node_stats, paths=cfg.paths,
    )


def mf_error(
    model: ModelParams,
    limit: LimitSolution,
    cfg: SimConfig,
    *,
    finite: FiniteSolution | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> float:
    """sup over the grid of the mean squared empirical-average error.

    Agents run under the N-agent centralized gains while the mean field
    process runs under the limit gains, both driven by one W_0 per path; the
    returned value estimates sup_t E|X^(N)(t) - Xbar(t)|^2.
    """
    if finite is None:
        out = solve_finite(model, cfg.N, limit.terminal_linear,
                           rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("population system unsolvable: "
                               + out.failure_reason())
        finite = out.solution
    steps = cfg.steps(model.T)
    dt = model.T / steps
    ts = np.linspace(0.0, model.T, steps + 1)
    table = _GainTable(centralized_gains(model, cfg.N, finite), ts, model)
    xbar_table = _GainTable(decentralized_gains(model, limit), ts, model)
    results = _run_chunks(model, [table], cfg, None, xbar_table, False,
                          steps, dt)
    agg = _combine(results, cfg)
    return float(np.max(agg["mf_profile"]))


def gap_exact(
    model: ModelParams,
    N: int,
    limit: LimitSolution,
    law: InitialLaw,
    *,
    finite: FiniteSolution | None = None,
    check: CheckSolution | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> dict:
    """Exact decentralized-minus-optimal social cost at population N.

    Evaluates the ODE expression: a trace term over the initial covariances,
    an N-scaled quadratic in the five-matrix weight difference, and the
    offset differences; no sampling involved. Keys: gap, zeta0N,
    linear_term, constant_term, sum_difference (the t=0 weight-difference
    matrix driving the quadratic).
    """
    if finite is None:
        out = solve_finite(model, N, limit.terminal_linear,
                           rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("population system unsolvable: "
                               + out.failure_reason())
        finite = out.solution
    if check is None:
        chk_out = solve_check(model, N, limit, rtol=rtol, atol=atol)
        if not chk_out.ok:
            raise RuntimeError("decentralized-cost system failed: "
                               + chk_out.failure_reason())
        check = chk_out.solution
    mu0 = law.mu0
    cL1 = check.cLambda1N.t0_value
    cL2 = check.cLambda2N.t0_value
    cL12 = check.cLambda12N.t0_value
    cL22 = check.cLambda22N.t0_value
    L1 = finite.Lambda1N.t0_value
    L2 = finite.Lambda2N.t0_value
    sum_diff = cL1 + cL2 + cL12 + cL12.T + cL22 - L1 - L2
    if law.per_agent_sigma is not None:
        if len(law.per_agent_sigma) != N:
            raise ValueError(
                f"need {N} per-agent covariances, got {len(law.per_agent_sigma)}")
        trace_term = float(sum(np.trace((cL1 - L1) @ Sig)
                               for Sig in law.per_agent_sigma))
    else:
        trace_term = N * float(np.trace((cL1 - L1) @ law.sigma0))
    zeta = (trace_term + N * float(mu0 @ sum_diff @ mu0)
            - float(mu0 @ (cL2 - L2) @ mu0))
    linear = 2.0 * N * float(
        mu0 @ (check.cS1N.t0_value + check.cS2N.t0_value
               - finite.SN.t0_value))
    constant = N * float(check.crN.t0_value - finite.rN.t0_value)
    return {
        "gap": zeta + linear + constant,
        "zeta0N": zeta,
        "linear_term": linear,
        "constant_term": constant,
        "sum_difference": sum_diff,
    }


def gap_sweep(
    model: ModelParams,
    Ns,
    law: InitialLaw,
    *,
    limit: LimitSolution | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> dict:
    """gap_exact across populations, reusing one limit solve."""
    if limit is None:
        out = solve_limit(model, rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("limit system unsolvable: "
                               + out.failure_reason())
        limit = out.solution
    Ns = [int(N) for N in Ns]
    rows = {"N": np.array(Ns, dtype=int)}
    gaps, zetas, lins, consts, sums = [], [], [], [], []
    for N in Ns:
        rep = gap_exact(model, N, limit, law, rtol=rtol, atol=atol)
        gaps.append(rep["gap"])
        zetas.append(rep["zeta0N"])
        lins.append(rep["linear_term"])
        consts.append(rep["constant_term"])
        sums.append(rep["sum_difference"])
    rows["gap"] = np.array(gaps)
    rows["zeta0N"] = np.array(zetas)
    rows["linear"] = np.array(lins)
    rows["constant"] = np.array(consts)
    rows["sum_difference"] = np.array(sums)
    return rows


def gap_monte_carlo(
    model: ModelParams,
    N: int,
    cfg: SimConfig,
    *,
    limit: LimitSolution | None = None,
    finite: FiniteSolution | None = None,
    terminal_linear: np.ndarray | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> dict:
    """Paired-path estimate of the decentralized optimality gap.

    Both controls see identical initial draws and Brownian increments, so
    the O(1) gap survives the O(N) per-cost noise. Keys: J_Ud_hat, J_Uo_hat,
    gap_hat, ci (95% half-width of the paired difference), plus the
    per-cost half-widths ci_Ud and ci_Uo.
    """
    cfg = replace(cfg, N=N)
    if not cfg.crn:
        raise ValueError("gap estimation requires common random numbers")
    if limit is None:
        out = solve_limit(model, terminal_linear, rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("limit system unsolvable: "
                               + out.failure_reason())
        limit = out.solution
    if finite is None:
        out = solve_finite(model, N, limit.terminal_linear,
                           rtol=rtol, atol=atol)
        if not out.ok:
            raise RuntimeError("population system unsolvable: "
                               + out.failure_reason())
        finite = out.solution
    steps = cfg.steps(model.T)
    dt = model.T / steps
    ts = np.linspace(0.0, model.T, steps + 1)
    tables = [
        _GainTable(decentralized_gains(model, limit), ts, model),
        _GainTable(centralized_gains(model, N, finite), ts, model),
    ]
    K = limit.terminal_linear if terminal_linear is None else \
        np.asarray(terminal_linear, dtype=float).reshape(model.n)
    if not np.any(K):
        K = None
    results = _run_chunks(model, tables, cfg, K, None, False, steps, dt)
    cost = np.concatenate([r["cost"] for r in results], axis=0)
    j_ud, ci_ud = _mean_ci(cost[:, 0])
    j_uo, ci_uo = _mean_ci(cost[:, 1])
    gap_hat, ci = _mean_ci(cost[:, 0] - cost[:, 1])
    return {"J_Ud_hat": j_ud, "J_Uo_hat": j_uo, "gap_hat": gap_hat,
            "ci": ci, "ci_Ud": ci_ud, "ci_Uo": ci_uo}
