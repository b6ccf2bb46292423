from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from mflq import (
    InitialLaw,
    SimConfig,
    build_model,
    centralized_gains,
    decentralized_gains,
    gap_exact,
    gap_monte_carlo,
    gap_sweep,
    optimal_value,
    simulate,
    solve_finite,
    solve_limit,
)


def _law(mu=1.0, var=0.0):
    return InitialLaw(mu0=np.array([mu]), sigma0=np.array([[var]]))


def test_sim_config_validation():
    with pytest.raises(Exception):
        SimConfig(N=0, paths=10, law=_law())
    with pytest.raises(Exception):
        SimConfig(N=2, paths=0, law=_law())
    cfg = SimConfig(N=2, paths=10, law=_law(), dt=0.25)
    assert cfg.steps(1.0) == 4
    with pytest.raises(Exception):
        SimConfig(N=2, paths=10, law=_law(), dt=0.3).steps(1.0)


def test_m0_deterministic_cost(m0, lim_m0):
    # no diffusion terms at all: every path realizes the exact cost
    gains = decentralized_gains(m0, lim_m0)
    cfg = SimConfig(N=3, paths=4, law=_law(), dt=1e-3)
    res = simulate(m0, gains, cfg)
    assert res.ci_half == 0.0
    assert abs(res.per_agent - 0.5) < 1e-2
    assert abs(res.J_soc_hat - 3 * res.per_agent) < 1e-12


def test_zero_model_zero_cost():
    # all-zero data is not solvable (R1 = 0), so wire zero gains by hand
    from mflq import GainSet, MatrixTrajectory
    raw = SimpleNamespace(n=1, n1=1, A=[[0.0]], B=[[0.0]], B0=[[0.0]],
                          B1=[[0.0]], D=[0.0], D0=[0.0], G=[[0.0]],
                          Gamma=[[0.0]], GammaF=[[0.0]], Q=[[0.0]],
                          R=[[0.0]], QF=[[0.0]], T=1.0)
    model = build_model(raw)[0]
    grid = np.array([0.0, 1.0])
    z = MatrixTrajectory(grid=grid, values=np.zeros((2, 1, 1)))
    gains = GainSet(flavor="decentralized", N=None, Theta=z, Theta1=z,
                    Theta2=MatrixTrajectory(grid=grid,
                                            values=np.zeros((2, 1))),
                    aux={})
    res = simulate(model, gains, SimConfig(N=2, paths=8, law=_law(0.0)))
    assert res.J_soc_hat == 0.0 and res.ci_half == 0.0


def test_worker_count_invariance(ex1, lim1, monkeypatch):
    gains = decentralized_gains(ex1, lim1)
    cfg = SimConfig(N=5, paths=600, law=_law(1.0, 1.0), seed=11)
    monkeypatch.setenv("MFLQ_THREADS", "1")
    a = simulate(ex1, gains, cfg, collect_node_stats=True)
    monkeypatch.setenv("MFLQ_THREADS", "4")
    b = simulate(ex1, gains, cfg, collect_node_stats=True)
    assert a.J_soc_hat == b.J_soc_hat
    assert a.ci_half == b.ci_half
    np.testing.assert_array_equal(a.node_stats["mean_sq_x1"],
                                  b.node_stats["mean_sq_x1"])
    np.testing.assert_array_equal(a.node_stats["running_cost"],
                                  b.node_stats["running_cost"])


def test_seed_changes_result(ex1, lim1):
    gains = decentralized_gains(ex1, lim1)
    base = SimConfig(N=4, paths=100, law=_law(1.0, 1.0), seed=0)
    res0 = simulate(ex1, gains, base)
    res0b = simulate(ex1, gains, base)
    res1 = simulate(ex1, gains, replace(base, seed=1))
    assert res0.J_soc_hat == res0b.J_soc_hat
    assert res0.J_soc_hat != res1.J_soc_hat


def test_mc_hits_closed_form(ex1, lim1):
    fin = solve_finite(ex1, 10).solution
    gains = centralized_gains(ex1, 10, fin)
    law = _law()
    cfg = SimConfig(N=10, paths=800, law=law, seed=5)
    res = simulate(ex1, gains, cfg)
    closed = optimal_value(ex1, 10, law, finite=fin)
    # 3-sigma plus a small Euler bias allowance
    assert abs(res.J_soc_hat - closed["J_soc"]) \
        < 3.0 * res.ci_half + 0.02 * abs(closed["J_soc"])


def test_per_agent_spreads_enter_trace(m0, lim_m0):
    per = [np.array([[0.0]]), np.array([[1.0]])]
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.5]]),
                     per_agent_sigma=per)
    gains = decentralized_gains(m0, lim_m0)
    cfg = SimConfig(N=2, paths=4000, law=law, dt=0.01, seed=2)
    res = simulate(m0, gains, cfg)
    closed = optimal_value(m0, 2, law)
    assert abs(res.J_soc_hat - closed["J_soc"]) \
        < 3.0 * res.ci_half + 0.02 * abs(closed["J_soc"])


def test_m0_gap_exact_vanishes(m0):
    lim = solve_limit(m0, rtol=1e-11, atol=1e-13).solution
    law = _law()
    for N in (1, 5, 40):
        out = gap_exact(m0, N, lim, law, rtol=1e-11, atol=1e-13)
        assert abs(out["gap"]) <= 1e-9


def test_gap_exact_positive_and_bounded(ex1, lim1, unit_law):
    vals = {N: gap_exact(ex1, N, lim1, unit_law)["gap"]
            for N in (2, 10, 50)}
    assert all(v >= -1e-8 for v in vals.values())
    assert vals[50] < vals[2]  # shrinking toward the O(1) plateau


def test_gap_sweep_matches_pointwise(ex1, lim1, unit_law):
    table = gap_sweep(ex1, [2, 4], unit_law, limit=lim1)
    single = gap_exact(ex1, 4, lim1, unit_law)
    k = list(table["N"]).index(4)
    assert abs(table["gap"][k] - single["gap"]) < 1e-10
    assert table["sum_difference"][k].shape == (1, 1)


def test_gap_monte_carlo_paired(m0):
    # identical controls at both flavors under shared noise: exact zero
    cfg = SimConfig(N=3, paths=50, law=_law(1.0, 1.0), seed=9)
    out = gap_monte_carlo(m0, 3, cfg)
    assert out["gap_hat"] == 0.0
    assert out["ci"] == 0.0


def test_gap_monte_carlo_requires_crn(ex1):
    cfg = SimConfig(N=3, paths=50, law=_law(), seed=0, crn=False)
    with pytest.raises(ValueError):
        gap_monte_carlo(ex1, 3, cfg)
