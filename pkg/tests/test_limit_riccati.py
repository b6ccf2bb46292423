import numpy as np
import pytest

from mflq import (
    asymptotic_solvability,
    decentralized_gains,
    interpretation_gains,
    psi1,
    r1,
    r2,
    residual_check,
    solve_limit,
    sufficient_probe,
)
from mflq.limit_riccati import solve_limit_lambda3


def test_m0_closed_form(m0, lim_m0):
    # decoupled scalar flow: Lambda1(t) = 1 / (1 + T - t)
    ts = np.linspace(0.0, m0.T, 101)
    exact = 1.0 / (1.0 + m0.T - ts)
    got = np.array([lim_m0.Lambda1.eval(t).item() for t in ts])
    assert np.max(np.abs(got - exact)) < 1e-7
    assert abs(lim_m0.Lambda1.t0_value.item() - 0.5) < 1e-8
    for t in ts:
        assert abs(lim_m0.Lambda2.eval(t).item()) < 1e-10
        assert abs(lim_m0.S.eval(t).item()) < 1e-12
        assert abs(lim_m0.r.eval(t).item()) < 1e-12


def test_terminal_wiring(ex1, lim1):
    np.testing.assert_allclose(lim1.Lambda1.terminal_value, ex1.QF,
                               atol=1e-12)
    np.testing.assert_allclose(lim1.Lambda2.terminal_value,
                               np.array([[-0.38]]), atol=1e-12)
    np.testing.assert_allclose(lim1.S.terminal_value, 0.0, atol=1e-12)
    assert float(lim1.r.terminal_value) == 0.0


def test_terminal_linear_sets_S(ex1):
    K = np.array([0.7])
    out = solve_limit(ex1, K)
    assert out.ok
    np.testing.assert_allclose(out.solution.S.terminal_value, K, atol=1e-12)
    np.testing.assert_array_equal(out.solution.terminal_linear, K)


def test_example1_solvable(ex1):
    v = asymptotic_solvability(ex1)
    assert v.solvable
    assert v.failure_time is None


def test_example2_solvable_despite_negative_R(ex2):
    assert ex2.R.item() == -1.0
    v = asymptotic_solvability(ex2)
    assert v.solvable


def test_example3_unsolvable_inside_horizon(ex3):
    v = asymptotic_solvability(ex3)
    assert not v.solvable
    assert 0.0 < v.failure_time < ex3.T
    assert v.failed_constraint
    assert v.reason


def test_effective_weights_positive(ex1, ex2, lim1, lim2):
    for model, lim in ((ex1, lim1), (ex2, lim2)):
        assert float(np.min(lim.min_eig_R1.values)) > 0.0
        assert float(np.min(lim.min_eig_R2.values)) > 0.0
        for t in np.linspace(0.0, model.T, 17):
            L1, L2 = lim.Lambda1.eval(t), lim.Lambda2.eval(t)
            assert np.linalg.eigvalsh(r1(model, L1))[0] > 0
            assert np.linalg.eigvalsh(r2(model, L1, L2))[0] > 0


def test_riccati_residual(ex1, lim1):
    res = residual_check(lim1.Lambda1, lambda t, v: psi1(ex1, v), num=2001)
    assert res < 1e-4


def test_lambda3_consistency(ex1, lim1):
    out3 = solve_limit_lambda3(ex1)
    assert out3.ok
    direct = out3.trajectories["Lambda3"]
    ts = np.linspace(0.0, ex1.T, 101)
    d = max(np.max(np.abs(direct.eval(t) - lim1.Lambda3.eval(t)))
            for t in ts)
    assert d < 1e-7


def test_interpretation_gains_match_theta(ex1, lim1):
    g1, _ = interpretation_gains(ex1, lim1)
    dec = decentralized_gains(ex1, lim1)
    d = max(np.max(np.abs(g1.values[k] - dec.eval(t)[0]))
            for k, t in enumerate(g1.grid))
    assert d < 1e-12


def test_sufficient_probe_example1(ex1):
    rep = sufficient_probe(ex1, np.array([[0.5]]))
    assert rep.holds_for_Lambda1 and rep.holds_for_Lambda3
    assert all(float(np.min(v)) > 0.0 for v in rep.margins.values())


def test_sufficient_probe_rejects_bad_weight(ex2):
    # requires Q >= 0, QF >= 0, K > 0; a nonpositive K is a usage error
    with pytest.raises(Exception):
        sufficient_probe(ex2, np.array([[-1.0]]))
