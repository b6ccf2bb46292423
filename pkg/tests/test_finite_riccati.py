import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from types import SimpleNamespace

from mflq import (
    build_model,
    convergence_table,
    en_hn,
    g1_g2,
    r1,
    r2,
    solve_check,
    solve_finite,
    sup_distance,
    xi_n,
)


def _scalar(A=1.0, B=1.0, B0=0.2, B1=0.2, G=2.0, Gamma=0.1, GammaF=0.1,
            Q=4.0, R=1.0, QF=2.0, T=2.0, D=0.0, D0=0.0):
    raw = SimpleNamespace(
        n=1, n1=1, A=[[A]], B=[[B]], B0=[[B0]], B1=[[B1]], D=[D], D0=[D0],
        G=[[G]], Gamma=[[Gamma]], GammaF=[[GammaF]], Q=[[Q]], R=[[R]],
        QF=[[QF]], T=T)
    return build_model(raw)[0]


def test_en_hn_hand_value():
    # R1 = 1 and R2 - B0' L2 B0 / N = 2.5 at N=2 give EN = -0.3, HN = 0.7
    model = _scalar(B0=1.0, B1=0.0, R=1.0)
    L1 = np.array([[0.0]])
    L2 = np.array([[3.0]])
    EN, HN = en_hn(model, 2, L1, L2)
    assert abs(EN.item() - (-0.3)) < 1e-14
    assert abs(HN.item() - 0.7) < 1e-14


@given(
    l1=st.floats(-0.4, 2.0),
    l2=st.floats(-0.4, 2.0),
    b0=st.floats(-1.0, 1.0),
    b1=st.floats(-1.0, 1.0),
    N=st.integers(1, 16),
)
@settings(max_examples=60, deadline=None)
def test_xi_n_matches_literal_difference(l1, l2, b0, b1, N):
    model = _scalar(B0=b0, B1=b1, R=1.0)
    L1, L2 = np.array([[l1]]), np.array([[l2]])
    R1 = r1(model, L1)
    R2 = r2(model, L1, L2)
    if R1.item() < 0.3 or R2.item() < 0.3:
        return  # keep all inverses well conditioned
    R2N = R2 - b0 * L2.item() * b0 / N
    if R2N.item() < 0.3:
        return
    EN, _ = en_hn(model, N, L1, L2)
    literal = N * EN + np.linalg.inv(R1) - np.linalg.inv(R2)
    got = xi_n(model, N, L1, L2)
    np.testing.assert_allclose(got, literal, atol=1e-9)


def test_en_symmetry_along_solve(ex1):
    fin = solve_finite(ex1, 7).solution
    for k, t in enumerate(fin.Lambda1N.grid):
        EN, _ = en_hn(ex1, 7, fin.Lambda1N.values[k], fin.Lambda2N.values[k])
        assert np.max(np.abs(EN - EN.T)) <= 1e-10


def test_terminal_values(ex1):
    from mflq import derived_weights
    dw = derived_weights(ex1)
    fin = solve_finite(ex1, 4).solution
    np.testing.assert_allclose(fin.Lambda1N.terminal_value,
                               ex1.QF + dw.QGammaF / 4, atol=1e-12)
    np.testing.assert_allclose(fin.Lambda2N.terminal_value, dw.QGammaF,
                               atol=1e-12)
    np.testing.assert_allclose(fin.SN.terminal_value, 0.0, atol=1e-12)
    assert fin.rN.terminal_value.item() == 0.0
    assert fin.N == 4


def test_effective_weight_margins(ex2):
    fin = solve_finite(ex2, 3).solution
    assert float(np.min(fin.min_eig_R1.values)) > 0
    assert float(np.min(fin.min_eig_R2.values)) > 0
    assert float(np.min(fin.min_eig_R2N.values)) > 0


def test_g_perturbations_decay(ex1):
    def gsup(N):
        fin = solve_finite(ex1, N).solution
        worst = 0.0
        for k in range(len(fin.Lambda1N.grid)):
            g1, g2 = g1_g2(ex1, N, fin.Lambda1N.values[k],
                           fin.Lambda2N.values[k])
            worst = max(worst, np.max(np.abs(g1)) + np.max(np.abs(g2)))
        return worst

    assert gsup(200) < gsup(100)


def test_example3_finite_population_blows_up(ex3):
    out = solve_finite(ex3, 2)
    assert not out.ok
    assert 0.0 < out.failure_time < ex3.T


def test_m0_check_system_trivial(m0, lim_m0):
    out = solve_check(m0, 2, lim_m0)
    assert out.ok
    chk = out.solution
    ts = np.linspace(0.0, m0.T, 41)
    for t in ts:
        # two independent adaptive solves agree to their shared budget
        assert abs(chk.cLambda1N.eval(t).item()
                   - lim_m0.Lambda1.eval(t).item()) < 1e-7
        for name in ("cLambda2N", "cLambda12N", "cLambda22N",
                     "cS1N", "cS2N"):
            assert np.max(np.abs(getattr(chk, name).eval(t))) < 1e-9
        assert abs(chk.crN.eval(t).item()) < 1e-9


def test_check_system_terminals(ex1, lim1):
    K = np.array([0.4])
    from mflq import solve_limit
    lim = solve_limit(ex1, K).solution
    chk = solve_check(ex1, 5, lim).solution
    np.testing.assert_allclose(chk.cS1N.terminal_value, K, atol=1e-12)
    np.testing.assert_allclose(chk.cS2N.terminal_value, 0.0, atol=1e-12)
    from mflq import derived_weights
    dw = derived_weights(ex1)
    np.testing.assert_allclose(chk.cLambda1N.terminal_value,
                               ex1.QF + dw.QGammaF / 5, atol=1e-12)
    np.testing.assert_allclose(chk.cLambda2N.terminal_value, dw.QGammaF,
                               atol=1e-12)


def test_check_difference_rate(ex1, lim1):
    # Lambda_check1 - Lambda1N contracts like 1/N
    def diff(N):
        fin = solve_finite(ex1, N).solution
        chk = solve_check(ex1, N, lim1).solution
        return sup_distance(chk.cLambda1N, fin.Lambda1N)

    d25, d50 = diff(25), diff(50)
    assert 1.5 <= d25 / d50 <= 2.5


def test_convergence_table_m0(m0):
    table = convergence_table(m0, [4, 8])
    assert np.all(table["e1"] <= 1e-9)
    assert np.all(table["e2"] <= 1e-9)
    assert np.all(table["eS"] <= 1e-9)
    assert np.all(table["er"] <= 1e-9)


def test_convergence_table_unsolvable(ex3):
    with pytest.raises(RuntimeError):
        convergence_table(ex3, [4])
