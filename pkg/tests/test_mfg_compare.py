from types import SimpleNamespace

import numpy as np
import pytest

from mflq import (
    InitialLaw,
    PreconditionViolated,
    build_model,
    mfg_compare,
    mfg_quadratic_weight,
    residual_check,
    solve_mfg,
    sup_distance,
    weight_difference,
)
from mflq.limit_riccati import psi1


def test_terminal_data(ex1):
    out = solve_mfg(ex1)
    assert out.ok
    mfg = out.solution
    gf, qf = ex1.GammaF, ex1.QF
    np.testing.assert_allclose(mfg.Lambda1g.terminal_value, qf, atol=1e-12)
    np.testing.assert_allclose(mfg.Lambda2g.terminal_value, -qf @ gf,
                               atol=1e-12)
    np.testing.assert_allclose(mfg.Lambda3g.terminal_value,
                               gf.T @ qf @ gf, atol=1e-12)
    np.testing.assert_allclose(mfg.Lambda4g.terminal_value,
                               gf.T @ qf @ gf, atol=1e-12)


def test_lambda1g_equals_limit_lambda1(ex1, ex2, lim1, lim2):
    for model, lim in ((ex1, lim1), (ex2, lim2)):
        mfg = solve_mfg(model).solution
        assert sup_distance(mfg.Lambda1g, lim.Lambda1) < 1e-7
        # same Riccati flow, so the same residual structure
        res = residual_check(mfg.Lambda1g,
                             lambda t, v: psi1(model, v), num=2001)
        assert res < 1e-4


def test_gain_nonnegative_and_frozen_value(ex1, lim1):
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.0]]))
    out = mfg_compare(ex1, law, limit=lim1)
    assert out["gain"] >= -1e-8
    assert out["J_mfg_bar"] >= out["J_soc_bar"] - 1e-8
    # pinned regression value for the default study
    assert abs(out["gain"] - 1.650674641262892) < 1e-6


def test_m0_gain_vanishes(m0):
    # near-zero difference of two independent solves needs tight budgets
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[1.0]]))
    out = mfg_compare(m0, law, rtol=1e-11, atol=1e-13)
    assert abs(out["gain"]) <= 1e-9


def test_weight_difference_consistency(ex1, lim1):
    mfg = solve_mfg(ex1).solution
    diff = weight_difference(lim1, mfg)
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.0]]))
    out = mfg_compare(ex1, law, limit=lim1, mfg=mfg)
    # with a point mass at 1 the gain is exactly the t=0 weight difference
    assert abs(diff.eval(0.0).item() - out["gain"]) < 1e-12
    w0 = mfg_quadratic_weight(mfg, 0.0)
    np.testing.assert_allclose(w0 - lim1.Lambda3.eval(0.0),
                               diff.eval(0.0), atol=1e-12)


def test_requires_centered_noise(ex1):
    raw = SimpleNamespace(n=1, n1=1, A=[[1.0]], B=[[1.0]], B0=[[0.2]],
                          B1=[[0.2]], D=[0.0], D0=[0.3], G=[[2.0]],
                          Gamma=[[0.1]], GammaF=[[0.1]], Q=[[4.0]],
                          R=[[1.0]], QF=[[2.0]], T=2.0)
    model = build_model(raw)[0]
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.0]]))
    with pytest.raises(PreconditionViolated):
        mfg_compare(model, law)


def test_zero_terminal_weight_zeroes_terminals(ex1):
    raw = SimpleNamespace(n=1, n1=1, A=[[1.0]], B=[[1.0]], B0=[[0.2]],
                          B1=[[0.2]], D=[0.0], D0=[0.0], G=[[2.0]],
                          Gamma=[[0.1]], GammaF=[[0.1]], Q=[[4.0]],
                          R=[[1.0]], QF=[[0.0]], T=2.0)
    model = build_model(raw)[0]
    mfg = solve_mfg(model).solution
    for name in ("Lambda2g", "Lambda3g", "Lambda4g"):
        assert np.max(np.abs(getattr(mfg, name).terminal_value)) < 1e-15
