import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mflq import (
    AsymmetricMatrix,
    DimensionMismatch,
    InitialLaw,
    NonFiniteEntry,
    NonPositiveHorizon,
    PRESET_NAMES,
    UnknownPreset,
    build_model,
    derived_weights,
    dump_model,
    load_model,
    scalar_model,
)
from mflq.model import sym


def _raw(**kw):
    base = dict(n=1, n1=1, A=[[1.0]], B=[[1.0]], B0=[[0.2]], B1=[[0.2]],
                D=[0.0], D0=[0.0], G=[[2.0]], Gamma=[[0.1]],
                GammaF=[[0.1]], Q=[[4.0]], R=[[1.0]], QF=[[2.0]], T=2.0)
    base.update(kw)
    return SimpleNamespace(**base)


def test_preset_names():
    assert PRESET_NAMES == ("decoupled_m0", "example1", "example2",
                            "example3", "portfolio_lq")


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        scalar_model("nope")


def test_derived_weights_example1(ex1):
    dw = derived_weights(ex1)
    # (I - 0.1)' 4 (I - 0.1) = 3.24 and the cross-term expansion -0.76
    assert abs(dw.QGamma[0, 0] - (-0.76)) < 1e-14
    assert abs(dw.Q3[0, 0] - 3.24) < 1e-14
    assert abs(dw.QGammaF[0, 0] - (-0.38)) < 1e-14


def test_derived_weights_example2(ex2):
    dw = derived_weights(ex2)
    assert abs(dw.QGamma[0, 0] - 8.0) < 1e-13
    assert abs(dw.QGammaF[0, 0] - 0.0) < 1e-13


def test_build_model_rejects_bad_dims():
    with pytest.raises(DimensionMismatch):
        build_model(_raw(B=[[1.0], [1.0]]))


def test_build_model_rejects_nan():
    with pytest.raises(NonFiniteEntry):
        build_model(_raw(A=[[np.nan]]))


def test_build_model_rejects_nonpositive_horizon():
    with pytest.raises(NonPositiveHorizon):
        build_model(_raw(T=0.0))


def test_build_model_rejects_asymmetric_weight():
    raw = _raw(n=2, n1=1, A=[[1, 0], [0, 1]], B=[[1], [0]],
               B0=[[0], [0]], B1=[[0], [0]], D=[0, 0], D0=[0, 0],
               G=[[0, 0], [0, 0]], Gamma=[[0, 0], [0, 0]],
               GammaF=[[0, 0], [0, 0]],
               Q=[[1, 0.5], [0.1, 1]],  # asymmetric beyond tolerance
               R=[[1]], QF=[[1, 0], [0, 1]])
    with pytest.raises(AsymmetricMatrix):
        build_model(raw)


def test_dump_load_roundtrip(tmp_path, ex2):
    path = tmp_path / "model.json"
    dump_model(ex2, path)
    loaded, dw = load_model(path)
    for field in ("A", "B", "B0", "B1", "D", "D0", "G", "Gamma",
                  "GammaF", "Q", "R", "QF"):
        np.testing.assert_array_equal(getattr(loaded, field),
                                      getattr(ex2, field))
    assert loaded.T == ex2.T and loaded.n == ex2.n and loaded.n1 == ex2.n1
    assert dw.QGamma[0, 0] == derived_weights(ex2).QGamma[0, 0]


def test_load_model_missing_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 1}))
    with pytest.raises(DimensionMismatch):
        load_model(path)


def test_initial_law_validation():
    with pytest.raises(Exception):
        InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[-1.0]]))
    law = InitialLaw(mu0=np.array([1.0, 2.0]),
                     sigma0=np.array([[2.0, 0.5], [0.5, 1.0]]))
    root = law.sqrt_sigma0()
    np.testing.assert_allclose(root @ root.T, law.sigma0, atol=1e-12)


def test_initial_law_per_agent():
    per = [np.array([[0.0]]), np.array([[1.0]])]
    law = InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.5]]),
                     per_agent_sigma=per)
    assert len(law.per_agent_sigma) == 2


@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_sym_projection(vals):
    M = np.array(vals).reshape(2, 2)
    S = sym(M)
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_allclose(sym(S), S, atol=1e-9)
    # projection is the symmetric part, exactly
    np.testing.assert_allclose(S, (M + M.T) / 2.0, atol=1e-9)
