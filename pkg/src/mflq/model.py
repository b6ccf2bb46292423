"""Problem data for LQ mean field social optimization.

A model is the tuple (A, B, B0, B1, D, D0, G, Gamma, GammaF, Q, R, QF, T)
with state dimension n and control dimension n1. Both Brownian motions are
scalar, so D and D0 are single columns stored as flat n-vectors. Q, R and QF
may be indefinite; no sign constraint is imposed on construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricMatrix,
    DimensionMismatch,
    NonFiniteEntry,
    NonPositiveHorizon,
    PreconditionViolated,
    UnknownPreset,
)

# Intake tolerance: asymmetry up to this (relative) size is silently folded
# into the symmetric part, anything larger is rejected.
_SYM_INTAKE_TOL = 1e-9


def _coerce(name: str, value, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape((1,) * len(shape))
    if len(shape) == 1:
        arr = arr.reshape(-1)
    if arr.shape != shape:
        raise DimensionMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry(f"{name} contains non-finite entries")
    return arr


def _symmetrize_weight(name: str, M: np.ndarray) -> np.ndarray:
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > _SYM_INTAKE_TOL * max(1.0, float(np.max(np.abs(M)))):
        raise AsymmetricMatrix(f"{name} asymmetry {asym:.3e} exceeds intake tolerance")
    return (M + M.T) / 2.0


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetric part (M + M^T)/2."""
    return (M + M.T) / 2.0


@dataclass(frozen=True)
class ModelParams:
    """The problem datum. Construct raw, then pass through build_model."""

    n: int
    n1: int
    A: np.ndarray
    B: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    D: np.ndarray
    D0: np.ndarray
    G: np.ndarray
    Gamma: np.ndarray
    GammaF: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QF: np.ndarray
    T: float


@dataclass(frozen=True)
class DerivedWeights:
    """Coupling-adjusted weights derived from (Q, QF, Gamma, GammaF)."""

    QGamma: np.ndarray
    QGammaF: np.ndarray
    Q3: np.ndarray
    Q3F: np.ndarray


@dataclass(frozen=True)
class InitialLaw:
    """Common initial law of the agents: mean mu0, covariance sigma0.

    per_agent_sigma optionally overrides the covariance agent by agent; the
    mean stays common.
    """

    mu0: np.ndarray
    sigma0: np.ndarray
    per_agent_sigma: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        n = mu0.size
        sigma0 = _coerce("sigma0", self.sigma0, (n, n))
        sigma0 = _symmetrize_weight("sigma0", sigma0)
        if np.linalg.eigvalsh(sigma0)[0] < -1e-10:
            raise PreconditionViolated("sigma0 must be positive semidefinite")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)
        if self.per_agent_sigma is not None:
            sigmas = tuple(
                _symmetrize_weight("per_agent_sigma", _coerce("per_agent_sigma", s, (n, n)))
                for s in self.per_agent_sigma
            )
            object.__setattr__(self, "per_agent_sigma", sigmas)

    def sqrt_sigma0(self) -> np.ndarray:
        """Symmetric PSD square root of sigma0 (negative eigenvalues clipped)."""
        w, V = np.linalg.eigh(self.sigma0)
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def build_model(raw: ModelParams) -> tuple[ModelParams, DerivedWeights]:
    """Validate and normalize a raw datum; return it with derived weights.

    Weights Q, R, QF are symmetrized on intake. Idempotent: rebuilding the
    returned ModelParams changes nothing.
    """
    n, n1 = int(raw.n), int(raw.n1)
    if n < 1 or n1 < 1:
        raise DimensionMismatch("state and control dimensions must be positive")
    T = float(raw.T)
    if not np.isfinite(T) or T <= 0.0:
        raise NonPositiveHorizon(f"T must be a positive finite real, got {T}")

    A = _coerce("A", raw.A, (n, n))
    B = _coerce("B", raw.B, (n, n1))
    B0 = _coerce("B0", raw.B0, (n, n1))
    B1 = _coerce("B1", raw.B1, (n, n1))
    D = _coerce("D", raw.D, (n,))
    D0 = _coerce("D0", raw.D0, (n,))
    G = _coerce("G", raw.G, (n, n))
    Gamma = _coerce("Gamma", raw.Gamma, (n, n))
    GammaF = _coerce("GammaF", raw.GammaF, (n, n))
    Q = _symmetrize_weight("Q", _coerce("Q", raw.Q, (n, n)))
    R = _symmetrize_weight("R", _coerce("R", raw.R, (n1, n1)))
    QF = _symmetrize_weight("QF", _coerce("QF", raw.QF, (n, n)))

    model = ModelParams(
        n=n, n1=n1, A=A, B=B, B0=B0, B1=B1, D=D, D0=D0,
        G=G, Gamma=Gamma, GammaF=GammaF, Q=Q, R=R, QF=QF, T=T,
    )
    return model, derived_weights(model)


def derived_weights(model: ModelParams) -> DerivedWeights:
    """Coupling-adjusted weights of a validated model."""
    Q, QF = model.Q, model.QF
    Gm, GmF = model.Gamma, model.GammaF
    eye = np.eye(model.n)
    QGamma = sym(Gm.T @ Q @ Gm - Q @ Gm - Gm.T @ Q)
    QGammaF = sym(GmF.T @ QF @ GmF - QF @ GmF - GmF.T @ QF)
    Q3 = sym((eye - Gm).T @ Q @ (eye - Gm))
    Q3F = sym((eye - GmF).T @ QF @ (eye - GmF))
    return DerivedWeights(QGamma=QGamma, QGammaF=QGammaF, Q3=Q3, Q3F=Q3F)


def _scalar_raw(A, B, B0, B1, G, Gamma, GammaF, Q, R, QF, T, D=0.0, D0=0.0) -> ModelParams:
    m = np.array
    return ModelParams(
        n=1, n1=1,
        A=m([[A]]), B=m([[B]]), B0=m([[B0]]), B1=m([[B1]]),
        D=m([D]), D0=m([D0]), G=m([[G]]),
        Gamma=m([[Gamma]]), GammaF=m([[GammaF]]),
        Q=m([[Q]]), R=m([[R]]), QF=m([[QF]]), T=T,
    )


_PRESETS = {
    # Solvable scalar benchmark with mean field coupling in drift and cost.
    "example1": dict(A=1.0, B=1.0, B0=0.2, B1=0.2, G=2.0, Gamma=0.1, GammaF=0.1,
                     Q=4.0, R=1.0, QF=2.0, T=2.0),
    # Solvable despite a negative control weight R: the controlled diffusion
    # terms keep the effective weights positive.
    "example2": dict(A=-4.0, B=1.0, B0=-2.0, B1=4.0, G=1.0, Gamma=4.0, GammaF=2.0,
                     Q=1.0, R=-1.0, QF=1.0, T=2.0),
    # Not solvable: strong unstable drift with a negative state weight drives
    # the Riccati solution off to a finite-time escape before t=0.
    "example3": dict(A=30.0, B=1.0, B0=0.2, B1=0.2, G=2.0, Gamma=0.1, GammaF=0.1,
                     Q=-30.0, R=1.5, QF=3.0, T=2.0),
    # Fully decoupled scalar baseline: every coupling and noise matrix is
    # zero, so the solution reduces to the scalar Riccati flow
    # Lambda1(t) = 1/(1+(T-t)).
    "decoupled_m0": dict(A=0.0, B=1.0, B0=0.0, B1=0.0, G=0.0, Gamma=0.0, GammaF=0.0,
                         Q=0.0, R=1.0, QF=1.0, T=1.0),
    # Mean-variance portfolio selection as an LQ model: rho=0.05, alpha=0.15,
    # sigma=0.25, gamma=1. Here R=0 and well-posedness comes from B1.
    "portfolio_lq": dict(A=0.05, B=0.10, B0=0.0, B1=0.25, G=0.0, Gamma=0.0, GammaF=1.0,
                         Q=0.0, R=0.0, QF=0.5, T=1.0),
}


def scalar_model(preset: str) -> ModelParams:
    """Return a validated named scalar preset."""
    try:
        kwargs = _PRESETS[preset]
    except KeyError:
        raise UnknownPreset(f"unknown preset {preset!r}; choose from {sorted(_PRESETS)}") from None
    model, _ = build_model(_scalar_raw(**kwargs))
    return model


PRESET_NAMES = tuple(sorted(_PRESETS))

_CONFIG_KEYS = ("n", "n1", "A", "B", "B0", "B1", "D", "D0", "G",
                "Gamma", "GammaF", "Q", "R", "QF", "T")


def load_model(path) -> tuple[ModelParams, DerivedWeights]:
    """Read a model from a JSON config file.

    Top-level keys: n, n1, A, B, B0, B1, D, D0, G, Gamma, GammaF, Q, R, QF, T.
    Matrices are row-major nested arrays; D and D0 accept either a flat list
    or an n x 1 nested array.
    """
    with open(path) as fh:
        cfg = json.load(fh)
    missing = [k for k in _CONFIG_KEYS if k not in cfg]
    if missing:
        raise DimensionMismatch(f"config {path} missing keys: {missing}")
    raw = ModelParams(
        n=int(cfg["n"]), n1=int(cfg["n1"]),
        A=cfg["A"], B=cfg["B"], B0=cfg["B0"], B1=cfg["B1"],
        D=np.asarray(cfg["D"], dtype=float).reshape(-1),
        D0=np.asarray(cfg["D0"], dtype=float).reshape(-1),
        G=cfg["G"], Gamma=cfg["Gamma"], GammaF=cfg["GammaF"],
        Q=cfg["Q"], R=cfg["R"], QF=cfg["QF"], T=float(cfg["T"]),
    )
    return build_model(raw)


def dump_model(model: ModelParams, path) -> None:
    """Write a model as a JSON config readable by load_model."""
    cfg = {
        "n": model.n, "n1": model.n1,
        "A": model.A.tolist(), "B": model.B.tolist(),
        "B0": model.B0.tolist(), "B1": model.B1.tolist(),
        "D": model.D.tolist(), "D0": model.D0.tolist(),
        "G": model.G.tolist(), "Gamma": model.Gamma.tolist(),
        "GammaF": model.GammaF.tolist(),
        "Q": model.Q.tolist(), "R": model.R.tolist(), "QF": model.QF.tolist(),
        "T": model.T,
    }
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
