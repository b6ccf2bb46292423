"""Backward-in-time matrix ODE integration with constraint monitoring.

The engine integrates terminal-value systems of named matrix blocks with an
adaptive Dormand-Prince 5(4) pair in the reversed time s = T - t. Symmetric
unknowns are re-symmetrized at every accepted step. At every accepted node
each declared positivity constraint is checked by a symmetric eigensolve and
each block's Frobenius norm is checked against a blow-up bound; violations
stop the solve with a typed verdict instead of an exception. Everything is
deterministic: identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "BlockSpec",
    "MatrixTrajectory",
    "SolveStatus",
    "SolveOutcome",
    "integrate_backward",
    "residual_check",
    "sup_distance",
]

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# Difference between the 5th and embedded 4th order weights.
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Coefficients of the quartic dense-output polynomial.
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_MIN_STEP_FRACTION = 1e-14
_MAX_STEP_FRACTION = 0.1


class SolveStatus(str, Enum):
    SOLVED = "solved"
    POSITIVITY_VIOLATION = "positivity_violation"
    BLOW_UP = "blow_up"
    STEP_FAILURE = "step_failure"


@dataclass(frozen=True)
class BlockSpec:
    """Layout of one named unknown inside the flat integration state."""

    name: str
    shape: tuple[int, ...]
    offset: int
    symmetric: bool

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int)) if self.shape else 1


class _Packing:
    """Pack/unpack a dict of named blocks to and from one flat vector."""

    def __init__(self, shapes: Mapping[str, tuple[int, ...]], symmetric: Sequence[str] = ()):
        self.blocks: list[BlockSpec] = []
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(shape)
            spec = BlockSpec(name, shape, offset, name in symmetric)
            if spec.symmetric and (len(shape) != 2 or shape[0] != shape[1]):
                raise ValueError(f"symmetric block {name!r} must be square, got {shape}")
            self.blocks.append(spec)
            offset += spec.size
        self.dim = offset

    def pack(self, values: Mapping[str, Any]) -> np.ndarray:
        flat = np.empty(self.dim)
        for spec in self.blocks:
            flat[spec.offset:spec.offset + spec.size] = np.asarray(
                values[spec.name], dtype=float).reshape(-1)
        return flat

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {
            spec.name: flat[spec.offset:spec.offset + spec.size].reshape(spec.shape)
            for spec in self.blocks
        }

    def symmetrize(self, flat: np.ndarray) -> None:
        for spec in self.blocks:
            if spec.symmetric:
                M = flat[spec.offset:spec.offset + spec.size].reshape(spec.shape)
                M[:] = (M + M.T) / 2.0


class _DenseSolution:
    """Accepted nodes plus per-step quartic interpolants, in reversed time."""

    def __init__(self, T: float, s_nodes: np.ndarray, y_nodes: np.ndarray,
                 q_mats: np.ndarray, h_steps: np.ndarray):
        self.T = T
        self.s_nodes = s_nodes      # increasing, s_nodes[0] = 0
        self.y_nodes = y_nodes      # (M+1, dim)
        self.q_mats = q_mats        # (M, dim, 4)
        self.h_steps = h_steps      # (M,)

    def eval_flat(self, t: float) -> np.ndarray:
        s = self.T - t
        s_nodes = self.s_nodes
        if not (s_nodes[0] - 1e-12 <= s <= s_nodes[-1] + 1e-12):
            raise ValueError(f"time {t} outside the solved span")
        k = int(np.searchsorted(s_nodes, s, side="right")) - 1
        k = min(max(k, 0), len(s_nodes) - 2)
        if s <= s_nodes[k] + 0.0:
            return self.y_nodes[k].copy()
        if s >= s_nodes[k + 1]:
            return self.y_nodes[k + 1].copy()
        theta = (s - s_nodes[k]) / self.h_steps[k]
        powers = np.array([theta, theta**2, theta**3, theta**4])
        return self.y_nodes[k] + self.h_steps[k] * (self.q_mats[k] @ powers)


@dataclass
class MatrixTrajectory:
    """One named unknown on the accepted grid, with dense output in between.

    grid is ascending forward time; values[k] is the block at grid[k].
    """

    grid: np.ndarray
    values: np.ndarray
    _dense: _DenseSolution | None = field(default=None, repr=False)
    _spec: BlockSpec | None = field(default=None, repr=False)

    def __call__(self, t: float) -> np.ndarray:
        return self.eval(t)

    def eval(self, t: float) -> np.ndarray:
        if self._dense is None:
            # Fall back to linear interpolation on the stored nodes.
            k = int(np.searchsorted(self.grid, t, side="right")) - 1
            k = min(max(k, 0), len(self.grid) - 2)
            t0, t1 = self.grid[k], self.grid[k + 1]
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            return (1 - w) * self.values[k] + w * self.values[k + 1]
        spec = self._spec
        flat = self._dense.eval_flat(float(t))
        return flat[spec.offset:spec.offset + spec.size].reshape(spec.shape)

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        return np.stack([self.eval(float(t)) for t in np.asarray(ts, dtype=float)])

    @property
    def t0_value(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal_value(self) -> np.ndarray:
        return self.values[-1]


@dataclass
class SolveOutcome:
    """Result of a backward solve: a status plus the (possibly partial) trajectories.

    On failure the trajectories cover [t_fail, T] only. margins maps each
    declared positivity constraint to its min-eigenvalue sequence on the grid.
    solution optionally carries a module-level typed view of the trajectories.
    """

    status: SolveStatus
    trajectories: dict[str, MatrixTrajectory]
    failure_time: float | None = None
    failed_constraint: str | None = None
    margins: dict[str, np.ndarray] = field(default_factory=dict)
    grid: np.ndarray | None = None
    solution: Any = None

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.SOLVED

    def failure_reason(self) -> str | None:
        if self.ok:
            return None
        if self.status is SolveStatus.POSITIVITY_VIOLATION:
            return (f"positivity constraint {self.failed_constraint!r} lost "
                    f"at t={self.failure_time:.6g}")
        if self.status is SolveStatus.BLOW_UP:
            return f"solution norm escaped at t={self.failure_time:.6g}"
        return f"step size underflow at t={self.failure_time:.6g}"


def _initial_step(f0: np.ndarray, y0: np.ndarray, scale_fn, rhs_s, s_end: float) -> float:
    """Deterministic starting step along the classic two-trial heuristic."""
    scale = scale_fn(y0, y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 * s_end if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, s_end)
    y1 = y0 + h0 * f0
    f1 = rhs_s(h0, y1)
    if f1 is None:
        return max(h0 * 1e-3, s_end * _MIN_STEP_FRACTION * 10)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6 * s_end, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, _MAX_STEP_FRACTION * s_end, s_end)


def integrate_backward(
    rhs: Callable[[float, dict[str, np.ndarray]], dict[str, np.ndarray]],
    terminal: Mapping[str, np.ndarray],
    T: float,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_norm: float = 1e8,
    pos_constraints: Sequence[tuple[str, Callable[[dict[str, np.ndarray]], np.ndarray]]] = (),
    pos_tol: float = 1e-9,
    symmetric: Sequence[str] = (),
    follow_grid: np.ndarray | None = None,
) -> SolveOutcome:
    """Integrate d(blocks)/dt = rhs(t, blocks) from t=T down to t=0.

    rhs works in forward time; the engine runs in s = T - t. Blocks named in
    `symmetric` are re-symmetrized at accepted steps. Each (name, fn) in
    pos_constraints maps the current blocks to a symmetric matrix whose
    minimum eigenvalue must stay >= pos_tol. If follow_grid (ascending
    forward-time nodes, first 0 and last T) is given, steps land exactly on
    those nodes, bisecting segments whose error estimate fails tolerance.
    """
    packing = _Packing({k: np.asarray(v).shape for k, v in terminal.items()}, symmetric)
    y = packing.pack(terminal)
    packing.symmetrize(y)

    def rhs_s(s: float, y_flat: np.ndarray):
        """Reversed-time field; returns None when evaluation is impossible."""
        try:
            d = rhs(T - s, packing.unpack(y_flat))
        except (np.linalg.LinAlgError, ArithmeticError):
            return None
        out = -packing.pack(d)
        if not np.all(np.isfinite(out)):
            return None
        return out

    def scale_fn(y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
        return atol + rtol * np.maximum(np.abs(y0), np.abs(y1))

    s_nodes = [0.0]
    y_nodes = [y.copy()]
    q_mats: list[np.ndarray] = []
    h_steps: list[float] = []
    margins: dict[str, list[float]] = {name: [] for name, _ in pos_constraints}

    failure: tuple[SolveStatus, str | None] | None = None

    def check_node(y_flat: np.ndarray) -> tuple[SolveStatus, str | None] | None:
        blocks = packing.unpack(y_flat)
        for spec in packing.blocks:
            if np.linalg.norm(blocks[spec.name]) > max_norm:
                return (SolveStatus.BLOW_UP, spec.name)
        verdict = None
        for name, fn in pos_constraints:
            w = np.linalg.eigvalsh((lambda M: (M + M.T) / 2.0)(np.atleast_2d(fn(blocks))))
            margins[name].append(float(w[0]))
            if w[0] < pos_tol and verdict is None:
                verdict = (SolveStatus.POSITIVITY_VIOLATION, name)
        return verdict

    failure = check_node(y)

    if failure is None:
        f0 = rhs_s(0.0, y)
        if f0 is None:
            failure = (SolveStatus.STEP_FAILURE, None)

    if failure is None:
        min_step = _MIN_STEP_FRACTION * T
        if follow_grid is not None:
            targets = T - np.asarray(follow_grid, dtype=float)[::-1]
            targets = targets[targets > 1e-12 * T]
        else:
            targets = None
        h = _initial_step(f0, y, scale_fn, rhs_s, T)
        if targets is not None and len(targets):
            h = min(h, targets[0])
        target_idx = 0
        s = 0.0
        K = np.empty((7, packing.dim))
        while s < T - 1e-12 * T:
            if targets is not None:
                # Aim exactly at the next imposed node.
                h = min(h, targets[target_idx] - s)
            h = min(h, T - s, _MAX_STEP_FRACTION * T)
            if h < min_step:
                failure = (SolveStatus.STEP_FAILURE, None)
                break

            K[0] = f0
            ok = True
            for i in range(1, 7):
                yi = y + h * (K[:i].T @ _A[i - 1])
                ki = rhs_s(s + _C[i] * h, yi)
                if ki is None:
                    ok = False
                    break
                K[i] = ki
            if ok:
                y1 = y + h * (K.T @ _B5)
                err_vec = h * (K.T @ _E)
                scale = scale_fn(y, y1)
                err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
                if not np.isfinite(err):
                    ok = False
            if not ok:
                h *= 0.25
                continue

            if err > 1.0:
                h *= max(0.2, 0.9 * err ** -0.2)
                continue

            # Accepted: symmetrize, monitor, record, prepare dense output.
            packing.symmetrize(y1)
            q_mats.append(K.T @ _P)
            h_steps.append(h)
            s = s + h
            # Snap onto imposed nodes and the endpoint to keep grids exact.
            if targets is not None and target_idx < len(targets) and \
                    abs(s - targets[target_idx]) <= 1e-12 * T:
                s = float(targets[target_idx])
            if abs(T - s) <= 1e-12 * T:
                s = T
            s_nodes.append(s)
            y_nodes.append(y1.copy())
            failure = check_node(y1)
            if failure is not None:
                break
            y = y1
            f0 = rhs_s(s, y)
            if f0 is None:
                failure = (SolveStatus.STEP_FAILURE, None)
                break
            if targets is not None and s >= targets[target_idx] - 1e-12 * T:
                target_idx += 1
            h = h * (10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2)))

    # Assemble trajectories in forward time.
    s_arr = np.asarray(s_nodes)
    y_arr = np.asarray(y_nodes)
    q_arr = np.asarray(q_mats) if q_mats else np.zeros((0, packing.dim, 4))
    h_arr = np.asarray(h_steps)
    dense = _DenseSolution(T, s_arr, y_arr, q_arr, h_arr)
    t_grid = (T - s_arr)[::-1].copy()
    trajectories = {}
    for spec in packing.blocks:
        vals = y_arr[::-1, spec.offset:spec.offset + spec.size].reshape(
            (len(s_arr),) + spec.shape)
        trajectories[spec.name] = MatrixTrajectory(
            grid=t_grid, values=vals.copy(), _dense=dense, _spec=spec)
    margin_arrays = {name: np.asarray(vals[::-1]) for name, vals in margins.items()}

    if failure is None:
        return SolveOutcome(SolveStatus.SOLVED, trajectories,
                            margins=margin_arrays, grid=t_grid)
    status, which = failure
    fail_t = float(t_grid[0])
    return SolveOutcome(status, trajectories, failure_time=fail_t,
                        failed_constraint=which, margins=margin_arrays, grid=t_grid)


def residual_check(
    traj: MatrixTrajectory,
    rhs: Callable[[float, np.ndarray], np.ndarray],
    num: int | None = None,
) -> float:
    """Max relative defect of a trajectory against its forward-time field.

    Compares a second-order finite-difference derivative with rhs(t, value)
    at interior nodes; the defect is normalized by 1 + |rhs|. With num given,
    the trajectory is resampled on a uniform num-point grid first.
    """
    if num is not None:
        grid = np.linspace(traj.grid[0], traj.grid[-1], num)
        values = traj.eval_many(grid)
    else:
        grid, values = traj.grid, traj.values
    deriv = np.gradient(values, grid, axis=0, edge_order=2)
    worst = 0.0
    for k in range(1, len(grid) - 1):
        f = np.asarray(rhs(float(grid[k]), values[k]))
        defect = np.max(np.abs(deriv[k] - f) / (1.0 + np.abs(f)))
        worst = max(worst, float(defect))
    return worst


def sup_distance(a: MatrixTrajectory, b: MatrixTrajectory, num: int = 401) -> float:
    """Sup-norm distance of two trajectories over a shared refinement grid."""
    lo = max(a.grid[0], b.grid[0])
    hi = min(a.grid[-1], b.grid[-1])
    ts = np.unique(np.concatenate([
        np.linspace(lo, hi, num),
        a.grid[(a.grid >= lo) & (a.grid <= hi)],
        b.grid[(b.grid >= lo) & (b.grid <= hi)],
    ]))
    worst = 0.0
    for t in ts:
        worst = max(worst, float(np.max(np.abs(a.eval(t) - b.eval(t)))))
    return worst
