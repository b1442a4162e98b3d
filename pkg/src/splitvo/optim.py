"""Dense Levenberg-Marquardt over manifold-valued states.

The minimizer is generic over the state type: the caller supplies a residual
function and a retraction that applies a tangent-space step to the state.
Jacobians default to central finite differences in the tangent chart, which
keeps estimator code honest about what it differentiates; callers with an
analytic Jacobian can pass one.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

State = TypeVar("State")

_FD_STEP = 1e-6


class StopReason(enum.Enum):
    COST_TOL = "cost_tol"
    STEP_TOL = "step_tol"
    MAX_ITER = "max_iter"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class LMConfig:
    max_iterations: int = 50
    cost_tolerance: float = 1e-12        # relative cost decrease
    step_tolerance: float = 1e-10        # tangent step norm
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_damping: float = 1e12

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.cost_tolerance < 0.0 or self.step_tolerance < 0.0:
            raise ValueError("tolerances must be non-negative")
        if self.damping_up <= 1.0 or not (0.0 < self.damping_down < 1.0):
            raise ValueError("damping factors must move damping the right way")


@dataclass
class LMStatus:
    reason: StopReason
    iterations: int
    cost: float
    cost_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason in (StopReason.COST_TOL, StopReason.STEP_TOL)


def fd_jacobian(
    residual_fn: Callable[[State], np.ndarray],
    retract_fn: Callable[[State, np.ndarray], State],
    x: State,
    dim: int,
    step: float = _FD_STEP,
) -> np.ndarray:
    """Central-difference Jacobian of the residual in the tangent chart."""
    cols = []
    for i in range(dim):
        d = np.zeros(dim)
        d[i] = step
        rp = residual_fn(retract_fn(x, d))
        rm = residual_fn(retract_fn(x, -d))
        cols.append((rp - rm) / (2.0 * step))
    return np.column_stack(cols)


def lm_minimize(
    residual_fn: Callable[[State], np.ndarray],
    retract_fn: Callable[[State, np.ndarray], State],
    x0: State,
    dim: int,
    config: Optional[LMConfig] = None,
    jacobian_fn: Optional[Callable[[State], np.ndarray]] = None,
) -> tuple[State, LMStatus]:
    """Minimize ||residual(x)||^2 with damped normal equations.

    Damping scales the diagonal of J^T J (Marquardt form) with a small floor
    so zero-curvature directions stay bounded. Any non-finite residual or a
    failed solve ends the run with NUMERICAL_FAILURE instead of raising.
    """
    cfg = config or LMConfig()
    x = x0
    r = np.asarray(residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        return x, LMStatus(StopReason.NUMERICAL_FAILURE, 0, float("inf"), [])
    cost = float(r @ r)
    history = [cost]
    lam = cfg.initial_damping

    for it in range(1, cfg.max_iterations + 1):
        if jacobian_fn is not None:
            jac = np.asarray(jacobian_fn(x), dtype=float)
        else:
            jac = fd_jacobian(residual_fn, retract_fn, x, dim)
        if not np.all(np.isfinite(jac)):
            return x, LMStatus(StopReason.NUMERICAL_FAILURE, it, cost, history)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12)

        stepped = False
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                return x, LMStatus(StopReason.NUMERICAL_FAILURE, it, cost, history)
            if not np.all(np.isfinite(delta)):
                return x, LMStatus(StopReason.NUMERICAL_FAILURE, it, cost, history)

            x_new = retract_fn(x, delta)
            r_new = np.asarray(residual_fn(x_new), dtype=float)
            if np.all(np.isfinite(r_new)):
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    step_norm = float(np.linalg.norm(delta))
                    rel_decrease = (cost - cost_new) / max(cost, 1e-300)
                    x, r, cost = x_new, r_new, cost_new
                    history.append(cost)
                    lam = max(lam * cfg.damping_down, 1e-12)
                    stepped = True
                    if rel_decrease < cfg.cost_tolerance:
                        return x, LMStatus(StopReason.COST_TOL, it, cost, history)
                    if step_norm < cfg.step_tolerance:
                        return x, LMStatus(StopReason.STEP_TOL, it, cost, history)
                    break
            # reject: raise damping and retry the same Jacobian
            lam *= cfg.damping_up
            if lam > cfg.max_damping:
                # cannot make progress in any direction
                return x, LMStatus(StopReason.STEP_TOL, it, cost, history)
        if not stepped:  # pragma: no cover - loop above always breaks or returns
            break

    return x, LMStatus(StopReason.MAX_ITER, cfg.max_iterations, cost, history)
