"""Rotation and translation-direction estimation from bearing pairs.

Given correspondences (f_i, f'_i) between a keyframe and the current frame,
each pair constrains the translation direction u to be orthogonal to the
epipolar plane normal m_i = (R f_i) x f'_i. Squaring and summing gives the
functional

    F(R, u) = sum_i (u . m_i)^2 = u^T M(R) u = x^T C x,

where x = kron(u, vec(R)) and C is a constant 27x27 Gram matrix built from
the bearings alone. For fixed R the optimal u is the eigenvector of M(R)
with the smallest eigenvalue; jointly, (R, u) is found by Levenberg-Marquardt
on a residual stacking the tangent-space gradient of F with the weighted
functional value itself, so the solver is pulled toward minima rather than
arbitrary stationary points.

A translation magnitude of zero makes every m_i vanish and u unobservable;
this shows up as a collapsed eigenvalue gap and is reported as a degenerate
(rotation-only) solution rather than an error.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Rotation, UnitDirection, sampson_distances_sq, skew, vec
from .optim import LMConfig, LMStatus, lm_minimize

logger = logging.getLogger(__name__)

# vec_F(skew(e_i)) generators, used for d(vec R)/d(theta_i)
_GEN = [skew(np.eye(3)[i]) for i in range(3)]


def epipolar_normals(rotation: Rotation, f: np.ndarray, f_prime: np.ndarray) -> np.ndarray:
    """Normals m_i = (R f_i) x f'_i of the epipolar planes, rows of (n, 3)."""
    return np.cross(f @ rotation.matrix.T, f_prime)


def epipolar_normal_matrix(
    rotation: Rotation, f: np.ndarray, f_prime: np.ndarray
) -> np.ndarray:
    """M(R) = sum_i m_i m_i^T, a 3x3 positive semidefinite matrix."""
    m = epipolar_normals(rotation, f, f_prime)
    return m.T @ m


def direction_from_rotation(
    rotation: Rotation, f: np.ndarray, f_prime: np.ndarray
) -> tuple[UnitDirection, bool]:
    """Optimal direction for a fixed rotation: smallest eigenvector of M(R).

    Returns (direction, degenerate). The solution is degenerate when the two
    smallest eigenvalues nearly coincide relative to the trace (near-zero
    translation or too few normals), in which case the direction is an
    arbitrary vector from the collapsed eigenspace.
    """
    m = epipolar_normal_matrix(rotation, f, f_prime)
    w, v = np.linalg.eigh(m)
    tr = float(np.trace(m))
    # degenerate when the normals carry no usable parallax (RMS below the
    # 1e-4 rad observability floor, e.g. pure rotation) or when the two
    # smallest eigenvalues collapse relative to the overall scale
    degenerate = tr <= f.shape[0] * 1e-8 or (w[1] - w[0]) < 1e-9 * tr
    return UnitDirection.from_vector(v[:, 0]), degenerate


def build_data_matrix(f: np.ndarray, f_prime: np.ndarray) -> np.ndarray:
    """27x27 Gram matrix C with x^T C x = F(R, u) for x = kron(u, vec(R)).

    Each pair contributes a row c_i with c_i . x = u . ((R f_i) x f'_i);
    writing that out in components gives c[9a + 3m + j] = f_m (e_j x f')_a.
    """
    f = np.asarray(f, dtype=float)
    f_prime = np.asarray(f_prime, dtype=float)
    # cr[i, j, :] = e_j x f'_i
    cr = np.cross(np.eye(3)[None, :, :], f_prime[:, None, :])
    c = np.einsum("im,ija->iamj", f, cr).reshape(f.shape[0], 27)
    return c.T @ c


def functional_value(
    data_matrix: np.ndarray, rotation: Rotation, direction: UnitDirection
) -> float:
    x = np.kron(direction.vector, vec(rotation.matrix))
    return float(x @ data_matrix @ x)


def functional_and_gradients(
    data_matrix: np.ndarray, rotation: Rotation, direction: UnitDirection
) -> tuple[float, np.ndarray, np.ndarray]:
    """F and its gradients in the 3+2 tangent chart of (R, u).

    The chart is R(theta) = R exp([theta]_x) and the two-axis host update of
    the direction. With x = kron(u, vec(R)) the chain rule runs through
    dF/dx = 2 C x, split into the three 9-blocks G_a; then
    dF/d(vec R) = sum_a u_a G_a and dF/du has components G_a . vec(R).
    """
    r = vec(rotation.matrix)
    u = direction.vector
    x = np.kron(u, r)
    cx = data_matrix @ x
    value = float(x @ cx)
    g = 2.0 * cx.reshape(3, 9)
    df_dr = u @ g          # (9,)
    df_du = g @ r          # (3,)
    grad_theta = np.array(
        [df_dr @ vec(rotation.matrix @ _GEN[i]) for i in range(3)]
    )
    grad_beta = direction.tangent_basis().T @ df_du
    return value, grad_theta, grad_beta


PoseState = tuple[Rotation, UnitDirection]


def _retract_state(state: PoseState, delta: np.ndarray) -> PoseState:
    rotation, direction = state
    return rotation.retract(delta[:3]), direction.retract(delta[3:5])


def _make_residual(data_matrix: np.ndarray, weight: float):
    def residual(state: PoseState) -> np.ndarray:
        value, grad_theta, grad_beta = functional_and_gradients(
            data_matrix, state[0], state[1]
        )
        out = np.empty(6)
        out[:3] = grad_theta
        out[3:5] = grad_beta
        out[5] = weight * value
        return out

    return residual


def refine_relative_pose(
    f: np.ndarray,
    f_prime: np.ndarray,
    rotation0: Rotation,
    direction0: UnitDirection,
    weight: float = 50.0,
    lm_config: Optional[LMConfig] = None,
    data_matrix: Optional[np.ndarray] = None,
) -> tuple[Rotation, UnitDirection, float, LMStatus]:
    """Jointly refine (R, u) from an initial guess on a fixed pair set.

    Minimizes the stacked residual [grad F; weight * F] over the 5-dof
    tangent chart. The weight pulls the iterate toward minima of F; weight 0
    accepts any stationary point.
    """
    c = build_data_matrix(f, f_prime) if data_matrix is None else data_matrix
    residual = _make_residual(c, weight)
    state, status = lm_minimize(
        residual, _retract_state, (rotation0, direction0), 5, lm_config
    )
    value = functional_value(c, state[0], state[1])
    return state[0], state[1], value, status


class RelPoseStatus(enum.Enum):
    CONVERGED = "converged"
    DEGENERATE = "degenerate"
    TOO_FEW_INLIERS = "too_few_inliers"


@dataclass
class RelPoseConfig:
    """Tuning knobs for the robust relative-pose search."""

    hypothesis_iterations: int = 5
    refinement_iterations: int = 7
    inlier_threshold_rad: float = 0.01
    min_inliers: int = 10
    subsample_size: int = 10
    prior_perturbation_deg: float = 0.5
    functional_weight: float = 50.0
    seed_gate_factor: float = 3.0
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if self.hypothesis_iterations < 1 or self.refinement_iterations < 0:
            raise ValueError("iteration counts out of range")
        if self.inlier_threshold_rad <= 0.0:
            raise ValueError("inlier threshold must be positive")
        if self.min_inliers < 5:
            raise ValueError("need at least 5 inliers for a 5-dof estimate")
        if self.seed_gate_factor < 1.0:
            raise ValueError("seed gate cannot be tighter than the inlier gate")


@dataclass
class RelPoseResult:
    rotation: Rotation
    direction: UnitDirection
    functional: float
    inlier_mask: np.ndarray
    status: RelPoseStatus

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


def _perturbed(rotation: Rotation, max_deg: float, rng: np.random.Generator) -> Rotation:
    amp = np.radians(max_deg)
    return rotation.retract(rng.uniform(-amp, amp, size=3))


def _pair_direction_search(
    rotation: Rotation,
    f: np.ndarray,
    f_prime: np.ndarray,
    pool: np.ndarray,
    gate_sq: float,
    n_draws: int,
    rng: np.random.Generator,
) -> Optional[UnitDirection]:
    """Best direction hypothesis from random two-pair normal crosses.

    Two epipolar normals determine the direction exactly, so each draw needs
    only two uncontaminated pairs; every candidate is scored by its support
    at the (loose) gate and the widest support wins. Returns None when every
    draw is degenerate (all normals vanish, e.g. pure rotation).
    """
    normals = epipolar_normals(rotation, f, f_prime)
    best: Optional[tuple[int, UnitDirection]] = None
    for _ in range(n_draws):
        i, j = rng.choice(pool, size=2, replace=False)
        u = np.cross(normals[i], normals[j])
        norm = np.linalg.norm(u)
        if norm < 1e-12:
            continue
        cand = UnitDirection.from_vector(u / norm)
        support = int(
            np.count_nonzero(sampson_distances_sq(rotation, cand, f, f_prime) <= gate_sq)
        )
        if best is None or support > best[0]:
            best = (support, cand)
    return None if best is None else best[1]


def estimate_relative_pose(
    f: np.ndarray,
    f_prime: np.ndarray,
    prior_rotation: Rotation,
    config: Optional[RelPoseConfig] = None,
    rng: Optional[np.random.Generator] = None,
    perturb_prior: bool = True,
) -> RelPoseResult:
    """Robust (R, u) estimate from bearing pairs with an orientation prior.

    Alternates hypothesis generation with consensus refinement. Hypotheses
    restart from the best rotation so far (first from the prior, optionally
    perturbed on retries when the prior is itself a previous estimate) with
    the direction re-seeded from the eigen-solution on a random subsample of
    the current inliers; each is refined on the current inlier set and scored
    by its epipolar-consistency support over all pairs. The winner then goes
    through full-set consensus reweighting until the inlier mask fixes.
    """
    cfg = config or RelPoseConfig()
    rng = rng or np.random.default_rng(0)
    f = np.asarray(f, dtype=float)
    f_prime = np.asarray(f_prime, dtype=float)
    n = f.shape[0]
    thr_sq = cfg.inlier_threshold_rad**2
    gate_sq = (cfg.seed_gate_factor * cfg.inlier_threshold_rad) ** 2

    if n < cfg.min_inliers:
        direction, _ = direction_from_rotation(prior_rotation, f, f_prime)
        return RelPoseResult(
            prior_rotation,
            direction,
            float("inf"),
            np.zeros(n, dtype=bool),
            RelPoseStatus.TOO_FEW_INLIERS,
        )

    best: Optional[tuple[int, float, Rotation, UnitDirection, np.ndarray]] = None
    mask = np.ones(n, dtype=bool)

    for hyp in range(cfg.hypothesis_iterations):
        idx = np.flatnonzero(mask)
        if idx.size < cfg.min_inliers:
            mask = np.ones(n, dtype=bool)
            idx = np.flatnonzero(mask)

        # the prior anchors every restart; an estimated (rather than
        # measured) prior gets jittered so retries explore its neighborhood
        if hyp == 0 or not perturb_prior:
            rotation0 = prior_rotation
        else:
            rotation0 = _perturbed(prior_rotation, cfg.prior_perturbation_deg, rng)

        if hyp == 0:
            # deterministic first shot: eigen-solution over the whole pool
            direction0, _ = direction_from_rotation(rotation0, f[idx], f_prime[idx])
        else:
            direction0 = _pair_direction_search(
                rotation0, f, f_prime, idx, gate_sq, cfg.subsample_size, rng
            )
            if direction0 is None:
                direction0, _ = direction_from_rotation(
                    rotation0, f[idx], f_prime[idx]
                )

        # fit on pairs loosely consistent with the seed, if enough of them
        seed = sampson_distances_sq(rotation0, direction0, f, f_prime) <= gate_sq
        fit_idx = np.flatnonzero(seed) if np.count_nonzero(seed) >= cfg.min_inliers else idx

        rotation, direction, value, _ = refine_relative_pose(
            f[fit_idx],
            f_prime[fit_idx],
            rotation0,
            direction0,
            cfg.functional_weight,
            cfg.lm,
        )
        cand_mask = sampson_distances_sq(rotation, direction, f, f_prime) <= thr_sq
        count = int(np.count_nonzero(cand_mask))

        improved = best is None or count > best[0] or (count == best[0] and value < best[1])
        if improved:
            best = (count, value, rotation, direction, cand_mask)
            mask = cand_mask
        else:
            # restarts have stopped paying off
            break

    assert best is not None
    count, value, rotation, direction, mask = best

    for _ in range(cfg.refinement_iterations):
        idx = np.flatnonzero(mask)
        if idx.size < cfg.min_inliers:
            break
        rotation, direction, value, _ = refine_relative_pose(
            f[idx], f_prime[idx], rotation, direction, cfg.functional_weight, cfg.lm
        )
        new_mask = sampson_distances_sq(rotation, direction, f, f_prime) <= thr_sq
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask

    n_in = int(np.count_nonzero(mask))
    if n_in < cfg.min_inliers:
        status = RelPoseStatus.TOO_FEW_INLIERS
    else:
        _, degenerate = direction_from_rotation(rotation, f[mask], f_prime[mask])
        status = RelPoseStatus.DEGENERATE if degenerate else RelPoseStatus.CONVERGED
    return RelPoseResult(rotation, direction, value, mask, status)
