"""Minimal self-contained bearing-pair generator for tests.

Kept independent of the package's synthetic lab on purpose: these pairs act
as an outside oracle for the estimators (and later for the lab itself).
"""

import numpy as np


def unit_rows(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation_matrix(rng, max_angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def make_pairs(rng, rotation_matrix, t, n=150, depth_range=(1.0, 6.0), spread=0.9):
    """Exact correspondences (f, f') for p_cur = R p_kf + t.

    Returns (f, f_prime, depths) with f sampled over a wide forward cone.
    """
    d = np.column_stack(
        [
            rng.uniform(-spread, spread, size=n),
            rng.uniform(-spread * 0.75, spread * 0.75, size=n),
            np.ones(n),
        ]
    )
    f = unit_rows(d)
    depths = rng.uniform(depth_range[0], depth_range[1], size=n)
    p = f * depths[:, None]
    q = p @ rotation_matrix.T + np.asarray(t, dtype=float)
    return f, unit_rows(q), depths
