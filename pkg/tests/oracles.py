"""Independent reference checks shared by the unit and acceptance suites.

These use only projection arithmetic written out here, never the Hough
interval code, so they can serve as oracles for it.
"""

import numpy as np

from local_sfm.geometry import CameraIntrinsics, RelativePose, random_rotation, scale_from_projection
from local_sfm.hough import pixel_bounds

K_TEST = CameraIntrinsics(260.0, 260.0, 160.0, 120.0, 320, 240)
TIE_TOL = 1e-7


def project_at_scale(rel: RelativePose, K: CameraIntrinsics, pixel, depth, scale):
    """Pixel and depth in frame j of ``pixel`` lifted to ``depth`` under translation ``scale * t_bar``."""
    x = np.array([(pixel[0] - K.cx) / K.fx, (pixel[1] - K.cy) / K.fy, 1.0]) * depth
    X = rel.R @ x + scale * rel.t_bar
    if X[2] <= 0:
        return None, X[2]
    return np.array([K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy]), X[2]


def random_relative(rng, max_angle_deg=20.0) -> RelativePose:
    t = rng.normal(size=3)
    return RelativePose(random_rotation(rng, np.radians(max_angle_deg)), 1.0, t / np.linalg.norm(t))


def corollary1_draw(rng, K=K_TEST, lam=2.0):
    """One random (pose, depth, pixel, circle, query scale) draw.

    Returns ``(inside, in_interval, tie)`` where ``inside`` is the direct
    projection test and ``in_interval`` is the closed-form interval test.
    """
    rel = random_relative(rng)
    p = rng.uniform([0, 0], [K.width, K.height])
    d = rng.uniform(0.5, 5.0)
    r = rng.uniform(0.5, 2.0)
    s_true = rng.uniform(0.0, 1.0)
    q_true, _ = project_at_scale(rel, K, p, r * d, s_true)
    if q_true is None:
        q_true = rng.uniform([0, 0], [K.width, K.height])
    center = q_true + rng.uniform(-1.5 * lam, 1.5 * lam, size=2)
    u = rng.random()
    if u < 0.5:
        s = s_true * np.exp(rng.normal(0.0, 0.05))
    elif u < 0.8:
        s = rng.uniform(0.0, 2.0 * s_true)
    else:
        s = rng.uniform(0.0, 5.0)

    q, _ = project_at_scale(rel, K, p, r * d, s)
    dist = np.inf if q is None else float(np.linalg.norm(q - center))
    inside = dist <= lam
    lo, hi, valid = pixel_bounds(rel, p, center, d, lam, K)
    x = s / r
    in_interval = bool(valid and lo <= x <= hi)
    tie = abs(dist - lam) < TIE_TOL
    if valid:
        for b in (lo, hi):
            if np.isfinite(b) and abs(x - b) <= TIE_TOL * max(1.0, abs(b)):
                tie = True
    return inside, in_interval, tie


def corollary1_violations(n: int, seed: int = 0) -> tuple[int, int]:
    """Count iff violations (excluding boundary ties) and ties over ``n`` draws."""
    rng = np.random.default_rng(seed)
    violations = ties = 0
    for _ in range(n):
        inside, in_interval, tie = corollary1_draw(rng)
        if tie:
            ties += 1
        elif inside != in_interval:
            violations += 1
    return violations, ties


def corollary2_max_error(n: int, seed: int = 0, K=K_TEST) -> float:
    """Largest relative deviation of ``J(r d) / (r J(d))`` from one over ``n`` draws."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        rel = random_relative(rng)
        p = rng.uniform([0, 0], [K.width, K.height])
        d = rng.uniform(0.5, 5.0)
        r = rng.uniform(0.2, 5.0)
        q, _ = project_at_scale(rel, K, p, d, rng.uniform(0.05, 1.0))
        if q is None:
            continue
        base = scale_from_projection(rel, d, p, q, K)
        scaled = scale_from_projection(rel, r * d, p, q, K)
        worst = max(worst, abs(scaled - r * base) / abs(r * base))
        done += 1
    return worst
