"""Multi-view RANSAC over pose groups with Hough-indexed bundle-adjustment scoring.

A pose group picks one normalized candidate per support frame.  Its score is
the best total inlier count over all ordered frame pairs that per-frame
scales ``S`` and depth adjustments ``R`` can reach.  Per-pair counts are
read from Hough accumulators, so the inner optimization only indexes
matrices.  A greedy search swaps one frame's candidate at a time and keeps
the best group of each epoch until the score stops rising.

Matrices depend only on the candidates of their two frames and are cached,
so a swap only builds the matrices of pairs touching the swapped frame.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.ndimage import uniform_filter

from .config import PipelineConfig
from .errors import PoolInvalid
from .frames import FrameSet, PairSamples, sample_pair
from .geometry import NormalizedPose, ScaledPose, rodrigues
from .hough import HoughMatrix, build_hough_matrix, build_hough_matrix_3d
from .minimal_solver import CandidatePool

logger = logging.getLogger(__name__)

ROOT_KEY = -1


@dataclass(frozen=True)
class PoseGroup:
    """Candidate index per support frame, stored as sorted ``(frame, k)`` pairs."""

    indices: tuple[tuple[int, int], ...]

    @classmethod
    def from_dict(cls, d: dict[int, int]) -> "PoseGroup":
        return cls(tuple(sorted(d.items())))

    def as_dict(self) -> dict[int, int]:
        return dict(self.indices)

    def index(self, frame: int) -> int:
        return self.as_dict()[frame]

    def replace(self, frame: int, k: int) -> "PoseGroup":
        d = self.as_dict()
        d[frame] = k
        return PoseGroup.from_dict(d)

    def poses(self, pool: CandidatePool) -> dict[int, NormalizedPose]:
        return {f: pool.poses[f][k] for f, k in self.indices}


@dataclass
class ConsensusState:
    scales: dict[int, float]
    adjustments: dict[int, float]
    score: int = 0

    def __post_init__(self):
        for f, s in self.scales.items():
            if not s > 0:
                raise ValueError(f"scale of frame {f} must be positive, got {s}")
        for f, r in self.adjustments.items():
            if not r > 0:
                raise ValueError(f"adjustment of frame {f} must be positive, got {r}")


# ---------------------------------------------------------------------------
# sampling and caching


def draw_samples(
    frames: FrameSet, count: int, seed: int, confidence_min: float = 0.2, need_target_depth: bool = False
) -> dict[tuple[int, int], PairSamples]:
    """Fixed correspondence samples per ordered pair, one seeded stream per pair."""
    out = {}
    for i, j in frames.ordered_pairs():
        smp = sample_pair(frames, i, j, count, np.random.default_rng([seed, i, j]), confidence_min)
        if need_target_depth:
            keep = smp.depths_j > 0
            smp = PairSamples(
                i, j, smp.pixels_i[keep], smp.depths_i[keep], smp.targets[keep], smp.depths_j[keep], smp.confidence[keep]
            )
        out[(i, j)] = smp
    return out


class HoughCache:
    """Builds each (pair, candidate pair) accumulator at most once."""

    def __init__(
        self,
        frames: FrameSet,
        pool: CandidatePool,
        samples: dict[tuple[int, int], PairSamples],
        mode: str = "rgb",
        lam: float = 2.0,
        resolution: tuple[int, int] = (100, 200),
        x_max: float = 1.0,
    ):
        self.frames = frames
        self.pool = pool
        self.samples = samples
        self.mode = mode
        self.lam = lam
        self.resolution = tuple(resolution)
        self.x_max = x_max
        self.builds = 0
        self.hits = 0
        self._store: dict[tuple, tuple[HoughMatrix, np.ndarray]] = {}
        self._extra: dict[int, list[NormalizedPose]] = {}
        self._lock = threading.Lock()

    def register(self, frame: int, pose: NormalizedPose) -> int:
        """Add an off-pool candidate for ``frame``; returns its candidate index."""
        extra = self._extra.setdefault(frame, [])
        extra.append(pose)
        return self.pool.size(frame) + len(extra) - 1

    def key(self, i: int, j: int, k_i: int, k_j: int) -> tuple[int, int, int, int]:
        root = self.frames.root
        return (i, j, ROOT_KEY if i == root else k_i, ROOT_KEY if j == root else k_j)

    def pose(self, frame: int, k: int) -> NormalizedPose:
        if k == ROOT_KEY:
            return NormalizedPose.identity()
        n = self.pool.size(frame)
        return self.pool.poses[frame][k] if k < n else self._extra[frame][k - n]

    def get(self, i: int, j: int, k_i: int, k_j: int) -> tuple[HoughMatrix, np.ndarray]:
        """The raw accumulator and its smoothed copy used by the gradient path."""
        key = self.key(i, j, k_i, k_j)
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                self.hits += 1
                return hit
            builder = build_hough_matrix_3d if self.mode == "rgbd" else build_hough_matrix
            K = self.frames.intrinsics
            H = builder(
                self.pose(i, key[2]),
                self.pose(j, key[3]),
                self.samples[(i, j)],
                self.lam,
                self.resolution,
                self.x_max,
                K[i],
                K[j],
                root=self.frames.root,
            )
            smooth = _smooth(H)
            self._store[key] = (H, smooth)
            self.builds += 1
            return H, smooth

    def __len__(self) -> int:
        return len(self._store)


def _smooth(H: HoughMatrix) -> np.ndarray:
    grid = H.grid.astype(np.float64)
    if H.single_row:
        out = np.zeros_like(grid)
        out[0] = uniform_filter(grid[0], size=3, mode="nearest")
        return out
    return uniform_filter(grid, size=3, mode="nearest")


# ---------------------------------------------------------------------------
# group arrays and numba kernels


@dataclass
class _GroupArrays:
    raw: np.ndarray  # (P, Y, X) float64
    smooth: np.ndarray
    pi: np.ndarray
    pj: np.ndarray
    u: np.ndarray  # (P, 3) limit direction of s_i
    b: np.ndarray  # (P, 3) limit direction of s_j
    theta: np.ndarray
    single: np.ndarray
    x_max: float
    matrices: list = field(default_factory=list)


def _group_arrays(cache: HoughCache, group: PoseGroup) -> _GroupArrays:
    frames = cache.frames
    idx = group.as_dict()
    idx[frames.root] = ROOT_KEY
    mats, raws, smooths = [], [], []
    for i, j in frames.ordered_pairs():
        H, sm = cache.get(i, j, idx[i], idx[j])
        mats.append(H)
        raws.append(H.grid)
        smooths.append(sm)
    P = len(mats)
    u = np.zeros((P, 3))
    b = np.zeros((P, 3))
    theta = np.zeros(P)
    single = np.zeros(P, dtype=np.bool_)
    pairs = frames.ordered_pairs()
    for p, H in enumerate(mats):
        i, j = pairs[p]
        # stored arc endpoints: start is the s_j limit, end the s_i limit
        if i == frames.root:
            b[p] = H.direction_start
        elif j == frames.root:
            u[p] = H.direction_start
        else:
            b[p] = H.direction_start
            u[p] = H.direction_end if not H.single_row else -H.rotation @ cache.pose(i, idx[i]).t_bar
        theta[p] = H.theta_max
        single[p] = H.single_row
    return _GroupArrays(
        np.ascontiguousarray(np.stack(raws).astype(np.float64)),
        np.ascontiguousarray(np.stack(smooths)),
        np.array([i for i, _ in pairs], dtype=np.int64),
        np.array([j for _, j in pairs], dtype=np.int64),
        u,
        b,
        theta,
        single,
        cache.x_max,
        mats,
    )


@numba.njit(cache=True)
def _coords(s, r, pi, pj, u, b, theta, single, p):
    si = s[pi[p]]
    sj = s[pj[p]]
    tx = si * u[p, 0] + sj * b[p, 0]
    ty = si * u[p, 1] + sj * b[p, 1]
    tz = si * u[p, 2] + sj * b[p, 2]
    n = math.sqrt(tx * tx + ty * ty + tz * tz)
    x = n / r[pi[p]]
    y = 0.0
    if not single[p] and n > 1e-12:
        y = math.atan2(si * math.sin(theta[p]), sj + si * math.cos(theta[p]))
    return tx, ty, tz, n, x, y


@numba.njit(cache=True)
def _nearest_scores(grids, s, r, pi, pj, u, b, theta, single, x_max, out):
    n_rows = grids.shape[1]
    n_cols = grids.shape[2]
    dx = x_max / n_cols
    for p in range(grids.shape[0]):
        _, _, _, _, x, y = _coords(s, r, pi, pj, u, b, theta, single, p)
        x = min(max(x, 0.0), x_max)
        col = min(int(math.floor(x / dx)), n_cols - 1)
        row = 0
        if not single[p]:
            dy = theta[p] / n_rows
            y = min(max(y, 0.0), theta[p])
            row = min(int(math.floor(y / dy)), n_rows - 1)
        out[p] = grids[p, row, col]


@numba.njit(cache=True)
def _bilinear(grid, fx, fy, single):
    n_rows = grid.shape[0]
    n_cols = grid.shape[1]
    gx = 1.0
    if fx <= 0.0:
        fx = 0.0
        gx = 0.0
    elif fx >= n_cols - 1.0:
        fx = n_cols - 1.0
        gx = 0.0
    c0 = min(int(fx), n_cols - 2)
    ax = fx - c0
    if single or n_rows == 1:
        g0 = grid[0, c0]
        g1 = grid[0, c0 + 1]
        return g0 + ax * (g1 - g0), gx * (g1 - g0), 0.0
    gy = 1.0
    if fy <= 0.0:
        fy = 0.0
        gy = 0.0
    elif fy >= n_rows - 1.0:
        fy = n_rows - 1.0
        gy = 0.0
    r0 = min(int(fy), n_rows - 2)
    ay = fy - r0
    g00 = grid[r0, c0]
    g01 = grid[r0, c0 + 1]
    g10 = grid[r0 + 1, c0]
    g11 = grid[r0 + 1, c0 + 1]
    top = g00 + ax * (g01 - g00)
    bot = g10 + ax * (g11 - g10)
    val = top + ay * (bot - top)
    d_fx = gx * ((1 - ay) * (g01 - g00) + ay * (g11 - g10))
    d_fy = gy * (bot - top)
    return val, d_fx, d_fy


@numba.njit(cache=True)
def _objective_and_grad(grids, s, r, pi, pj, u, b, theta, single, x_max, gs, gr):
    n_rows = grids.shape[1]
    n_cols = grids.shape[2]
    dx = x_max / n_cols
    total = 0.0
    gs[:] = 0.0
    gr[:] = 0.0
    for p in range(grids.shape[0]):
        i = pi[p]
        j = pj[p]
        tx, ty, tz, n, x, y = _coords(s, r, pi, pj, u, b, theta, single, p)
        if n < 1e-12:
            continue
        fx = x / dx - 0.5
        fy = 0.0
        dy = 1.0
        if not single[p]:
            dy = theta[p] / n_rows
            fy = y / dy - 0.5
        val, d_fx, d_fy = _bilinear(grids[p], fx, fy, single[p])
        total += val
        d_x = d_fx / dx
        d_y = d_fy / dy
        si = s[i]
        sj = s[j]
        tu = tx * u[p, 0] + ty * u[p, 1] + tz * u[p, 2]
        tb = tx * b[p, 0] + ty * b[p, 1] + tz * b[p, 2]
        ri = r[i]
        # chain rule in log space: d/dlog(v) = v * d/dv
        gs[i] += si * d_x * tu / (n * ri)
        gs[j] += sj * d_x * tb / (n * ri)
        gr[i] += -d_x * x
        if not single[p]:
            sin_t = math.sin(theta[p])
            gs[i] += si * d_y * sj * sin_t / (n * n)
            gs[j] += -sj * d_y * si * sin_t / (n * n)
    return total


@numba.njit(cache=True)
def _adam_ascent(grids, s0, r0, free_s, free_r, pi, pj, u, b, theta, single, x_max, lr, iters):
    N = s0.shape[0]
    ls = np.log(np.maximum(s0, 1e-300))
    lr_ = np.log(r0)
    m_s = np.zeros(N)
    v_s = np.zeros(N)
    m_r = np.zeros(N)
    v_r = np.zeros(N)
    gs = np.zeros(N)
    gr = np.zeros(N)
    s = s0.copy()
    r = r0.copy()
    b1 = 0.9
    b2 = 0.999
    eps = 1e-8
    skipped = 0
    for it in range(1, iters + 1):
        _objective_and_grad(grids, s, r, pi, pj, u, b, theta, single, x_max, gs, gr)
        finite = True
        for k in range(N):
            if not (math.isfinite(gs[k]) and math.isfinite(gr[k])):
                finite = False
        if not finite:
            skipped += 1
            continue
        c1 = 1.0 - b1**it
        c2 = 1.0 - b2**it
        for k in range(N):
            if free_s[k]:
                m_s[k] = b1 * m_s[k] + (1 - b1) * gs[k]
                v_s[k] = b2 * v_s[k] + (1 - b2) * gs[k] * gs[k]
                ls[k] += lr * (m_s[k] / c1) / (math.sqrt(v_s[k] / c2) + eps)
                s[k] = math.exp(ls[k])
            if free_r[k]:
                m_r[k] = b1 * m_r[k] + (1 - b1) * gr[k]
                v_r[k] = b2 * v_r[k] + (1 - b2) * gr[k] * gr[k]
                lr_[k] += lr * (m_r[k] / c1) / (math.sqrt(v_r[k] / c2) + eps)
                r[k] = math.exp(lr_[k])
    return s, r, skipped


# ---------------------------------------------------------------------------
# consensus


def _vectors(frames: FrameSet, state: ConsensusState):
    n = frames.n_frames
    s = np.zeros(n)
    r = np.ones(n)
    for f, v in state.scales.items():
        s[f] = v
    for f, v in state.adjustments.items():
        r[f] = v
    return s, r


def _state(frames: FrameSet, s: np.ndarray, r: np.ndarray, score: int) -> ConsensusState:
    sup = frames.supports
    return ConsensusState({f: float(s[f]) for f in sup}, {f: float(r[f]) for f in sup}, int(score))


def certified_score(arrays: _GroupArrays, s: np.ndarray, r: np.ndarray) -> int:
    out = np.zeros(arrays.raw.shape[0])
    _nearest_scores(
        arrays.raw, s, r, arrays.pi, arrays.pj, arrays.u, arrays.b, arrays.theta, arrays.single, arrays.x_max, out
    )
    return int(out.sum())


def _peak(H: HoughMatrix, smooth: np.ndarray) -> tuple[float, float, float]:
    """Centre of the strongest plateau of the smoothed accumulator: ``(x, y, count)``."""
    active = smooth[:1] if H.single_row else smooth
    best = active.max()
    rows, cols = np.nonzero(active >= best - 1e-9)
    row = int(rows[len(rows) // 2])
    in_row = cols[rows == row]
    col = 0.5 * (in_row.min() + in_row.max())
    dx = H.x_max / H.grid.shape[1]
    y = 0.0 if H.single_row else (row + 0.5) * H.theta_max / H.grid.shape[0]
    return (col + 0.5) * dx, y, float(best)


def seed_from_peaks(frames: FrameSet, arrays: _GroupArrays, fit_adjustments: bool) -> tuple[np.ndarray, np.ndarray]:
    """Scales and adjustments consistent with every pair's accumulator peak (log-space least squares)."""
    root = frames.root
    sup = frames.supports
    col_s = {f: k for k, f in enumerate(sup)}
    col_r = {f: len(sup) + k for k, f in enumerate(sup)} if fit_adjustments else {}
    n_var = len(sup) + len(col_r)
    rows, rhs = [], []

    def eq(coeffs, value):
        row = np.zeros(n_var)
        for c, v in coeffs:
            row[c] += v
        rows.append(row)
        rhs.append(value)

    for p, H in enumerate(arrays.matrices):
        i, j = int(arrays.pi[p]), int(arrays.pj[p])
        x, y, count = _peak(H, arrays.smooth[p])
        if count <= 0 or x <= 0:
            continue
        lx = math.log(x)
        r_term = [(col_r[i], -1.0)] if i in col_r else []
        if i == root:
            eq([(col_s[j], 1.0)], lx)
        elif j == root:
            eq([(col_s[i], 1.0)] + r_term, lx)
        elif not H.single_row:
            th = H.theta_max
            y = min(max(y, 1e-6), th - 1e-6)
            eq([(col_s[i], 1.0), (col_s[j], -1.0)], math.log(math.sin(y) / math.sin(th - y)))
            eq([(col_s[j], 1.0)] + r_term, lx - math.log(math.sin(th) / math.sin(th - y)))
    s = np.zeros(frames.n_frames)
    r = np.ones(frames.n_frames)
    fallback = 0.1 * float(np.median(frames.depths[root][frames.depths[root] > 0]))
    if rows:
        A = np.array(rows)
        sol, *_ = np.linalg.lstsq(A, np.array(rhs), rcond=None)
        covered = np.abs(A).sum(axis=0) > 0
    else:
        sol = np.zeros(n_var)
        covered = np.zeros(n_var, dtype=bool)
    for f in sup:
        c = col_s[f]
        s[f] = math.exp(sol[c]) if covered[c] and np.isfinite(sol[c]) else fallback
        if f in col_r:
            c = col_r[f]
            r[f] = math.exp(sol[c]) if covered[c] and np.isfinite(sol[c]) else 1.0
    return s, r


def ba_consensus(
    group: PoseGroup,
    cache: HoughCache,
    init: ConsensusState | None = None,
    iters: int = 200,
    lr: float = 5e-4,
    extra_inits: list[ConsensusState] | None = None,
) -> ConsensusState:
    """Best certified score over scales and adjustments for a fixed pose group.

    Starts from the strongest of ``init``, any ``extra_inits`` and the
    accumulator-peak seed (by certified score, earlier on ties), runs Adam ascent in log space on the
    smoothed bilinear score, and returns whichever of the start and end
    points certifies higher.
    """
    frames = cache.frames
    arrays = _group_arrays(cache, group)
    fit_r = cache.mode != "rgbd"
    starts = []
    for st in [init] + list(extra_inits or []):
        if st is not None:
            s, r = _vectors(frames, st)
            if not fit_r:
                r = np.ones_like(r)
            starts.append((s, r))
    # supplied starts come first so they win certified-score ties with the peak seed
    starts.append(seed_from_peaks(frames, arrays, fit_r))
    scored = [(certified_score(arrays, s, r), k) for k, (s, r) in enumerate(starts)]
    best_score, best_k = max(scored, key=lambda t: (t[0], -t[1]))
    s0, r0 = starts[best_k]
    free_s = np.zeros(frames.n_frames, dtype=np.bool_)
    free_s[frames.supports] = True
    free_r = free_s.copy() if fit_r else np.zeros_like(free_s)
    s1, r1, skipped = _adam_ascent(
        arrays.smooth, s0, r0, free_s, free_r,
        arrays.pi, arrays.pj, arrays.u, arrays.b, arrays.theta, arrays.single,
        arrays.x_max, lr, iters,
    )  # fmt: skip
    if skipped:
        logger.debug("BA skipped %d non-finite gradient steps", skipped)
    final = certified_score(arrays, s1, r1)
    if final >= best_score:
        return _state(frames, s1, r1, final)
    return _state(frames, s0, r0, best_score)


# ---------------------------------------------------------------------------
# greedy search


@dataclass
class BRCResult:
    group: PoseGroup
    state: ConsensusState
    poses: dict[int, ScaledPose]
    normalized: dict[int, NormalizedPose]
    score_trace: list[int]
    epoch_builds: list[int]
    cache_hits: int
    epochs: int


def greedy_epoch(
    group: PoseGroup,
    state: ConsensusState,
    pool: CandidatePool,
    cache: HoughCache,
    iters: int = 200,
    lr: float = 5e-4,
) -> tuple[PoseGroup, ConsensusState, bool]:
    """Evaluate every single-frame swap of the incumbent; keep the best if it beats the incumbent.

    Ablations are visited by frame then candidate index and only a strictly
    higher score replaces the running best, so ties favour smaller indices
    and the incumbent survives any tie with it.
    """
    best_group, best_state = None, None
    for f in sorted(pool.poses):
        current = group.index(f)
        for k in range(pool.size(f)):
            if k == current:
                continue
            g = group.replace(f, k)
            st = ba_consensus(g, cache, init=state, iters=iters, lr=lr)
            if best_state is None or st.score > best_state.score:
                best_group, best_state = g, st
    if best_state is not None and best_state.score > state.score:
        return best_group, best_state, True
    return group, state, False


def _perturbations(pose: NormalizedPose, delta: float) -> list[NormalizedPose]:
    """Small rotations about each axis and tilts of the direction along its tangent plane."""
    out = [NormalizedPose(rodrigues(a * delta * e) @ pose.R, pose.t_bar) for e in np.eye(3) for a in (1.0, -1.0)]
    t = pose.t_bar
    helper = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(t, helper)
    e1 /= np.linalg.norm(e1)
    for e in (e1, np.cross(t, e1)):
        for a in (1.0, -1.0):
            v = t + a * math.tan(delta) * e
            out.append(NormalizedPose(pose.R, v / np.linalg.norm(v)))
    return out


def local_refine(
    group: PoseGroup,
    state: ConsensusState,
    cache: HoughCache,
    deltas_deg=(0.2, 0.1, 0.05),
    max_evals: int = 400,
    iters: int = 200,
    lr: float = 5e-4,
) -> tuple[PoseGroup, ConsensusState, int]:
    """Pattern search around the winning group on the same certified score.

    Every perturbed pose becomes an off-pool candidate; a move is taken only
    on a strict score increase, so the certified score cannot drop.
    Returns the group, its state and the number of evaluated variants.
    """
    evals = 0
    for delta in np.radians(np.asarray(deltas_deg, dtype=np.float64)):
        moved = True
        while moved and evals < max_evals:
            moved = False
            for f in sorted(group.as_dict()):
                base = cache.pose(f, group.index(f))
                for variant in _perturbations(base, float(delta)):
                    if evals >= max_evals:
                        break
                    g = group.replace(f, cache.register(f, variant))
                    st = ba_consensus(g, cache, init=state, iters=iters, lr=lr)
                    evals += 1
                    if st.score > state.score:
                        group, state, moved = g, st, True
                        break
    return group, state, evals


def _append_score(trace: list[int], score: int) -> None:
    if score < trace[-1]:
        raise AssertionError(f"certified score decreased: {trace + [score]}")
    trace.append(score)


def run_brc(frames: FrameSet, pool: CandidatePool, config: PipelineConfig | None = None) -> BRCResult:
    """Greedy pose-group search from the per-frame top candidates until the score stalls."""
    config = config or PipelineConfig()
    pool.validate(frames.supports)
    rgbd = config.mode == "rgbd"
    samples = draw_samples(frames, config.m_samples, config.seed, config.confidence_min, need_target_depth=rgbd)
    for key, smp in samples.items():
        if len(smp) == 0:
            raise PoolInvalid(f"pair {key} has no usable correspondences")
    cache = HoughCache(
        frames,
        pool,
        samples,
        mode=config.mode,
        lam=config.lambda_3d if rgbd else config.lambda_2d,
        resolution=config.hough_resolution,
        x_max=config.x_max,
    )
    group = PoseGroup.from_dict({f: 0 for f in frames.supports})
    state = ba_consensus(group, cache, None, config.ba_iters, config.ba_lr)
    trace = [state.score]
    epoch_builds = []
    epochs = 0
    builds_before = 0
    for _ in range(config.epoch_cap):
        group, state, improved = greedy_epoch(group, state, pool, cache, config.ba_iters, config.ba_lr)
        epochs += 1
        epoch_builds.append(cache.builds - builds_before)
        builds_before = cache.builds
        _append_score(trace, state.score)
        logger.info("epoch %d: score %d (%d new matrices)", epochs, state.score, epoch_builds[-1])
        if not improved:
            break
    if config.local_refine_deg:
        group, state, n_evals = local_refine(
            group, state, cache, config.local_refine_deg, config.local_refine_evals, config.ba_iters, config.ba_lr
        )
        _append_score(trace, state.score)
        logger.info("local refinement: score %d after %d variants", state.score, n_evals)
    normalized = {f: cache.pose(f, k) for f, k in group.indices}
    poses = {f: normalized[f].with_scale(state.scales[f]) for f in frames.supports}
    return BRCResult(group, state, poses, normalized, trace, epoch_builds, cache.hits, epochs)


def cache_complexity_audit(result: BRCResult, n_frames: int, k_candidates: int) -> dict:
    """Compare per-epoch matrix builds with the unique-matrix bounds."""
    first_bound = n_frames * (n_frames - 1) + 2 * (n_frames - 1) ** 2 * (k_candidates - 1)
    later_bound = 2 * (n_frames - 2) * (k_candidates - 1)
    builds = result.epoch_builds
    report = {
        "first_epoch_builds": builds[0] if builds else 0,
        "first_epoch_bound": first_bound,
        "later_epoch_builds": builds[1:],
        "later_epoch_bound": later_bound,
    }
    report["ok"] = report["first_epoch_builds"] <= first_bound and all(b <= later_bound for b in builds[1:])
    return report


def score_configuration(
    frames: FrameSet,
    normalized: dict[int, NormalizedPose],
    config: PipelineConfig,
    inits: list[ConsensusState] | None = None,
) -> ConsensusState:
    """BA-fit certified score of a fixed set of normalized poses (e.g. ground truth)."""
    pool = CandidatePool({f: [normalized[f]] for f in frames.supports}, {f: np.zeros(1) for f in frames.supports})
    rgbd = config.mode == "rgbd"
    samples = draw_samples(frames, config.m_samples, config.seed, config.confidence_min, need_target_depth=rgbd)
    cache = HoughCache(
        frames,
        pool,
        samples,
        mode=config.mode,
        lam=config.lambda_3d if rgbd else config.lambda_2d,
        resolution=config.hough_resolution,
        x_max=config.x_max,
    )
    group = PoseGroup.from_dict({f: 0 for f in frames.supports})
    inits = list(inits or [])
    return ba_consensus(group, cache, None, config.ba_iters, config.ba_lr, extra_inits=inits)
