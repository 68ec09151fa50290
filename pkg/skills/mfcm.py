"""
Modified fuzzy C-means with an additive zero-mean bias field.

Minimizes

    J* = sum_i sum_n mu_in^m D_in + (alpha / |M|) sum_i sum_n mu_in^m R_in
    D_in = (y_n - b_n - c_i)^2,   R_in = sum over in-mask 8-neighbors r of D_ir

subject to sum_i mu_in = 1 per voxel and sum_n b_n = 0, by block coordinate
descent: memberships, then centers, then bias. Each block update is the exact
minimizer of J* in its block, so J* never increases across a sweep.

All per-voxel arrays live on the masked voxels only, in x-fastest order.
Reductions go through a ChunkPool, so results do not depend on thread count.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from skills.parallel import ChunkPool
from skills.smoothing import DEFAULT_SIGMA, gaussian_smooth
from skills.thresholding import init_centers
from skills.volume import SLICE_OFFSETS, LabelVolume, Mask, Volume, require_same_dims

logger = logging.getLogger(__name__)

NEIGHBORHOOD_SIZE = 8


class FcmParams(BaseModel):
    """Solver configuration. Defaults are the suggested published values."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    clusters: int = Field(3, alias="I", ge=2, le=4, description="Number of clusters")
    m: float = Field(2.0, gt=1.0, le=100.0, description="Fuzziness exponent")
    alpha: float = Field(1.0, ge=0.0, description="Neighborhood term weight")
    neighborhood: Literal[8] = Field(8, description="In-slice 3x3 window minus the center")
    epsilon: float = Field(1e-5, gt=0.0, description="Stop when the center step norm drops below this")
    max_iters: int = Field(200, ge=1, description="Sweep cap")
    bias_init_scale: float = Field(1e-3, ge=0.0, description="Half-width of the uniform random bias init")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="Seed of the bias init RNG")
    sigma: tuple[float, float, float] = Field(DEFAULT_SIGMA, description="Bias smoothing sigma (x, y, z) in voxels")
    estimate_bias: bool = Field(True, description="False freezes b at 0 (plain neighborhood FCM)")
    collapse_tolerance: float = Field(1e-2, ge=0.0, description="Centers closer than this count as collapsed")

    @field_validator("sigma")
    @classmethod
    def _non_negative_sigma(cls, value):
        if any(s < 0 for s in value):
            raise ValueError("sigma components must be >= 0")
        return value

    @property
    def neighbor_weight(self) -> float:
        """alpha / |M|"""
        return self.alpha / NEIGHBORHOOD_SIZE


@dataclass
class FcmState:
    mu: np.ndarray          # (I, N)
    centers: np.ndarray     # (I,)
    bias: np.ndarray        # (N,)
    lam: float = 0.0
    sweep: int = 0
    objective: float = float("nan")
    stale: np.ndarray | None = None  # (I,) centers left unchanged for lack of membership mass

    @property
    def clusters(self) -> int:
        return len(self.centers)


class SweepRecord(BaseModel):
    sweep: int
    objective: float
    delta: float


@dataclass
class SolveResult:
    state: FcmState
    bias: Volume
    smoothed_bias: Volume
    corrected: Volume
    problem: "FcmProblem"
    history: list[SweepRecord] = field(default_factory=list)
    converged: bool = False
    collapsed: bool = False
    elapsed_seconds: float = 0.0


# ── Problem setup ────────────────────────────────────────────────────────────

def _neighbor_table(mask: Mask) -> np.ndarray:
    """
    (8, N) positions of each masked voxel's in-slice neighbors among the masked
    voxels, in SLICE_OFFSETS order. Missing neighbors point at N, a zero pad slot.
    """
    bits = mask.bits
    count = int(np.count_nonzero(bits))
    position = np.full(bits.shape, count, dtype=np.int64)
    position[bits] = np.arange(count)
    padded = np.pad(position, ((0, 0), (1, 1), (1, 1)), constant_values=count)

    nz, ny, nx = bits.shape
    table = np.empty((NEIGHBORHOOD_SIZE, count), dtype=np.int64)
    for k, (dy, dx) in enumerate(SLICE_OFFSETS):
        shifted = padded[:, 1 + dy: 1 + dy + ny, 1 + dx: 1 + dx + nx]
        table[k] = shifted[bits]
    return table


@dataclass
class FcmProblem:
    """Masked intensities plus the neighbor structure every update needs."""
    y: np.ndarray               # (N,) float64
    mask: Mask
    spacing: tuple[float, float, float]
    neighbors: np.ndarray       # (8, N)
    valid_neighbors: np.ndarray  # (N,)
    pool: ChunkPool

    @classmethod
    def build(cls, y: Volume, mask: Mask, threads: int = 1) -> "FcmProblem":
        require_same_dims(y, mask)
        if mask.count == 0:
            raise ValueError("Cannot solve on an empty mask")
        neighbors = _neighbor_table(mask)
        valid = (neighbors < mask.count).sum(axis=0)
        return cls(y.data[mask.bits].astype(np.float64), mask, y.spacing, neighbors, valid, ChunkPool(threads))

    @property
    def n(self) -> int:
        return len(self.y)

    def close(self) -> None:
        self.pool.close()

    def __enter__(self) -> "FcmProblem":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def neighbor_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum over each voxel's in-mask neighbors of `values` (..., N)."""
        rows = np.atleast_2d(values)
        padded = np.concatenate([rows, np.zeros((rows.shape[0], 1))], axis=1)
        out = np.empty(rows.shape, dtype=np.float64)
        self.pool.fill(out, lambda s: padded[:, self.neighbors[:, s]].sum(axis=1), self.n)
        return out.reshape(np.shape(values))

    def total(self, fn: Callable[[slice], np.ndarray]) -> np.ndarray:
        return self.pool.sum(fn, self.n)

    def to_volume(self, values: np.ndarray, background: np.ndarray | float = 0.0) -> Volume:
        data = np.array(np.broadcast_to(background, self.mask.bits.shape), dtype=np.float64)
        data[self.mask.bits] = values
        return Volume(data, self.spacing)


# ── Objective ────────────────────────────────────────────────────────────────

def distances(problem: FcmProblem, state: FcmState) -> np.ndarray:
    """D_in, shape (I, N)."""
    residual = problem.y - state.bias
    return (residual[None, :] - state.centers[:, None]) ** 2


def weighted_distances(problem: FcmProblem, state: FcmState, params: FcmParams) -> np.ndarray:
    """W_in = D_in + (alpha / |M|) R_in."""
    D = distances(problem, state)
    if params.alpha == 0:
        return D
    return D + params.neighbor_weight * problem.neighbor_sum(D)


def objective(problem: FcmProblem, state: FcmState, params: FcmParams) -> float:
    W = weighted_distances(problem, state, params)
    um = state.mu ** params.m
    return float(problem.total(lambda s: np.sum(um[:, s] * W[:, s])))


def lagrangian(problem: FcmProblem, state: FcmState, params: FcmParams) -> float:
    """J* + lambda * sum_n b_n."""
    return objective(problem, state, params) + state.lam * float(problem.total(lambda s: np.sum(state.bias[s])))


# ── Block updates ────────────────────────────────────────────────────────────

def update_memberships(problem: FcmProblem, state: FcmState, params: FcmParams) -> FcmState:
    """
    mu_in proportional to W_in^(-1/(m-1)), normalized over clusters.

    Evaluated as (W_min / W_in)^(1/(m-1)) so no power overflows. A voxel with
    some W_in == 0 spreads its membership evenly over those clusters.
    """
    W = weighted_distances(problem, state, params)
    w_min = W.min(axis=0)
    at_zero = W == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (w_min[None, :] / np.where(at_zero, 1.0, W)) ** (1.0 / (params.m - 1.0))
    weights = np.where(w_min[None, :] == 0, at_zero.astype(np.float64), ratio)
    return replace(state, mu=weights / weights.sum(axis=0))


def update_centers(problem: FcmProblem, state: FcmState, params: FcmParams) -> FcmState:
    """
    Exact minimizer of J* in each center:

        c_i = sum_n mu^m (z_n + a sum_r z_r) / sum_n mu^m (1 + a |in-mask neighbors of n|)

    with z = y - b and a = alpha / |M|. A cluster with no membership mass keeps
    its center and is flagged stale.
    """
    a = params.neighbor_weight
    z = problem.y - state.bias
    um = state.mu ** params.m
    pulled = z + a * problem.neighbor_sum(z) if a else z
    weight = 1.0 + a * problem.valid_neighbors

    sums = problem.total(lambda s: np.stack([
        (um[:, s] * pulled[s]).sum(axis=1),
        (um[:, s] * weight[s]).sum(axis=1),
    ]))
    numerator, denominator = sums
    stale = denominator == 0
    centers = state.centers.copy()
    centers[~stale] = numerator[~stale] / denominator[~stale]
    if stale.any():
        logger.warning(f"Clusters {np.flatnonzero(stale).tolist()} have no membership mass, centers kept")
    return replace(state, centers=centers, stale=stale)


def update_bias(problem: FcmProblem, state: FcmState, params: FcmParams) -> FcmState:
    """
    Exact minimizer of J* in b under sum_n b_n = 0.

        beta_in = mu_in^m + a sum over voxels r that count n as a neighbor of mu_ir^m
        b_n     = y_n - (sum_i c_i beta_in + lambda / 2) / sum_i beta_in

    with lambda chosen so the bias sums to zero. In-slice neighborhoods are
    symmetric, so the reverse neighbor sum equals the forward one.
    """
    a = params.neighbor_weight
    um = state.mu ** params.m
    beta = um + a * problem.neighbor_sum(um) if a else um
    beta_sum = beta.sum(axis=0)
    assert np.all(beta_sum > 0), "membership weights vanished"

    q = problem.y - (state.centers[:, None] * beta).sum(axis=0) / beta_sum
    sum_q, sum_inv = problem.total(lambda s: np.array([q[s].sum(), (1.0 / beta_sum[s]).sum()]))
    lam = 2.0 * sum_q / sum_inv
    return replace(state, bias=q - lam / (2.0 * beta_sum), lam=float(lam))


# ── Solver ───────────────────────────────────────────────────────────────────

def initial_state(problem: FcmProblem, y: Volume, params: FcmParams) -> FcmState:
    """Otsu centers, uniform memberships, and b uniform on [-delta, delta] from a Philox stream."""
    centers = init_centers(y, problem.mask, params.clusters)
    if params.estimate_bias:
        rng = np.random.Generator(np.random.Philox(params.seed))
        bias = rng.uniform(-params.bias_init_scale, params.bias_init_scale, problem.n)
    else:
        bias = np.zeros(problem.n)
    mu = np.full((params.clusters, problem.n), 1.0 / params.clusters)
    return FcmState(mu=mu, centers=centers, bias=bias, stale=np.zeros(params.clusters, dtype=bool))


def sweep(problem: FcmProblem, state: FcmState, params: FcmParams) -> FcmState:
    state = update_memberships(problem, state, params)
    state = update_centers(problem, state, params)
    if params.estimate_bias:
        state = update_bias(problem, state, params)
    return state


def centers_collapsed(centers: np.ndarray, tolerance: float) -> bool:
    """True when two centers sit within tolerance of each other."""
    gaps = np.diff(np.sort(np.asarray(centers, dtype=np.float64)))
    return bool(gaps.size and gaps.min() < tolerance)


def sort_clusters(state: FcmState) -> FcmState:
    order = np.argsort(state.centers, kind="stable")
    stale = state.stale[order] if state.stale is not None else None
    return replace(state, mu=state.mu[order], centers=state.centers[order], stale=stale)


def solve(y: Volume, mask: Mask, params: FcmParams | None = None, threads: int = 1,
          progress: Callable[[int, float, float], None] | None = None) -> SolveResult:
    """
    Run sweeps until the center step norm falls below epsilon or max_iters is hit.

    The raw bias is smoothed once afterwards, re-centered to zero mean on the
    mask, and subtracted from y. Hitting max_iters is reported through
    `converged`, and centers closer than collapse_tolerance through
    `collapsed`; neither raises.
    """
    params = params or FcmParams()
    started = time.perf_counter()

    with FcmProblem.build(y, mask, threads) as problem:
        state = initial_state(problem, y, params)
        logger.info(f"Solving {problem.n} voxels, I={params.clusters}, m={params.m}, alpha={params.alpha}, "
                    f"initial centers {np.round(state.centers, 6).tolist()}")
        history: list[SweepRecord] = []
        converged = False
        for k in range(1, params.max_iters + 1):
            previous = state.centers
            state = sweep(problem, state, params)
            delta = float(np.linalg.norm(state.centers - previous))
            state = replace(state, sweep=k, objective=objective(problem, state, params))
            history.append(SweepRecord(sweep=k, objective=state.objective, delta=delta))
            if progress is not None:
                progress(k, state.objective, delta)
            if delta < params.epsilon:
                converged = True
                break

        if not converged:
            logger.warning(f"No convergence after {params.max_iters} sweeps (last delta {history[-1].delta:.3g})")
        state = sort_clusters(state)
        collapsed = centers_collapsed(state.centers, params.collapse_tolerance)
        if collapsed:
            logger.warning(f"Centers collapsed to {np.round(state.centers, 6).tolist()} "
                           f"(gap below {params.collapse_tolerance})")

        raw = problem.to_volume(state.bias)
        smoothed = gaussian_smooth(raw, mask, params.sigma)
        smooth_values = smoothed.data[mask.bits].astype(np.float64)
        smooth_values -= smooth_values.mean()
        smoothed = problem.to_volume(smooth_values)
        corrected = problem.to_volume(problem.y - smooth_values, background=y.data)

    elapsed = time.perf_counter() - started
    logger.info(f"Finished after {state.sweep} sweeps in {elapsed:.2f}s, centers {np.round(state.centers, 6).tolist()}")
    return SolveResult(state, raw, smoothed, corrected, problem, history, converged, collapsed, elapsed)


# ── Outputs ──────────────────────────────────────────────────────────────────

def hard_labels(state: FcmState, problem: FcmProblem) -> LabelVolume:
    """Argmax membership per masked voxel (clusters in ascending center order); background 0."""
    if state.clusters > 3:
        raise ValueError(f"Hard labels need at most 3 clusters, got {state.clusters}")
    labels = np.zeros(problem.mask.bits.shape, dtype=np.uint8)
    labels[problem.mask.bits] = np.argmax(state.mu, axis=0)
    return LabelVolume(labels, problem.spacing)


def membership_volumes(state: FcmState, problem: FcmProblem) -> list[Volume]:
    return [problem.to_volume(row) for row in state.mu]
