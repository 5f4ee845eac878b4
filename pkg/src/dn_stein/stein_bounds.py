"""Ingredients of the discrete normal approximation bounds.

Covers the normalization (m, c, Sigma) of a lattice sum W, the Stein operator
``m Tr(Sigma D2 h) - (z - m c)^T D h`` on forward differences, Monte-Carlo
moment sums over an intersection-graph decomposition, the Mineka coupling
smoothness bound and the assembled rate expressions. Universal constants
are never included: every bound here is the bracketed rate expression.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np
from scipy import sparse

from .config import MIN_MOMENT_REPLICATES, MIN_SHIFT_SAMPLES, MOMENT_BATCHES, REPLICATE_CHUNK
from .dependency import IntersectionGraph
from .errors import DomainError
from .models import (
    BoundBreakdown,
    MomentEstimate,
    MomentSums,
    NeighborhoodStats,
    SteinContext,
    TvEstimate,
)
from .numerics import RngStream
from .tv_distance import PmfTable, tv_tables

logger = logging.getLogger(__name__)

LatticeFunction = Callable[[np.ndarray], np.ndarray]


def context_from_moments(
    mu: Sequence[float], V: Sequence[Sequence[float]], gamma: float = 1.0
) -> SteinContext:
    """Normalize (mu, V) as m = ceil(Tr V / d), c = mu / m, Sigma = V / m."""
    mean = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.atleast_2d(np.asarray(V, dtype=float))
    d = len(mean)
    if cov.shape != (d, d):
        raise DomainError(f"V has shape {cov.shape}, expected ({d}, {d})")
    if gamma < 1:
        raise DomainError(f"gamma must be at least 1, got {gamma}")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(float(np.max(np.abs(cov))), 1e-300):
        raise DomainError("V is not symmetric")
    trace = float(np.trace(cov))
    if trace <= 0:
        raise DomainError(f"V must have positive trace, got {trace}")
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues[0] < -1e-10 * eigenvalues[-1]:
        raise DomainError(f"V is not positive semi-definite (eigenvalue {eigenvalues[0]:.3g})")

    m = max(1, math.ceil(trace / d))
    lam_min = max(float(eigenvalues[0]), 0.0)
    cond = float(eigenvalues[-1] / lam_min) if lam_min > 0 else math.inf
    return SteinContext(
        mu=mean.tolist(),
        V=cov.tolist(),
        m=m,
        c=(mean / m).tolist(),
        Sigma=(cov / m).tolist(),
        cond=max(1.0, cond),
        gamma=gamma,
    )


def _unit(d: int, i: int) -> np.ndarray:
    """Unit vector e_i in Z^d."""
    e = np.zeros(d, dtype=np.int64)
    e[i] = 1
    return e


def forward_differences(h: LatticeFunction, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """First and second forward differences of ``h`` at ``z``.

    For ``z`` of shape (..., d) returns arrays of shape (..., d) and
    (..., d, d).
    """
    z = np.asarray(z, dtype=np.int64)
    d = z.shape[-1]
    base = np.asarray(h(z), dtype=float)
    shifted = [np.asarray(h(z + _unit(d, i)), dtype=float) for i in range(d)]
    first = np.stack([s - base for s in shifted], axis=-1)
    second = np.empty(base.shape + (d, d))
    for i in range(d):
        for k in range(i, d):
            both = np.asarray(h(z + _unit(d, i) + _unit(d, k)), dtype=float)
            second[..., i, k] = both - shifted[i] - shifted[k] + base
            second[..., k, i] = second[..., i, k]
    return first, second


def apply_stein_operator(ctx: SteinContext, h: LatticeFunction, z: np.ndarray) -> np.ndarray:
    """m Tr(Sigma D2 h(z)) - (z - m c)^T D h(z); ``z`` may be a batch (N, d)."""
    z = np.asarray(z, dtype=np.int64)
    if z.shape[-1] != ctx.dimension:
        raise DomainError(f"z has dimension {z.shape[-1]}, context has {ctx.dimension}")
    first, second = forward_differences(h, z)
    trace_term = ctx.m * np.einsum("ik,...ki->...", ctx.sigma_matrix, second)
    drift = np.sum((z - ctx.centre) * first, axis=-1)
    return trace_term - drift


def _coordinate(ctx: SteinContext) -> LatticeFunction:
    centre = ctx.centre[0]
    return lambda z: z[..., 0] - centre


def _quadratic(ctx: SteinContext) -> LatticeFunction:
    centre = ctx.centre
    m = ctx.m
    return lambda z: np.sum((z - centre) ** 2, axis=-1) / m


def _clipped_indicator(ctx: SteinContext) -> LatticeFunction:
    threshold = math.floor(ctx.centre[0])
    return lambda z: np.clip(z[..., 0] - threshold, 0, 1).astype(float)


STEIN_TEST_FUNCTIONS_VERSION = 1
STEIN_TEST_FUNCTIONS: Dict[str, Callable[[SteinContext], LatticeFunction]] = {
    "coordinate": _coordinate,
    "quadratic": _quadratic,
    "clipped_indicator": _clipped_indicator,
}


def stein_operator_mean(
    ctx: SteinContext, h: LatticeFunction, samples: np.ndarray
) -> Tuple[float, float]:
    """Sample mean and standard error of the Stein operator over a batch."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if len(samples) < 2:
        raise DomainError("need at least two samples")
    values = apply_stein_operator(ctx, h, samples)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def difference_norms(
    h: LatticeFunction, centre: Sequence[float], radius: float
) -> Tuple[float, float]:
    """Sup norms of D h and D2 h over integer points within ``radius`` of ``centre``."""
    centre = np.asarray(centre, dtype=float)
    d = len(centre)
    if radius < 0:
        raise DomainError(f"radius must be non-negative, got {radius}")
    axes = [np.arange(math.ceil(c - radius), math.floor(c + radius) + 1) for c in centre]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    grid = grid[np.sum((grid - centre) ** 2, axis=1) <= radius * radius]
    if len(grid) == 0:
        return 0.0, 0.0
    first, second = forward_differences(h, grid)
    return float(np.max(np.abs(first))), float(np.max(np.abs(second)))


def stein_ball_radius(ctx: SteinContext) -> float:
    """Radius delta_0 * m of the region where the bound conditions on h apply."""
    return ctx.delta_zero * ctx.m


class DecomposableModel(Protocol):
    """Sampler exposing summands X^(j) on an intersection graph."""

    def intersection_graph(self) -> IntersectionGraph:
        """Dependency graph of the summands."""

    def summand_means(self) -> np.ndarray:
        """E X^(j), one row per summand."""

    def sample_summands(self, rng: RngStream) -> np.ndarray:
        """One joint draw of all summands, shape (n, d)."""

    def moments(self) -> MomentEstimate:
        """Mean and covariance of W."""


def _decomposition_operators(graph: IntersectionGraph) -> Tuple[sparse.csr_matrix, sparse.csr_matrix, np.ndarray, np.ndarray]:
    """Sparse maps X -> (Z^(j))_j and X -> (Z^(j,k))_(j,k) over pairs k in {j} u N_j."""
    n = graph.n
    rows, cols = [], []
    pair_j, pair_k = [], []
    pair_rows, pair_cols = [], []
    for j in range(n):
        near_j = graph.closed_neighborhood(j)
        rows.extend([j] * len(near_j))
        cols.extend(sorted(near_j))
        for k in sorted(near_j):
            index = len(pair_j)
            pair_j.append(j)
            pair_k.append(k)
            extra = sorted(graph.closed_neighborhood(k) - near_j)
            pair_rows.extend([index] * len(extra))
            pair_cols.extend(extra)
    z_map = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    zjk_map = sparse.csr_matrix(
        (np.ones(len(pair_rows)), (pair_rows, pair_cols)), shape=(len(pair_j), n)
    )
    return z_map, zjk_map, np.array(pair_j, dtype=int), np.array(pair_k, dtype=int)


def moment_sums_mc(
    model: DecomposableModel,
    reps: int,
    rng: RngStream,
    m: Optional[int] = None,
) -> MomentSums:
    """Monte-Carlo moment sums H0, H1 and H2 = max(H21, H22, H23, H24).

    Replicate ``r`` uses ``rng.derive(r)``. Standard errors come from
    batch means over ``MOMENT_BATCHES`` consecutive blocks of replicates.
    Neighbourhood second moments above ``d m`` are reported as violations.
    """
    required = ("intersection_graph", "summand_means", "sample_summands", "moments")
    if not all(callable(getattr(model, name, None)) for name in required):
        raise DomainError(f"{type(model).__name__} does not expose a decomposition")
    if reps < MIN_MOMENT_REPLICATES:
        raise DomainError(f"need at least {MIN_MOMENT_REPLICATES} replicates, got {reps}")

    graph = model.intersection_graph()
    mu_j = np.asarray(model.summand_means(), dtype=float)
    n, d = mu_j.shape
    if m is None:
        cov = model.moments().cov_array
        m = max(1, math.ceil(float(np.trace(cov)) / d))
    z_map, zjk_map, pair_j, pair_k = _decomposition_operators(graph)
    mu_norm = np.linalg.norm(mu_j, axis=1)

    # per-replicate totals for H0, H1, H21, H22; per-pair and per-summand
    # accumulators for the product terms
    totals = np.zeros((reps, 4))
    cross = np.zeros((reps, len(pair_j)))
    zjk_abs = np.zeros((reps, len(pair_j)))
    zj_abs = np.zeros((reps, n))
    zj_sq = np.zeros(n)
    zjk_sq = np.zeros(len(pair_j))
    for r in range(reps):
        x = np.asarray(model.sample_summands(rng.derive(r)), dtype=float)
        a = np.linalg.norm(x, axis=1)
        b = a + mu_norm
        z_j = np.linalg.norm(z_map @ x, axis=1)
        z_jk = np.linalg.norm(zjk_map @ x, axis=1)
        pair_cross = b[pair_j] * a[pair_k]
        totals[r] = (
            a.sum(),
            pair_cross.sum(),
            np.sum(b * z_j**2),
            np.sum(pair_cross * z_jk),
        )
        cross[r] = pair_cross
        zjk_abs[r] = z_jk
        zj_abs[r] = z_j
        zj_sq += z_j**2
        zjk_sq += z_jk**2

    scale = {
        "H0": d**-0.5 / m,
        "H1": 1.0 / (d * m),
        "H2": d**-1.5 / m,
    }

    def estimate(block: slice) -> np.ndarray:
        mean_totals = totals[block].mean(axis=0)
        mean_cross = cross[block].mean(axis=0)
        h23 = np.sum(mean_cross * zjk_abs[block].mean(axis=0))
        h24 = np.sum(mean_cross * zj_abs[block].mean(axis=0)[pair_j])
        return np.array(
            [
                scale["H0"] * mean_totals[0],
                scale["H1"] * mean_totals[1],
                scale["H2"] * mean_totals[2],
                scale["H2"] * mean_totals[3],
                scale["H2"] * h23,
                scale["H2"] * h24,
            ]
        )

    point = estimate(slice(0, reps))
    edges = np.linspace(0, reps, MOMENT_BATCHES + 1).astype(int)
    batches = np.array([estimate(slice(lo, hi)) for lo, hi in zip(edges[:-1], edges[1:])])
    errors = batches.std(axis=0, ddof=1) / math.sqrt(MOMENT_BATCHES)
    names = ["H0", "H1", "H21", "H22", "H23", "H24"]

    limit = d * m
    violations: List[Tuple[int, int]] = [
        (j, j) for j in range(n) if zj_sq[j] / reps > limit
    ]
    violations += [
        (int(j), int(k))
        for j, k, value in zip(pair_j, pair_k, zjk_sq / reps)
        if value > limit
    ]
    if violations:
        logger.warning(
            "%d neighbourhood second moments exceed d*m=%d", len(violations), limit
        )
    h2_parts = point[2:]
    worst = int(np.argmax(h2_parts))
    std_errors = dict(zip(names, (float(e) for e in errors)))
    std_errors["H2"] = std_errors[names[2 + worst]]
    return MomentSums(
        H0=float(point[0]),
        H1=float(point[1]),
        H2=float(h2_parts[worst]),
        H21=float(point[2]),
        H22=float(point[3]),
        H23=float(point[4]),
        H24=float(point[5]),
        std_errors=std_errors,
        m=m,
        replicates=reps,
        zhat_violations=violations,
    )


def mineka_smoothness_bound(T: float, eta: float) -> float:
    """Point-shift smoothness bound sqrt(2 / (pi T)) + eta, clipped to [0, 1]."""
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}")
    if not 0 <= eta <= 1:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    return min(1.0, math.sqrt(2.0 / (math.pi * T)) + eta)


def lazy_walk_endpoints(T: int, size: int, rng: RngStream) -> np.ndarray:
    """Endpoints after T steps of the walk moving -1, 0, +1 w.p. 1/4, 1/2, 1/4.

    The endpoint has the law of Binomial(2T, 1/2) - T.
    """
    if T < 1:
        raise DomainError(f"T must be at least 1, got {T}")
    return rng.generator.binomial(2 * T, 0.5, size=size).astype(np.int64) - T


def empirical_shift_tv(
    sampler: Callable[[RngStream, int], np.ndarray],
    direction: int,
    reps: int,
    rng: RngStream,
    n_bootstrap: int = 200,
) -> TvEstimate:
    """Plug-in TV between the law of a sampled W and of W + e_direction.

    ``sampler(stream, size)`` returns ``size`` draws as an (size, d) array;
    chunk ``c`` of ``REPLICATE_CHUNK`` draws uses ``rng.derive(0, c)``.
    """
    if reps < MIN_SHIFT_SAMPLES:
        raise DomainError(f"need at least {MIN_SHIFT_SAMPLES} draws, got {reps}")
    chunks = []
    for c, start in enumerate(range(0, reps, REPLICATE_CHUNK)):
        size = min(REPLICATE_CHUNK, reps - start)
        draws = np.asarray(sampler(rng.derive(0, c), size), dtype=np.int64)
        chunks.append(draws.reshape(size, -1))
    samples = np.concatenate(chunks)
    d = samples.shape[1]
    if not 0 <= direction < d:
        raise DomainError(f"direction {direction} outside [0, {d})")
    offset = _unit(d, direction)

    table = PmfTable.from_samples(samples)
    value = tv_tables(table, table.shift(offset))
    boot = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        counts = rng.derive(1, b).generator.multinomial(reps, table.probs)
        keep = counts > 0
        resampled = PmfTable(table.points[keep], counts[keep] / reps, d)
        boot[b] = tv_tables(resampled, resampled.shift(offset))
    spread = float(boot.std(ddof=1)) if n_bootstrap > 1 else 0.0
    return TvEstimate(value=min(1.0, value), mc_std_error=spread, tail_bound=0.0)


def corollary_rate(
    d: int, m: float, dbar2: float, gamma: float, eps_w: float
) -> BoundBreakdown:
    """d^3 log(m) (m^-1/2 + eps_w)(d + 3 gamma D-bar-squared), split by term."""
    if m < 2:
        raise DomainError(f"m must be at least 2 for log m > 0, got {m}")
    if not 0 <= eps_w <= 1:
        raise DomainError(f"eps_w must lie in [0, 1], got {eps_w}")
    factor = d**3 * math.log(m) * (d + 3.0 * gamma * dbar2)
    eps_w_term = factor * eps_w
    msqrt_term = factor / math.sqrt(m)
    return BoundBreakdown(
        eps_w_term=eps_w_term,
        msqrt_term=msqrt_term,
        combined=factor * (1.0 / math.sqrt(m) + eps_w),
        d=d,
        m=m,
        dbar2=dbar2,
        gamma=gamma,
        eps_w=eps_w,
    )


def corollary_bound(
    ctx: SteinContext, stats: NeighborhoodStats, eps_w: float
) -> BoundBreakdown:
    """Rate expression of the dependency-graph bound for a normalized W."""
    return corollary_rate(ctx.dimension, ctx.m, stats.dbar2, ctx.gamma, eps_w)


def theorem_bound(
    ctx: SteinContext, sums: MomentSums, eps_w: float, chi: float = 0.0
) -> float:
    """General bracket d^3 log m {(d + H2) eps + (d + H0 + H2 + m^-1/2 H1) m^-1/2 + chi}."""
    if ctx.m < 2:
        raise DomainError(f"m must be at least 2 for log m > 0, got {ctx.m}")
    d = ctx.dimension
    root = 1.0 / math.sqrt(ctx.m)
    inner = (d + sums.H2) * eps_w + (d + sums.H0 + sums.H2 + root * sums.H1) * root + chi
    return d**3 * math.log(ctx.m) * inner


def greedy_disjoint_family(graph: IntersectionGraph, excluded: Set[int]) -> List[int]:
    """Variables l outside ``excluded`` whose summand sets L_l are pairwise disjoint.

    Scans l in increasing order and keeps l when L_l avoids every kept set.
    """
    used: Set[int] = set()
    family = []
    for variable, users in enumerate(graph.variable_index):
        if variable in excluded:
            continue
        if used.isdisjoint(users):
            family.append(variable)
            used.update(users)
    return family
