"""Service layer for the worked models: samplers, moments and exact oracles."""

import itertools
import logging
import math
from typing import List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree
from scipy.special import comb
from scipy.stats import binom

from .config import (
    COLORING_ENUMERATION_BUDGET,
    DEFAULT_MARKOV_TOL,
    DEFAULT_QUAD_TOL,
    MARKOV_DP_BUDGET,
)
from .dependency import IntersectionGraph, build_intersection_graph, neighborhood_stats
from .errors import AccuracyError, BudgetError, DomainError
from .models import (
    BoundBreakdown,
    ChainMoments,
    ColoringModel,
    ConstantModel,
    DnParams,
    MarkovModel,
    MaxPointsModel,
    ModelSample,
    MomentEstimate,
    RggModel,
    SmoothnessParameters,
    TripleProbabilities,
)
from .numerics import RngStream, integrate_1d, normal_cdf
from .stein_bounds import (
    context_from_moments,
    corollary_bound,
    corollary_rate,
    mineka_smoothness_bound,
)
from .tv_distance import PmfTable

logger = logging.getLogger(__name__)

ENUMERATION_CHUNK = 1 << 16
MAX_SERIES_TERMS = 100_000
PATH_ENUMERATION_LIMIT = 8


def _empirical_moments(samples: np.ndarray) -> MomentEstimate:
    """Sample mean and covariance, with the largest mean standard error as error."""
    samples = np.asarray(samples, dtype=float)
    count = len(samples)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    error = float(np.sqrt(np.max(np.diag(cov)) / count)) if count > 1 else 0.0
    return MomentEstimate(
        mean=samples.mean(axis=0).tolist(),
        cov=cov.tolist(),
        error_estimate=error,
        source="empirical",
    )


class ModelService:
    """Shared sampling helpers; subclasses implement :meth:`sample_many`."""

    reference_slope = -0.5

    @property
    def dimension(self) -> int:
        """Length of W."""
        raise NotImplementedError

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        """Draw `size` independent copies of W as rows."""
        raise NotImplementedError

    def sample(self, rng: RngStream) -> ModelSample:
        """One realization of W."""
        return ModelSample(W=[int(v) for v in self.sample_many(rng, 1)[0]])

    def moments(self) -> Optional[MomentEstimate]:
        """Closed-form or asymptotic moments, when the model has them."""
        return None

    def dn_target(self, samples: Optional[np.ndarray] = None) -> DnParams:
        """DN parameters for W: closed form when available, else fitted to samples."""
        moments = self.moments()
        if moments is None or moments.source == "quadrature":
            if samples is None:
                raise DomainError(
                    f"{type(self).__name__} needs samples to fit DN parameters"
                )
            moments = _empirical_moments(samples)
        return moments.dn_params()

    def exact_pmf(self) -> PmfTable:
        """Exact law of W; models without an oracle raise BudgetError."""
        raise BudgetError(f"{type(self).__name__} has no exact oracle", 0, 0)

    def has_exact_pmf(self) -> bool:
        """Whether :meth:`exact_pmf` fits the enumeration budget."""
        return False

    def bound_breakdown(self) -> Optional[BoundBreakdown]:
        """Itemized Stein bound, or None when the model has no closed form."""
        return None


class ColoringService(ModelService):
    """Independent vertex colouring; W_i counts edges with both ends coloured i.

    With ``thinning_p`` each edge also carries an independent Bernoulli(p)
    mark and only marked edges are counted.
    """

    def __init__(self, model: ColoringModel):
        """Initialize service with a validated colouring model."""
        self.model = model
        self.pi = np.asarray(model.pi, dtype=float)
        self.edges = np.asarray(model.edges, dtype=np.int64).reshape(-1, 2)
        self.p = 1.0 if model.thinning_p is None else float(model.thinning_p)
        self.vertex_degrees = np.bincount(self.edges.ravel(), minlength=model.num_vertices)

    @property
    def dimension(self) -> int:
        """Number of colours."""
        return len(self.pi)

    @property
    def num_edges(self) -> int:
        """Number of edges, one summand each."""
        return len(self.edges)

    @property
    def thinned(self) -> bool:
        """Whether edges are kept with probability p < 1."""
        return self.model.thinning_p is not None

    def edge_degrees(self) -> np.ndarray:
        """D_j = |N_j| = delta_l + delta_l' - 2 for edge j = {l, l'}."""
        return self.vertex_degrees[self.edges].sum(axis=1) - 2

    def mean_degree(self) -> float:
        """D-tilde, the average of the edge degrees."""
        return float(self.edge_degrees().mean())

    def moments(self) -> MomentEstimate:
        """Mean and covariance of W in closed form."""
        n = self.num_edges
        p = self.p
        pi = self.pi
        dt = self.mean_degree()
        pi2 = pi**2
        mean = n * p * pi2
        cov = -n * p * p * (1.0 + dt) * np.outer(pi2, pi2)
        diag = n * (p * pi2 * (1.0 - p * pi2) + dt * p * p * pi**3 * (1.0 - pi))
        np.fill_diagonal(cov, diag)
        return MomentEstimate(mean=mean.tolist(), cov=cov.tolist())

    def m_constants(self) -> Tuple[float, float, float]:
        """(c1, c1', c2) with m = ceil(n (p c1 + p(1-p) c1' + p^2 D-tilde c2))."""
        pi = self.pi
        d = self.dimension
        c1 = float(np.sum(pi**2 * (1.0 - pi**2)) / d)
        c1_prime = float(np.sum(pi**4) / d)
        c2 = float(np.sum(pi**3 * (1.0 - pi)) / d)
        return c1, c1_prime, c2

    def normalization_m(self) -> int:
        """Normalization m, the ceiling of the scaled variance."""
        c1, c1_prime, c2 = self.m_constants()
        p = self.p
        scaled = self.num_edges * (p * c1 + p * (1 - p) * c1_prime + p * p * self.mean_degree() * c2)
        return max(1, math.ceil(scaled - 1e-9))

    def gamma(self) -> float:
        """max(1, max_j d^-3/2 E|X^(j)|^3); summands are 0/1 unit vectors."""
        third = self.p * float(np.sum(self.pi**2))
        return max(1.0, third / self.dimension**1.5)

    def intersection_graph(self) -> IntersectionGraph:
        """Edges as subsets of vertices, plus one mark variable per edge when thinned."""
        vertices = self.model.num_vertices
        subsets: List[List[int]] = [[int(u), int(v)] for u, v in self.edges]
        if self.thinned:
            subsets = [s + [vertices + j] for j, s in enumerate(subsets)]
            return build_intersection_graph(subsets, vertices + self.num_edges)
        return build_intersection_graph(subsets, vertices)

    def summand_means(self) -> np.ndarray:
        """E X^(j), one row per edge."""
        return np.tile(self.p * self.pi**2, (self.num_edges, 1))

    def _draw(self, rng: RngStream, size: int) -> Tuple[np.ndarray, np.ndarray]:
        """Colour of each edge's first end and whether the edge counts."""
        generator = rng.generator
        colours = generator.choice(self.dimension, size=(size, self.model.num_vertices), p=self.pi)
        same = colours[:, self.edges[:, 0]] == colours[:, self.edges[:, 1]]
        if self.thinned:
            same &= generator.random((size, self.num_edges)) < self.p
        return colours[:, self.edges[:, 0]], same

    def sample_summands(self, rng: RngStream) -> np.ndarray:
        """Per-edge indicator vectors X^(j), shape (n, d)."""
        colour, same = self._draw(rng, 1)
        summands = np.zeros((self.num_edges, self.dimension), dtype=np.int64)
        summands[np.arange(self.num_edges), colour[0]] = same[0]
        return summands

    def sample(self, rng: RngStream, with_summands: bool = False) -> ModelSample:
        """One draw of W, optionally with its per-edge summands."""
        summands = self.sample_summands(rng)
        return ModelSample(
            W=summands.sum(axis=0).tolist(),
            summands=summands.tolist() if with_summands else None,
        )

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        colour, same = self._draw(rng, size)
        return np.stack(
            [np.sum(same & (colour == i), axis=1) for i in range(self.dimension)], axis=1
        ).astype(np.int64)

    def has_exact_pmf(self) -> bool:
        """Whether k^n colourings fit the enumeration budget."""
        return self.dimension**self.model.num_vertices <= COLORING_ENUMERATION_BUDGET

    def exact_pmf(self) -> PmfTable:
        """Joint law of W by enumerating every colouring."""
        d = self.dimension
        vertices = self.model.num_vertices
        total = d**vertices
        if total > COLORING_ENUMERATION_BUDGET:
            raise BudgetError(
                f"colouring enumeration of {d}^{vertices} states", total, COLORING_ENUMERATION_BUDGET
            )
        powers = d ** np.arange(vertices, dtype=np.int64)
        table = {}
        for start in range(0, total, ENUMERATION_CHUNK):
            index = np.arange(start, min(total, start + ENUMERATION_CHUNK), dtype=np.int64)
            colours = (index[:, None] // powers) % d
            weights = np.prod(self.pi[colours], axis=1)
            same = colours[:, self.edges[:, 0]] == colours[:, self.edges[:, 1]]
            colour = colours[:, self.edges[:, 0]]
            counts = np.stack([np.sum(same & (colour == i), axis=1) for i in range(d)], axis=1)
            unique, inverse = np.unique(counts, axis=0, return_inverse=True)
            mass = np.bincount(np.asarray(inverse).reshape(-1), weights=weights, minlength=len(unique))
            for point, value in zip(map(tuple, unique), mass):
                table[point] = table.get(point, 0.0) + float(value)

        if self.thinned:
            table = self._thin(table)
        points = np.array(list(table.keys()), dtype=np.int64)
        probs = np.array(list(table.values()))
        keep = probs > 0
        return PmfTable(points[keep], probs[keep], d)

    def _thin(self, table: dict) -> dict:
        """Given W, the marked counts are independent Binomial(W_i, p)."""
        thinned: dict = {}
        for counts, weight in table.items():
            ranges = [np.arange(c + 1) for c in counts]
            grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, len(counts))
            probs = weight * np.prod(binom.pmf(grid, np.asarray(counts), self.p), axis=1)
            for point, value in zip(map(tuple, grid), probs):
                thinned[point] = thinned.get(point, 0.0) + float(value)
        return thinned

    def smoothness_parameters(self, i: int, other: int) -> SmoothnessParameters:
        """Coupling time and failure probability for shifts along colour ``i``."""
        if self.thinned:
            raise DomainError("smoothness parameters are derived for the unthinned model")
        if i == other or not (0 <= i < self.dimension and 0 <= other < self.dimension):
            raise DomainError(f"need two distinct colours, got {i} and {other}")
        delta_star = int(self.vertex_degrees.max())
        s = self.model.num_vertices // (delta_star + 1) - 3
        t = np.arange(1, delta_star + 1)
        h = t * self.pi[i] * (1.0 - self.pi[i] - self.pi[other]) ** (t - 1)
        h_min = float(h.min())
        T = 0.5 * s * min(self.pi[i], self.pi[other]) * h_min if s >= 1 else 0.0
        if T <= 0:
            return SmoothnessParameters(
                colours=(i, other), s=s, h_min=h_min, T=0.0, eta=1.0, eps_w=1.0
            )
        eta = min(1.0, 4.0 * delta_star**2 / (s * h_min))
        return SmoothnessParameters(
            colours=(i, other),
            s=s,
            h_min=h_min,
            T=T,
            eta=eta,
            eps_w=mineka_smoothness_bound(T, eta),
        )

    def smoothness_epsilon(self) -> float:
        """Largest shift-smoothness bound over ordered colour pairs."""
        if self.dimension < 2:
            return 1.0
        return max(
            self.smoothness_parameters(i, k).eps_w
            for i in range(self.dimension)
            for k in range(self.dimension)
            if i != k
        )

    def bound_breakdown(self) -> Optional[BoundBreakdown]:
        moments = self.moments()
        try:
            ctx = context_from_moments(moments.mean, moments.cov, self.gamma())
            if ctx.m < 2:
                return None
            stats = neighborhood_stats(self.intersection_graph(), ctx.m)
            eps_w = 1.0 if self.thinned else self.smoothness_epsilon()
            return corollary_bound(ctx, stats, eps_w)
        except DomainError as e:
            logger.warning("no bound breakdown for colouring model: %s", e)
            return None


def gth_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible row-stochastic matrix by GTH elimination."""
    A = np.array(P, dtype=float)
    size = A.shape[0]
    for k in range(size - 1, 0, -1):
        total = A[k, :k].sum()
        if total <= 0:
            raise DomainError("chain is reducible")
        A[:k, k] /= total
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(size)
    pi[0] = 1.0
    for k in range(1, size):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


class MarkovChainService(ModelService):
    """Occupation counts W_n of states 1..d over times 1..n of a finite chain."""

    def __init__(self, model: MarkovModel):
        """Initialize service with a validated chain."""
        self.model = model
        self.P = model.matrix
        if not model.satisfies_a1:
            logger.warning("chain has a zero diagonal entry; holding condition A1 fails")

    @property
    def dimension(self) -> int:
        """Number of non-reference states."""
        return self.model.dimension

    @property
    def n(self) -> int:
        """Chain length."""
        return self.model.n

    def stationary_distribution(self) -> np.ndarray:
        """Stationary law over all states 0..d."""
        return gth_stationary(self.P)

    def spectral_radius(self) -> float:
        """Second-largest eigenvalue modulus rho of P."""
        moduli = np.sort(np.abs(np.linalg.eigvals(self.P)))[::-1]
        return float(min(moduli[1], 1.0 - 1e-15)) if len(moduli) > 1 else 0.0

    def stationary_and_cov(self, tol: float = DEFAULT_MARKOV_TOL) -> ChainMoments:
        """pi and the asymptotic per-step covariance V of the occupation counts.

        V_ir = pi_i S_ir + pi_r S_ri + delta_ir pi_i - pi_i pi_r with
        S = sum_{k>=1} (P^k - Pi), truncated once max|P^k - Pi| < tol (1 - rho).
        """
        if tol <= 0:
            raise DomainError(f"tol must be positive, got {tol}")
        pi = self.stationary_distribution()
        limit = np.tile(pi, (len(pi), 1))
        rho = self.spectral_radius()
        power = self.P.copy()
        series = np.zeros_like(power)
        constant = 0.0
        k = 0
        while True:
            k += 1
            deviation_matrix = power - limit
            deviation = float(np.max(np.abs(deviation_matrix)))
            series += deviation_matrix
            if rho > 0:
                constant = max(constant, deviation / rho**k)
            if deviation < tol * (1.0 - rho):
                break
            if k >= MAX_SERIES_TERMS:
                raise AccuracyError(
                    f"variance series did not reach tol={tol:g} in {k} terms",
                    estimate=deviation,
                )
            power = power @ self.P
        tail = constant * rho ** (k + 1) / (1.0 - rho) if rho > 0 else 0.0
        logger.debug("variance series truncated after %d terms (rho=%.4g)", k, rho)

        tracked = pi[1:]
        S = series[1:, 1:]
        V = tracked[:, None] * S + (tracked[:, None] * S).T
        V += np.diag(tracked) - np.outer(tracked, tracked)
        return ChainMoments(
            pi=tracked.tolist(),
            V=V.tolist(),
            rho=rho,
            C=constant,
            truncation=k,
            error_estimate=2.0 * float(tracked.max()) * tail,
        )

    def fundamental_series(self) -> np.ndarray:
        """sum_{k>=1} (P^k - Pi) = (I - P + Pi)^-1 - I over all states."""
        pi = self.stationary_distribution()
        size = len(pi)
        limit = np.tile(pi, (size, 1))
        return np.linalg.inv(np.eye(size) - self.P + limit) - np.eye(size)

    def decomposition_window(self, n: Optional[int] = None) -> int:
        """m_n = ceil(log n / log(1 / rho)), at least 1."""
        n = self.n if n is None else n
        rho = self.spectral_radius()
        if rho <= 0 or n <= 1:
            return 1
        return max(1, math.ceil(math.log(n) / math.log(1.0 / rho)))

    def moments(self) -> MomentEstimate:
        """Target (n pi, n V) of the occupation counts."""
        chain = self.stationary_and_cov()
        n = self.n
        return MomentEstimate(
            mean=(n * np.asarray(chain.pi)).tolist(),
            cov=(n * np.asarray(chain.V)).tolist(),
            error_estimate=n * chain.error_estimate,
            source="series",
        )

    def has_exact_pmf(self) -> bool:
        """Whether the (state, counts) table fits the DP budget."""
        d = self.dimension
        return (self.n + 1) ** d * (d + 1) <= MARKOV_DP_BUDGET

    def exact_pmf(self, n: Optional[int] = None, start: Optional[int] = None) -> PmfTable:
        """Law of W_n from ``start`` by dynamic programming over (state, counts)."""
        n = self.n if n is None else int(n)
        start = self.model.start if start is None else int(start)
        d = self.dimension
        required = (n + 1) ** d * (d + 1)
        if required > MARKOV_DP_BUDGET:
            raise BudgetError(f"occupation DP for n={n}, d={d}", required, MARKOV_DP_BUDGET)
        if not 0 <= start <= d:
            raise DomainError(f"start state {start} outside 0..{d}")

        prob = np.zeros((d + 1,) + (n + 1,) * d)
        prob[(start,) + (0,) * d] = 1.0
        for _ in range(n):
            step = np.zeros_like(prob)
            for state in range(d + 1):
                inflow = np.tensordot(self.P[:, state], prob, axes=(0, 0))
                if state == 0:
                    step[0] = inflow
                    continue
                target = [slice(None)] * d
                source = [slice(None)] * d
                target[state - 1] = slice(1, None)
                source[state - 1] = slice(None, -1)
                step[state][tuple(target)] = inflow[tuple(source)]
            prob = step
        pmf = prob.sum(axis=0)
        points = np.argwhere(pmf > 0)
        return PmfTable(points, pmf[tuple(points.T)], d)

    def path_enumeration_pmf(self, n: int, start: Optional[int] = None) -> PmfTable:
        """Law of W_n by summing over every path; n <= 8."""
        if n > PATH_ENUMERATION_LIMIT:
            raise BudgetError("path enumeration", n, PATH_ENUMERATION_LIMIT)
        start = self.model.start if start is None else start
        d = self.dimension
        table: dict = {}
        for path in itertools.product(range(d + 1), repeat=n):
            weight = 1.0
            previous = start
            for state in path:
                weight *= self.P[previous, state]
                previous = state
            if weight == 0:
                continue
            counts = tuple(sum(1 for s in path if s == i) for i in range(1, d + 1))
            table[counts] = table.get(counts, 0.0) + weight
        return PmfTable.from_mapping(table)

    def sample_states(self, rng: RngStream, size: int, n: Optional[int] = None) -> np.ndarray:
        """States at times 1..n of ``size`` independent runs, shape (size, n)."""
        n = self.n if n is None else n
        cumulative = np.cumsum(self.P, axis=1)
        cumulative[:, -1] = 1.0
        states = np.full(size, self.model.start, dtype=np.int64)
        path = np.empty((size, n), dtype=np.int64)
        for t in range(n):
            u = rng.uniform(size)
            states = np.sum(u[:, None] >= cumulative[states], axis=1)
            path[:, t] = states
        return path

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        """Visit counts of states 1..d over `size` sampled paths."""
        path = self.sample_states(rng, size)
        return np.stack(
            [np.sum(path == i, axis=1) for i in range(1, self.dimension + 1)], axis=1
        ).astype(np.int64)

    def sample_summands(self, rng: RngStream) -> np.ndarray:
        """Indicator vectors X^(j) of Z_j in states 1..d, shape (n, d)."""
        path = self.sample_states(rng, 1)[0]
        return (path[:, None] == np.arange(1, self.dimension + 1)).astype(np.int64)

    def sample(self, rng: RngStream, with_summands: bool = False) -> ModelSample:
        """One draw of W, optionally with its per-step indicators."""
        summands = self.sample_summands(rng)
        return ModelSample(
            W=summands.sum(axis=0).tolist(),
            summands=summands.tolist() if with_summands else None,
        )

    def summand_means(self) -> np.ndarray:
        """E X^(j) = P^j[start, 1:] for j = 1..n."""
        rows = np.empty((self.n, self.dimension))
        row = self.P[self.model.start].copy()
        for j in range(self.n):
            rows[j] = row[1:]
            row = row @ self.P
        return rows

    def intersection_graph(self) -> IntersectionGraph:
        """Times within the decomposition window of each other are neighbours."""
        window = self.decomposition_window()
        subsets = [range(j, j + window + 1) for j in range(self.n)]
        return build_intersection_graph(subsets, self.n + window)

    def bound_breakdown(self) -> Optional[BoundBreakdown]:
        """Rate expression with the window-graph degrees and eps_w of order m^-1/2."""
        moments = self.moments()
        try:
            ctx = context_from_moments(moments.mean, moments.cov)
        except DomainError as e:
            logger.warning("no bound breakdown for Markov model: %s", e)
            return None
        if ctx.m < 2:
            return None
        window = self.decomposition_window()
        degrees = [
            min(j, window) + min(self.n - 1 - j, window) for j in range(self.n)
        ]
        dbar2 = sum((degree + 1) ** 2 for degree in degrees) / ctx.m
        return corollary_rate(ctx.dimension, ctx.m, dbar2, ctx.gamma, ctx.m**-0.5)


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x)


def _phi_mass(a: float, b: float) -> float:
    """Integral of phi over [a, b]."""
    return math.sqrt(2.0 * math.pi) * float(normal_cdf(b) - normal_cdf(a))


def strip_moments(
    strips: List[Tuple[float, float]], tol: float = DEFAULT_QUAD_TOL
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Asymptotic constants (m-hat, sigma) of maximal-point strip counts.

    Mean and covariance of the counts behave like m-hat sqrt(lambda) and
    sigma sqrt(lambda). Returns the accumulated quadrature error as well.
    Degenerate strips with b == d are allowed and give zeros.
    """
    count = len(strips)
    error = 0.0

    def quad(f, a, b) -> float:
        nonlocal error
        result = integrate_1d(f, a, b, tol=tol)
        error += result.error_estimate
        return result.value

    def nested(outer_weight, inner, a: float, b: float) -> float:
        """Integral over [a, b] of outer_weight(z) * inner(z) with quadrature inside."""
        worst = [0.0]

        def integrand(z: float) -> float:
            result = inner(z)
            worst[0] = max(worst[0], result.error_estimate)
            return outer_weight(z) * result.value

        value = quad(integrand, a, b)
        nonlocal error
        error += (b - a) * worst[0]
        return value

    m_hat = np.array([quad(_phi, b, d) for b, d in strips])
    sigma = np.zeros((count, count))
    for i, (b, d) in enumerate(strips):
        inverse_head = quad(lambda x: 1.0 / _phi(x), 0.0, b)
        triple = nested(
            _phi,
            lambda z, b=b, d=d: integrate_1d(
                lambda y: _phi_mass(y, d) / _phi(y), b, z, tol=tol
            ),
            b,
            d,
        )
        sigma[i, i] = (
            m_hat[i]
            + 2.0 * m_hat[i] ** 2 * inverse_head
            + 2.0 * triple
            - 2.0 * m_hat[i] * (_phi(b) - _phi(d))
        )
    for i, k in itertools.combinations(range(count), 2):
        b_i, d_i = strips[i]
        b_k, d_k = strips[k]
        inner = nested(
            _phi,
            lambda z: integrate_1d(lambda y: 1.0 / _phi(y), 0.0, z, tol=tol),
            b_i,
            d_i,
        )
        sigma[i, k] = sigma[k, i] = 2.0 * m_hat[k] * inner - (
            m_hat[i] * (_phi(b_k) - _phi(d_k)) + m_hat[k] * (_phi(b_i) - _phi(d_i))
        )
    return m_hat, sigma, error


def maximal_points(points: np.ndarray) -> np.ndarray:
    """Points not dominated coordinatewise by any other point, by a descending-x sweep."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        return points
    order = np.lexsort((-points[:, 1], -points[:, 0]))
    ys = points[order, 1]
    running = np.maximum.accumulate(ys)
    previous = np.concatenate([[-np.inf], running[:-1]])
    return points[order[ys > previous]]


def maximal_points_bruteforce(points: np.ndarray) -> np.ndarray:
    """Quadratic-time maximal points, for checking :func:`maximal_points`."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    dominates = (points[None, :, 0] >= points[:, None, 0]) & (
        points[None, :, 1] >= points[:, None, 1]
    )
    np.fill_diagonal(dominates, False)
    return points[~dominates.any(axis=1)]


class MaximalPointsService(ModelService):
    """Maximal points of a Poisson process on the unit triangle, counted in strips."""

    reference_slope = -0.25

    def __init__(self, model: MaxPointsModel):
        """Initialize service with a validated intensity and strip list."""
        self.model = model
        self.lam = float(model.lam)
        self.root = math.sqrt(self.lam)
        self.strips = np.asarray(model.strips, dtype=float).reshape(-1, 2)

    @property
    def dimension(self) -> int:
        """Number of strips."""
        return len(self.strips)

    def sample_points(self, rng: RngStream, band_only: bool = True) -> np.ndarray:
        """Poisson points on the triangle, or on its band near the hypotenuse.

        The band holds every point with sqrt(lambda)(1 - a1 - a2) <= max d_i;
        a point there can only be dominated by points of the same band.
        """
        generator = rng.generator
        if not band_only:
            count = generator.poisson(self.lam / 2.0)
            xy = generator.random((count, 2))
            fold = xy.sum(axis=1) > 1.0
            xy[fold] = 1.0 - xy[fold]
            return xy
        u0 = max(0.0, 1.0 - float(self.strips[:, 1].max()) / self.root)
        count = generator.poisson(self.lam * (1.0 - u0 * u0) / 2.0)
        total = np.sqrt(u0 * u0 + generator.random(count) * (1.0 - u0 * u0))
        first = total * generator.random(count)
        return np.column_stack([first, total - first])

    def strip_counts(self, maxima: np.ndarray) -> np.ndarray:
        """Y_i = number of points with b_i < sqrt(lambda)(1 - a1 - a2) <= d_i."""
        scaled = self.root * (1.0 - maxima[:, 0] - maxima[:, 1]) if len(maxima) else np.zeros(0)
        return np.array(
            [np.sum((scaled > b) & (scaled <= d)) for b, d in self.strips], dtype=np.int64
        )

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        """Maximal-point counts per strip over `size` Poisson draws."""
        counts = np.empty((size, self.dimension), dtype=np.int64)
        for r in range(size):
            counts[r] = self.strip_counts(maximal_points(self.sample_points(rng)))
        return counts

    def moments(self) -> MomentEstimate:
        """Large-lambda mean m-hat sqrt(lambda) and covariance sigma sqrt(lambda)."""
        m_hat, sigma, error = strip_moments([tuple(s) for s in self.strips])
        return MomentEstimate(
            mean=(m_hat * self.root).tolist(),
            cov=(sigma * self.root).tolist(),
            error_estimate=error * self.root,
            source="quadrature",
        )

    def finite_mean(self) -> np.ndarray:
        """Exact E Y_i at this lambda by nested quadrature."""
        means = []
        for b, d in self.strips:
            upper = 1.0 - b / self.root
            if upper <= 0:
                means.append(0.0)
                continue
            result = integrate_1d(
                lambda y, b=b, d=d: _phi_mass(b, min(d, self.root * (1.0 - y))), 0.0, upper
            )
            means.append(self.root * result.value)
        return np.array(means)


def torus_distance(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Euclidean distance with each coordinate difference wrapped on [0, side)."""
    delta = np.abs(np.asarray(a) - np.asarray(b)) % side
    delta = np.minimum(delta, side - delta)
    return np.sqrt(np.sum(delta**2, axis=-1))


def rgg_pair_probs_mc(r: float, n: float, reps: int, rng: RngStream) -> TripleProbabilities:
    """Estimate n^4 P[three uniform torus points induce a triangle / a 2-star].

    The first point sits at the origin. When n > 5 r the other two are drawn
    from the square [-2r, 2r]^2, outside of which neither subgraph can form.
    """
    if reps < 2:
        raise DomainError(f"need at least two replicates, got {reps}")
    generator = rng.generator
    if n > 5.0 * r:
        others = generator.uniform(-2.0 * r, 2.0 * r, size=(reps, 2, 2))
        d01 = np.linalg.norm(others[:, 0], axis=1)
        d02 = np.linalg.norm(others[:, 1], axis=1)
        d12 = np.linalg.norm(others[:, 0] - others[:, 1], axis=1)
        scale = 256.0 * r**4
    else:
        others = generator.uniform(0.0, n, size=(reps, 2, 2))
        origin = np.zeros(2)
        d01 = torus_distance(others[:, 0], origin, n)
        d02 = torus_distance(others[:, 1], origin, n)
        d12 = torus_distance(others[:, 0], others[:, 1], n)
        scale = float(n) ** 4
    close = (d01 <= r).astype(int) + (d02 <= r) + (d12 <= r)
    triangle = (close == 3).astype(float)
    star = (close == 2).astype(float)
    root = math.sqrt(reps)
    return TripleProbabilities(
        p1=scale * triangle.mean(),
        p2=scale * star.mean(),
        p1_std_error=scale * triangle.std(ddof=1) / root,
        p2_std_error=scale * star.std(ddof=1) / root,
        reps=reps,
    )


class GeometricGraphService(ModelService):
    """Triangle and induced 2-star counts of a random geometric graph on the torus."""

    reference_slope = -1.0

    def __init__(self, model: RggModel):
        """Initialize service with a validated torus side and radius."""
        self.model = model
        self.side = float(model.n)
        self.r = float(model.r)

    @property
    def dimension(self) -> int:
        """Edges and triangles."""
        return 2

    def sample_points(self, rng: RngStream) -> np.ndarray:
        """Uniform points on the torus."""
        points = rng.generator.uniform(0.0, self.side, size=(self.model.num_points, 2))
        return np.mod(points, self.side)

    def graph(self, points: np.ndarray) -> nx.Graph:
        """Points joined when their torus distance is at most r."""
        tree = cKDTree(np.mod(points, self.side), boxsize=self.side)
        pairs = tree.query_pairs(self.r, output_type="ndarray")
        graph = nx.Graph()
        graph.add_nodes_from(range(len(points)))
        graph.add_edges_from(map(tuple, pairs))
        return graph

    def counts(self, points: np.ndarray) -> np.ndarray:
        """(triangles, induced 2-stars) of the geometric graph on ``points``."""
        graph = self.graph(points)
        triangles = sum(nx.triangles(graph).values()) // 3
        paths = sum(degree * (degree - 1) // 2 for _, degree in graph.degree())
        return np.array([triangles, paths - 3 * triangles], dtype=np.int64)

    def counts_bruteforce(self, points: np.ndarray) -> np.ndarray:
        """Classify every 3-subset by its number of close pairs."""
        points = np.asarray(points, dtype=float)
        distances = torus_distance(points[:, None, :], points[None, :, :], self.side)
        close = distances <= self.r
        result = np.zeros(2, dtype=np.int64)
        for i, j, k in itertools.combinations(range(len(points)), 3):
            links = int(close[i, j]) + int(close[i, k]) + int(close[j, k])
            if links == 3:
                result[0] += 1
            elif links == 2:
                result[1] += 1
        return result

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        """Edge and triangle counts over `size` point sets."""
        return np.stack([self.counts(self.sample_points(rng)) for _ in range(size)])

    def triple_probabilities(self, reps: int, rng: RngStream) -> TripleProbabilities:
        """Monte-Carlo pair probabilities at this radius."""
        return rgg_pair_probs_mc(self.r, self.side, reps, rng)

    def expected_counts(self, probabilities: TripleProbabilities) -> np.ndarray:
        """binom(M, 3) n^-4 (p1, p2)."""
        triples = float(comb(self.model.num_points, 3, exact=True))
        return triples * np.array([probabilities.p1, probabilities.p2]) / self.side**4


class ConstantService(ModelService):
    """Degenerate W fixed at one vector; the DN target never approaches it."""

    reference_slope = 0.0

    def __init__(self, model: ConstantModel):
        """Initialize with the fixed value and its nominal variance."""
        self.model = model
        self.value = np.asarray(model.value, dtype=np.int64)

    @property
    def dimension(self) -> int:
        """Length of the constant vector."""
        return len(self.value)

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        """Repeat the constant `size` times."""
        return np.tile(self.value, (size, 1))

    def moments(self) -> MomentEstimate:
        """The constant as mean with the nominal covariance."""
        return MomentEstimate(
            mean=self.value.astype(float).tolist(),
            cov=(self.model.variance * np.eye(self.dimension)).tolist(),
        )

    def has_exact_pmf(self) -> bool:
        """Always true."""
        return True

    def exact_pmf(self) -> PmfTable:
        """Point mass at the constant."""
        return PmfTable.point_mass(self.value.tolist())


AnyModel = Union[ColoringModel, RggModel, MarkovModel, MaxPointsModel, ConstantModel]


def create_service(model: AnyModel) -> ModelService:
    """Service for a validated model configuration."""
    if isinstance(model, ColoringModel):
        return ColoringService(model)
    if isinstance(model, RggModel):
        return GeometricGraphService(model)
    if isinstance(model, MarkovModel):
        return MarkovChainService(model)
    if isinstance(model, MaxPointsModel):
        return MaximalPointsService(model)
    if isinstance(model, ConstantModel):
        return ConstantService(model)
    raise DomainError(f"Unknown model type '{type(model).__name__}'")
