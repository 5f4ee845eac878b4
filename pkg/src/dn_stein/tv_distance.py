"""Total variation distance between lattice distributions."""

import logging
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .config import (
    DEFAULT_BOOTSTRAP,
    DEFAULT_EPSILON_TAIL,
    DEFAULT_SEED,
    DEFAULT_TABLE_TOL,
    MIN_EMPIRICAL_SAMPLES,
)
from .errors import DomainError
from .lattice_gaussian import dn_pmf_table, lattice_ball
from .models import DnParams, TvEstimate
from .numerics import RngStream, make_rng

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12


def _union(*point_sets: np.ndarray) -> Tuple[np.ndarray, Sequence[np.ndarray]]:
    """Sorted union of integer point sets and each set's positions in it."""
    stacked = np.concatenate(point_sets, axis=0)
    union, inverse = np.unique(stacked, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    bounds = np.cumsum([0] + [len(points) for points in point_sets])
    return union, [inverse[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


class PmfTable:
    """Probabilities on integer vectors, with the missing mass recorded as tail.

    Points are stored as a sorted (K, d) int64 array with unique rows.
    """

    def __init__(self, points: np.ndarray, probs: np.ndarray, dimension: Optional[int] = None):
        """Build a table, merging repeated points."""
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if dimension is None:
            points = np.atleast_2d(np.asarray(points, dtype=np.int64))
            dimension = points.shape[1]
        points = np.asarray(points, dtype=np.int64).reshape(-1, dimension)
        if len(points) != len(probs):
            raise DomainError(f"{len(points)} points but {len(probs)} probabilities")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must be finite and non-negative")
        unique, inverse = np.unique(points, axis=0, return_inverse=True)
        merged = np.bincount(np.asarray(inverse).reshape(-1), weights=probs, minlength=len(unique))
        total = float(merged.sum())
        if total > 1.0 + MASS_TOL:
            raise DomainError(f"total mass {total!r} exceeds 1")
        self.points = unique.reshape(-1, dimension)
        self.probs = merged
        self.dimension = dimension

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "PmfTable":
        """Empirical table of a (N, d) sample array."""
        samples = np.asarray(samples, dtype=np.int64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if len(samples) == 0:
            raise DomainError("no samples")
        points, counts = np.unique(samples, axis=0, return_counts=True)
        return cls(points, counts / len(samples))

    @classmethod
    def from_mapping(cls, entries: Dict[Tuple[int, ...], float]) -> "PmfTable":
        """Table from a {point: probability} mapping."""
        if not entries:
            raise DomainError("empty table")
        points = np.array(list(entries.keys()), dtype=np.int64)
        return cls(points, np.array(list(entries.values()), dtype=float))

    @classmethod
    def point_mass(cls, z: Sequence[int]) -> "PmfTable":
        """Table with all mass at z."""
        return cls(np.array([z], dtype=np.int64), np.array([1.0]))

    def __len__(self) -> int:
        return len(self.probs)

    def __repr__(self) -> str:
        return f"<PmfTable(d={self.dimension}, size={len(self)}, tail={self.tail_mass:.3g})>"

    @property
    def total_mass(self) -> float:
        """Sum of the stored probabilities."""
        return float(self.probs.sum())

    @property
    def tail_mass(self) -> float:
        """Mass missing from the table."""
        return max(0.0, 1.0 - self.total_mass)

    def prob(self, z: Sequence[int]) -> float:
        """Probability of a single integer vector."""
        hits = np.all(self.points == np.asarray(z, dtype=np.int64), axis=1)
        return float(self.probs[hits].sum())

    def items(self) -> Iterable[Tuple[Tuple[int, ...], float]]:
        """(point, probability) pairs."""
        for point, p in zip(self.points, self.probs):
            yield tuple(int(v) for v in point), float(p)

    def to_dict(self) -> Dict[Tuple[int, ...], float]:
        return dict(self.items())

    def mean(self) -> np.ndarray:
        """Mean of the recorded mass, normalised by the total."""
        return (self.probs @ self.points) / self.total_mass

    def covariance(self) -> np.ndarray:
        """Covariance matrix of the table."""
        centred = self.points - self.mean()
        return (centred * self.probs[:, None]).T @ centred / self.total_mass

    def marginal(self, indices: Sequence[int]) -> "PmfTable":
        """Law of the selected coordinates."""
        index = np.asarray(indices, dtype=int)
        if index.size == 0 or np.any(index < 0) or np.any(index >= self.dimension):
            raise DomainError(f"bad coordinate indices {list(indices)}")
        return PmfTable(self.points[:, index], self.probs, dimension=len(index))

    def shift(self, offset: Sequence[int]) -> "PmfTable":
        """Law of X + offset."""
        return PmfTable(
            self.points + np.asarray(offset, dtype=np.int64), self.probs, self.dimension
        )


def _check_dimensions(p: PmfTable, q: PmfTable) -> None:
    if p.dimension != q.dimension:
        raise DomainError(f"dimension mismatch: {p.dimension} vs {q.dimension}")


def tv_tables(p: PmfTable, q: PmfTable) -> float:
    """Half the l1 distance over the union of both supports."""
    _check_dimensions(p, q)
    union, (ip, iq) = _union(p.points, q.points)
    diff = np.zeros(len(union))
    np.add.at(diff, ip, p.probs)
    np.subtract.at(diff, iq, q.probs)
    return float(0.5 * np.abs(diff).sum())


def tv_tables_upper(p: PmfTable, q: PmfTable) -> float:
    """tv_tables plus half of both recorded tail masses."""
    return min(1.0, tv_tables(p, q) + 0.5 * (p.tail_mass + q.tail_mass))


def dn_table(
    params: DnParams,
    epsilon_tail: float = DEFAULT_EPSILON_TAIL,
    tol: float = DEFAULT_TABLE_TOL,
    rng: Optional[RngStream] = None,
) -> PmfTable:
    """DN_d(mu, V) on the integer points of its epsilon support ball."""
    points = lattice_ball(params, epsilon_tail)
    masses, _ = dn_pmf_table(params, points, tol, rng)
    return PmfTable(points, masses)


def _dn_on_union(
    params: DnParams,
    support: np.ndarray,
    epsilon_tail: float,
    tol: float,
    rng: Optional[RngStream],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """DN masses on the union of ``support`` and the epsilon ball."""
    ball = lattice_ball(params, epsilon_tail)
    union, (index, _) = _union(support, ball)
    masses, std_errors = dn_pmf_table(params, union, tol, rng)
    return union, index, masses, std_errors


def tv_empirical_vs_dn(
    samples: np.ndarray,
    params: DnParams,
    epsilon_tail: float = DEFAULT_EPSILON_TAIL,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    rng: Optional[RngStream] = None,
    tol: float = DEFAULT_TABLE_TOL,
) -> TvEstimate:
    """Plug-in TV between the empirical law of ``samples`` and DN_d(mu, V).

    The standard error comes from a multinomial bootstrap of the counts;
    resample ``b`` draws from ``rng.derive(b)``.
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if len(samples) < MIN_EMPIRICAL_SAMPLES:
        raise DomainError(
            f"need at least {MIN_EMPIRICAL_SAMPLES} samples, got {len(samples)}"
        )
    if samples.shape[1] != params.dimension:
        raise DomainError(
            f"samples have dimension {samples.shape[1]}, params have {params.dimension}"
        )
    if not 0 < epsilon_tail < 1:
        raise DomainError(f"epsilon_tail must lie in (0, 1), got {epsilon_tail}")
    rng = rng if rng is not None else make_rng(DEFAULT_SEED)

    empirical = PmfTable.from_samples(samples)
    _, index, q, std_errors = _dn_on_union(
        params, empirical.points, epsilon_tail, tol, rng.derive(0)
    )
    q_support = q[index]
    q_outside = float(q.sum() - q_support.sum())
    value = 0.5 * (np.abs(empirical.probs - q_support).sum() + q_outside)

    boot = np.empty(n_bootstrap)
    count = len(samples)
    for b in range(n_bootstrap):
        generator = rng.derive(1, b).generator
        resampled = generator.multinomial(count, empirical.probs) / count
        boot[b] = 0.5 * (np.abs(resampled - q_support).sum() + q_outside)
    spread = float(boot.std(ddof=1)) if n_bootstrap > 1 else 0.0
    logger.debug(
        "tv_empirical_vs_dn: n=%d support=%d bootstrap=%d value=%.6g se=%.3g",
        count,
        len(empirical),
        n_bootstrap,
        value,
        spread,
    )
    return TvEstimate(
        value=float(min(1.0, value)),
        mc_std_error=spread + 0.5 * float(std_errors.sum()),
        tail_bound=epsilon_tail,
    )


def tv_exact_vs_dn(
    p: PmfTable,
    params: DnParams,
    epsilon_tail: float = DEFAULT_EPSILON_TAIL,
    rng: Optional[RngStream] = None,
    tol: float = DEFAULT_TABLE_TOL,
) -> TvEstimate:
    """TV between an exact table and DN_d(mu, V).

    The table must be complete up to rounding (missing mass at most
    ``MASS_TOL``); that residue is added to the tail bound. The error term
    is the summed QMC error of the DN cells, zero for d <= 2.
    """
    if p.dimension != params.dimension:
        raise DomainError(
            f"table has dimension {p.dimension}, params have {params.dimension}"
        )
    if not 0 < epsilon_tail < 1:
        raise DomainError(f"epsilon_tail must lie in (0, 1), got {epsilon_tail}")
    if p.tail_mass > MASS_TOL:
        raise DomainError(f"table is not exact: missing mass {p.tail_mass:.3g}")

    _, index, q, std_errors = _dn_on_union(params, p.points, epsilon_tail, tol, rng)
    q_support = q[index]
    q_outside = float(q.sum() - q_support.sum())
    value = 0.5 * (np.abs(p.probs - q_support).sum() + q_outside)
    return TvEstimate(
        value=float(min(1.0, value)),
        mc_std_error=0.5 * float(std_errors.sum()),
        tail_bound=epsilon_tail + p.tail_mass,
    )
