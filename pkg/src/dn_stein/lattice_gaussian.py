"""The discrete normal DN_d(mu, V): box masses, pmf, sampling and support truncation.

DN_d(mu, V) gives each integer vector ``z`` the N_d(mu, V) probability of the
cell [z - 1/2, z + 1/2). Box masses are computed in closed form for d = 1,
from Owen's T function for d = 2 and by randomized quasi-Monte-Carlo over
the separation-of-variables integrand for d >= 3.
"""

import logging
import math
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr, ndtri, owens_t
from scipy.stats import chi2, qmc

from .config import (
    BOUND_CLIP,
    DEFAULT_BOX_TOL,
    DEFAULT_SEED,
    DEFAULT_TABLE_TOL,
    QMC_CELL_CHUNK,
    QMC_INITIAL_POINTS,
    QMC_MAX_POINTS,
    QMC_RANDOMIZATIONS,
)
from .errors import AccuracyError, DomainError
from .models import DnParams, LatticeBox
from .numerics import RngStream, make_rng

logger = logging.getLogger(__name__)

BoxMethod = Literal["auto", "qmc"]


def _interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Phi(b) - Phi(a), evaluated on the side of the tail that keeps precision."""
    upper_side = a > 0
    return np.where(upper_side, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def _owen_term(h: np.ndarray, other: np.ndarray, r: float, s: float) -> np.ndarray:
    """T(h, (other - r h) / (h s)), with h = 0 read as the limit from above."""
    numerator = other - r * h
    at_zero = h == 0
    safe_h = np.where(at_zero, 1.0, h)
    return np.where(
        at_zero, 0.25 * np.sign(numerator), owens_t(h, numerator / (safe_h * s))
    )


def _bvn_cdf(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """P[X <= h, Y <= k] for a standard bivariate normal with correlation r.

    Owen's reduction to two T-function values; exact up to rounding and
    free of randomness.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if r == 0.0:
        return ndtr(h) * ndtr(k)
    s = math.sqrt(1.0 - r * r)
    sign_h = np.where(h == 0, 1.0, np.sign(h))
    sign_k = np.where(k == 0, 1.0, np.sign(k))
    beta = np.where(sign_h * sign_k > 0, 0.0, 0.5)
    value = (
        0.5 * (ndtr(h) + ndtr(k))
        - _owen_term(h, k, r, s)
        - _owen_term(k, h, r, s)
        - beta
    )
    origin = 0.25 + math.asin(r) / (2.0 * math.pi)
    value = np.where((h == 0) & (k == 0), origin, value)
    return np.clip(value, 0.0, 1.0)


def _bvn_upper(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """P[X > h, Y > k] for a standard bivariate normal with correlation r."""
    return _bvn_cdf(-np.asarray(h, dtype=float), -np.asarray(k, dtype=float), r)


def _bivariate_box_masses(
    params: DnParams, lower: np.ndarray, upper: np.ndarray
) -> np.ndarray:
    """Rectangle probabilities for d = 2 by inclusion-exclusion of upper orthants."""
    scale = np.sqrt(np.diag(params.cov))
    r = float(params.cov[0, 1] / (scale[0] * scale[1]))
    lo = np.clip((lower - params.mean) / scale, -BOUND_CLIP, BOUND_CLIP)
    hi = np.clip((upper - params.mean) / scale, -BOUND_CLIP, BOUND_CLIP)
    masses = (
        _bvn_upper(lo[:, 0], lo[:, 1], r)
        - _bvn_upper(hi[:, 0], lo[:, 1], r)
        - _bvn_upper(lo[:, 0], hi[:, 1], r)
        + _bvn_upper(hi[:, 0], hi[:, 1], r)
    )
    return np.clip(masses, 0.0, 1.0)


def _sov_integrand(
    cholesky: np.ndarray, lower: np.ndarray, upper: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Separation-of-variables integrand for many boxes at shared QMC points.

    ``lower``/``upper`` are centred bounds of shape (K, d) and ``u`` has shape
    (P, d - 1); returns the (K, P) integrand values.
    """
    num_boxes, d = lower.shape
    num_points = u.shape[0]
    c = ndtr(lower[:, 0] / cholesky[0, 0])[:, None]
    dc = _interval_mass(lower[:, 0] / cholesky[0, 0], upper[:, 0] / cholesky[0, 0])
    dc = dc[:, None]
    value = np.broadcast_to(dc, (num_boxes, num_points)).copy()
    y = np.empty((d - 1, num_boxes, num_points))
    eps = np.finfo(float).eps
    for i in range(1, d):
        arg = np.clip(c + u[None, :, i - 1] * dc, 1e-300, 1.0 - eps)
        y[i - 1] = ndtri(arg)
        s = np.tensordot(cholesky[i, :i], y[:i], axes=1)
        a = (lower[:, i, None] - s) / cholesky[i, i]
        b = (upper[:, i, None] - s) / cholesky[i, i]
        c = ndtr(a)
        dc = _interval_mass(a, b)
        value *= dc
    return value


def _qmc_box_masses(
    params: DnParams,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float,
    rng: RngStream,
) -> Tuple[np.ndarray, np.ndarray]:
    """Randomized QMC box masses with standard errors over the randomizations.

    All boxes share the same scrambled Sobol' point sets, and points are
    doubled until three standard errors fall below ``tol`` for every box.
    """
    d = params.dimension
    order = np.argsort(np.diag(params.cov), kind="stable")
    cov = params.cov[np.ix_(order, order)]
    cholesky = np.linalg.cholesky(cov)
    lo = np.clip(lower[:, order] - params.mean[order], -1e300, 1e300)
    hi = np.clip(upper[:, order] - params.mean[order], -1e300, 1e300)
    num_boxes = lo.shape[0]

    if d == 1:
        masses = _interval_mass(lo[:, 0] / cholesky[0, 0], hi[:, 0] / cholesky[0, 0])
        return masses, np.zeros(num_boxes)

    engines = [
        qmc.Sobol(d - 1, scramble=True, seed=rng.derive(r).generator)
        for r in range(QMC_RANDOMIZATIONS)
    ]
    sums = np.zeros((QMC_RANDOMIZATIONS, num_boxes))
    per_randomization = max(2, QMC_INITIAL_POINTS // QMC_RANDOMIZATIONS)
    limit = max(per_randomization, QMC_MAX_POINTS // QMC_RANDOMIZATIONS)
    drawn = 0
    batch = per_randomization
    while True:
        for r, engine in enumerate(engines):
            u = engine.random(batch)
            for start in range(0, num_boxes, QMC_CELL_CHUNK):
                chunk = slice(start, start + QMC_CELL_CHUNK)
                sums[r, chunk] += _sov_integrand(
                    cholesky, lo[chunk], hi[chunk], u
                ).sum(axis=1)
        drawn += batch
        means = sums / drawn
        estimate = means.mean(axis=0)
        std_error = means.std(axis=0, ddof=1) / math.sqrt(QMC_RANDOMIZATIONS)
        worst = int(np.argmax(std_error)) if num_boxes else 0
        logger.debug(
            "QMC d=%d boxes=%d points=%d max 3*SE=%.3g",
            d,
            num_boxes,
            drawn * QMC_RANDOMIZATIONS,
            3.0 * std_error[worst] if num_boxes else 0.0,
        )
        if num_boxes == 0 or 3.0 * std_error[worst] <= tol:
            return np.clip(estimate, 0.0, 1.0), std_error
        if drawn >= limit:
            raise AccuracyError(
                f"QMC box probability missed tol={tol:g} after "
                f"{drawn * QMC_RANDOMIZATIONS} points (3*SE={3 * std_error[worst]:.3g})",
                estimate=float(estimate[worst]),
                error_estimate=float(3.0 * std_error[worst]),
            )
        batch = drawn


def box_masses(
    params: DnParams,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = DEFAULT_BOX_TOL,
    rng: Optional[RngStream] = None,
    method: BoxMethod = "auto",
) -> Tuple[np.ndarray, np.ndarray]:
    """N_d(mu, V) masses of many boxes and their standard errors.

    ``lower`` and ``upper`` have shape (K, d). Standard errors are zero on
    the deterministic paths (d <= 2 unless ``method="qmc"``).
    """
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    d = params.dimension
    if lower.shape != upper.shape or lower.shape[1] != d:
        raise DomainError(
            f"box bounds of shape {lower.shape}/{upper.shape} do not match d={d}"
        )
    if np.any(lower >= upper):
        raise DomainError("every lower bound must be below its upper bound")

    if method == "auto" and d == 1:
        sd = math.sqrt(params.cov[0, 0])
        masses = _interval_mass(
            (lower[:, 0] - params.mean[0]) / sd, (upper[:, 0] - params.mean[0]) / sd
        )
        return masses, np.zeros(len(masses))
    if method == "auto" and d == 2:
        masses = _bivariate_box_masses(params, lower, upper)
        return masses, np.zeros(len(masses))
    if rng is None:
        rng = make_rng(DEFAULT_SEED)
    return _qmc_box_masses(params, lower, upper, tol, rng)


def box_probability(
    params: DnParams,
    box: LatticeBox,
    tol: float = DEFAULT_BOX_TOL,
    rng: Optional[RngStream] = None,
    method: BoxMethod = "auto",
) -> float:
    """P[X in box] for X ~ N_d(mu, V)."""
    if box.dimension != params.dimension:
        raise DomainError(
            f"box has dimension {box.dimension}, params have {params.dimension}"
        )
    masses, _ = box_masses(
        params, np.array([box.lower]), np.array([box.upper]), tol, rng, method
    )
    return float(masses[0])


def dn_pmf(
    params: DnParams,
    z: Sequence[int],
    tol: float = DEFAULT_BOX_TOL,
    rng: Optional[RngStream] = None,
) -> float:
    """DN_d(mu, V) mass of the integer vector ``z``."""
    return box_probability(params, LatticeBox.unit_cell(z), tol, rng)


def dn_pmf_table(
    params: DnParams,
    points: np.ndarray,
    tol: float = DEFAULT_TABLE_TOL,
    rng: Optional[RngStream] = None,
    method: BoxMethod = "auto",
) -> Tuple[np.ndarray, np.ndarray]:
    """Cell masses and standard errors at many integer points (shape (K, d))."""
    points = np.asarray(points, dtype=float).reshape(-1, params.dimension)
    return box_masses(params, points - 0.5, points + 0.5, tol, rng, method)


def dn_sample(
    params: DnParams, rng: RngStream, size: Optional[int] = None
) -> np.ndarray:
    """Draw from DN_d(mu, V) by rounding N_d(mu, V) draws to their cells.

    Returns an integer vector, or an array of shape (size, d).
    """
    count = 1 if size is None else int(size)
    normals = rng.normal((count, params.dimension))
    x = params.mean + normals @ params.cholesky.T
    z = np.floor(x + 0.5).astype(np.int64)
    return z[0] if size is None else z


def support_radius(params: DnParams, epsilon: float) -> float:
    """Radius r with P[|X - mu| > r] <= epsilon for X ~ N_d(mu, V).

    Uses |X - mu|^2 <= lambda_max * chi2_d, so the bound holds in every
    direction at once.
    """
    if not 0 < epsilon:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if epsilon >= 1:
        return 0.0
    lam_max = float(params.eigenvalues[-1])
    return math.sqrt(lam_max * float(chi2.isf(epsilon, params.dimension)))


def lattice_ball(params: DnParams, epsilon: float) -> np.ndarray:
    """Integer points whose cells meet the ball of radius support_radius(epsilon).

    Points are returned in lexicographic order as an (K, d) int array.
    """
    d = params.dimension
    radius = support_radius(params, epsilon) + math.sqrt(d) / 2.0
    axes = [
        np.arange(math.floor(m - radius), math.ceil(m + radius) + 1)
        for m in params.mean
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    inside = np.sum((grid - params.mean) ** 2, axis=1) <= radius * radius
    return grid[inside].astype(np.int64)


def marginal(params: DnParams, indices: Sequence[int]) -> DnParams:
    """DN parameters of a coordinate projection."""
    if len(indices) == 0 or any(not 0 <= i < params.dimension for i in indices):
        raise DomainError(f"bad coordinate indices {list(indices)}")
    return params.marginal(indices)
