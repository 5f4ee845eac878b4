"""Shared numerical primitives: normal CDF, 1-D quadrature, random streams."""

import logging
import math
import warnings
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr

from .config import (
    DEFAULT_QUAD_REL_TOL,
    DEFAULT_QUAD_TOL,
    GK21_POINTS,
    MASK64,
    MAX_QUAD_EVALUATIONS,
)
from .errors import AccuracyError, DomainError
from .models import QuadratureResult

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def std_normal_cdf(x: float) -> float:
    """Standard normal distribution function Phi(x)."""
    if not math.isfinite(x):
        raise DomainError(f"std_normal_cdf needs a finite argument, got {x}")
    return float(ndtr(x))


def normal_cdf(x: ArrayLike) -> ArrayLike:
    """Vectorized Phi; infinite arguments map to 0 or 1."""
    return ndtr(x)


def integrate_1d(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = DEFAULT_QUAD_TOL,
    rel_tol: float = DEFAULT_QUAD_REL_TOL,
    max_evaluations: int = MAX_QUAD_EVALUATIONS,
) -> QuadratureResult:
    """Integrate f over [a, b] by adaptive Gauss-Kronrod subdivision.

    The subdivision budget is derived from ``max_evaluations``. Any failure
    reported by the integrator (exhausted budget, roundoff, bad integrand
    behaviour, divergence) or an error estimate above
    ``max(tol, rel_tol * |value|)`` raises :class:`AccuracyError` carrying
    the best estimate.
    """
    if not a <= b:
        raise DomainError(f"integrate_1d needs a <= b, got a={a}, b={b}")
    if tol <= 0:
        raise DomainError(f"integrate_1d needs tol > 0, got {tol}")
    if a == b:
        return QuadratureResult(value=0.0, error_estimate=0.0, evaluations=0)

    limit = max(1, max_evaluations // GK21_POINTS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        output = quad(
            f, a, b, epsabs=tol, epsrel=rel_tol, limit=limit, full_output=1
        )

    value, error, info = output[0], abs(output[1]), output[2]
    evaluations = int(info.get("neval", 0))
    # quad only appends a message when ier != 0
    message = str(output[3]).strip() if len(output) > 3 else ""

    logger.debug(
        "integrate_1d [%g, %g]: value=%.16g err=%.3g neval=%d",
        a,
        b,
        value,
        error,
        evaluations,
    )
    if message or evaluations > max_evaluations:
        reason = message.splitlines()[0] if message else "evaluation budget exhausted"
        raise AccuracyError(
            f"integrate_1d did not converge on [{a}, {b}] within "
            f"{max_evaluations} evaluations: {reason}",
            estimate=float(value),
            error_estimate=float(error),
        )
    if not math.isfinite(value) or error > max(tol, rel_tol * abs(value)):
        raise AccuracyError(
            f"integrate_1d on [{a}, {b}] has error estimate {error:.3g} above "
            f"tol={tol:g}",
            estimate=float(value),
            error_estimate=float(error),
        )
    return QuadratureResult(
        value=float(value), error_estimate=float(error), evaluations=evaluations
    )


class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Child streams from :meth:`derive` extend the spawn key, so replicate
    ``i`` of a Monte-Carlo loop draws the same numbers however the loop is
    split across workers.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        """Initialize the underlying PCG64DXSM generator."""
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.path = tuple(int(key) & MASK64 for key in path)
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *self.path)
        )
        self.generator = np.random.Generator(np.random.PCG64DXSM(sequence))

    def derive(self, *keys: int) -> "RngStream":
        """Return an independent child stream addressed by ``keys``."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(keys))

    def uniform(self, size: Optional[Union[int, Tuple[int, ...]]] = None) -> ArrayLike:
        """Uniform draws on [0, 1)."""
        return self.generator.random(size)

    def normal(self, size: Optional[Union[int, Tuple[int, ...]]] = None) -> ArrayLike:
        """Standard normal draws."""
        return self.generator.standard_normal(size)

    def __repr__(self) -> str:
        return f"<RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})>"


def make_rng(seed: int, stream_id: int = 0) -> RngStream:
    """Create the stream for ``(seed, stream_id)``."""
    return RngStream(seed, stream_id)
