"""Pydantic data models for parameters, estimates, model configs and reports."""

import math
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator

from .config import (
    DEFAULT_BOOTSTRAP,
    DEFAULT_EPSILON_TAIL,
    DEFAULT_SEED,
    PD_RELATIVE_TOL,
    SYMMETRY_TOL,
)


def _as_matrix(rows: Sequence[Sequence[float]], name: str) -> np.ndarray:
    """Convert nested rows to a square float matrix."""
    matrix = np.asarray(rows, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {matrix.shape}")
    return matrix


class QuadratureResult(BaseModel):
    """Value and absolute error estimate of a 1-D integral."""

    value: float
    error_estimate: float = Field(..., ge=0.0, description="Absolute error estimate")
    evaluations: int = Field(0, ge=0, description="Integrand evaluations used")


class DnParams(BaseModel):
    """Mean and covariance of a discrete normal DN_d(mu, V) on the integer lattice."""

    mu: List[float] = Field(..., min_length=1, description="Mean vector")
    sigma: List[List[float]] = Field(..., description="Covariance matrix V")

    _mean: np.ndarray = PrivateAttr()
    _cov: np.ndarray = PrivateAttr()
    _cholesky: np.ndarray = PrivateAttr()
    _eigenvalues: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def check_covariance(self) -> "DnParams":
        cov = _as_matrix(self.sigma, "sigma")
        d = len(self.mu)
        if cov.shape != (d, d):
            raise ValueError(f"sigma has shape {cov.shape}, expected ({d}, {d})")
        if not np.all(np.isfinite(cov)) or not all(math.isfinite(x) for x in self.mu):
            raise ValueError("mu and sigma must be finite")
        scale = float(np.max(np.abs(cov))) if cov.size else 0.0
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * max(scale, 1e-300):
            raise ValueError("sigma is not symmetric")
        eigenvalues = np.linalg.eigvalsh(cov)
        if eigenvalues[0] <= 0 or eigenvalues[0] <= PD_RELATIVE_TOL * eigenvalues[-1]:
            raise ValueError(
                f"sigma is singular or indefinite: eigenvalues "
                f"[{eigenvalues[0]:.3g}, {eigenvalues[-1]:.3g}]; "
                "drop a coordinate instead of regularizing"
            )
        cov = 0.5 * (cov + cov.T)
        self._mean = np.asarray(self.mu, dtype=float)
        self._cov = cov
        self._cholesky = np.linalg.cholesky(cov)
        self._eigenvalues = eigenvalues
        return self

    @classmethod
    def from_arrays(cls, mu: Any, sigma: Any) -> "DnParams":
        """Build parameters from array-likes."""
        mean = np.atleast_1d(np.asarray(mu, dtype=float))
        cov = np.atleast_2d(np.asarray(sigma, dtype=float))
        return cls(mu=mean.tolist(), sigma=cov.tolist())

    @property
    def dimension(self) -> int:
        return len(self.mu)

    @property
    def mean(self) -> np.ndarray:
        return self._mean

    @property
    def cov(self) -> np.ndarray:
        return self._cov

    @property
    def cholesky(self) -> np.ndarray:
        return self._cholesky

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigenvalues

    @property
    def condition_number(self) -> float:
        """Ratio of extreme eigenvalues of the covariance."""
        return float(self._eigenvalues[-1] / self._eigenvalues[0])

    def marginal(self, indices: Sequence[int]) -> "DnParams":
        """Parameters of the sub-vector with the given coordinates."""
        index = np.asarray(indices, dtype=int)
        return DnParams.from_arrays(self._mean[index], self._cov[np.ix_(index, index)])


class LatticeBox(BaseModel):
    """Half-open box [lower, upper) in R^d."""

    lower: List[float] = Field(..., min_length=1)
    upper: List[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_bounds(self) -> "LatticeBox":
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if any(not lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")
        return self

    @classmethod
    def unit_cell(cls, z: Sequence[int]) -> "LatticeBox":
        """The cell [z - 1/2, z + 1/2) around an integer vector."""
        return cls(
            lower=[float(zi) - 0.5 for zi in z], upper=[float(zi) + 0.5 for zi in z]
        )

    @property
    def dimension(self) -> int:
        return len(self.lower)


class TvEstimate(BaseModel):
    """Total variation estimate with Monte-Carlo and tail error terms."""

    value: float = Field(..., ge=0.0, le=1.0)
    mc_std_error: float = Field(0.0, ge=0.0)
    tail_bound: float = Field(0.0, ge=0.0)

    @property
    def upper(self) -> float:
        return min(1.0, self.value + self.mc_std_error + self.tail_bound)

    @property
    def lower(self) -> float:
        return max(0.0, self.value - self.mc_std_error - self.tail_bound)


class NeighborhoodStats(BaseModel):
    """Degrees D_j = |N_j| of an intersection graph and the averaged D-bar-squared."""

    degrees: List[int]
    dbar2: float = Field(..., ge=0.0)
    m_used: int = Field(..., ge=1)


class SteinContext(BaseModel):
    """Normalization (m, c, Sigma) of W and the derived bound inputs."""

    mu: List[float]
    V: List[List[float]]
    m: int = Field(..., ge=1)
    c: List[float]
    Sigma: List[List[float]]
    cond: float = Field(..., ge=1.0, description="Condition number of Sigma")
    gamma: float = Field(..., ge=1.0, description="Third-moment bound")

    @property
    def dimension(self) -> int:
        return len(self.mu)

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    @property
    def covariance(self) -> np.ndarray:
        return np.asarray(self.V, dtype=float)

    @property
    def centre(self) -> np.ndarray:
        """The point m*c around which the operator is centred."""
        return self.m * np.asarray(self.c, dtype=float)

    @property
    def sigma_matrix(self) -> np.ndarray:
        return np.asarray(self.Sigma, dtype=float)

    @property
    def delta_zero(self) -> float:
        """Truncation radius factor rho(Sigma)^(-3/2) / 72."""
        return self.cond ** (-1.5) / 72.0


class BoundBreakdown(BaseModel):
    """Bracketed rate expression for sums over a dependency graph."""

    eps_w_term: float
    msqrt_term: float
    combined: float
    d: int
    m: float
    dbar2: float
    gamma: float
    eps_w: float


class MomentSums(BaseModel):
    """Monte-Carlo estimates of the moment sums H0, H1, H2 and their parts."""

    H0: float
    H1: float
    H2: float
    H21: float
    H22: float
    H23: float
    H24: float
    std_errors: Dict[str, float]
    m: int
    replicates: int
    zhat_violations: List[Tuple[int, int]] = Field(default_factory=list)
    chi: float = Field(0.0, description="Dependence coefficients, zero for these models")


class ModelSample(BaseModel):
    """One realization of W with optional per-summand pieces."""

    W: List[int]
    summands: Optional[List[List[int]]] = None


class MomentEstimate(BaseModel):
    """Mean vector and covariance of a model's W."""

    mean: List[float]
    cov: List[List[float]]
    error_estimate: float = Field(0.0, ge=0.0, description="Absolute error bound")
    source: Literal["closed_form", "series", "quadrature", "empirical"] = "closed_form"

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    @property
    def cov_array(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)

    def dn_params(self) -> "DnParams":
        return DnParams.from_arrays(self.mean, self.cov)


class ChainMoments(BaseModel):
    """Stationary law and per-step covariance of a chain's occupation counts."""

    pi: List[float] = Field(..., description="Stationary probabilities of states 1..d")
    V: List[List[float]]
    rho: float = Field(..., ge=0.0, lt=1.0, description="Second-largest eigenvalue modulus")
    C: float = Field(..., ge=0.0, description="Geometric decay constant")
    truncation: int = Field(..., ge=0, description="Series terms summed")
    error_estimate: float = Field(..., ge=0.0)


class TripleProbabilities(BaseModel):
    """Scaled probabilities n^4 P[three points induce a triangle / a 2-star]."""

    p1: float = Field(..., ge=0.0)
    p2: float = Field(..., ge=0.0)
    p1_std_error: float = Field(..., ge=0.0)
    p2_std_error: float = Field(..., ge=0.0)
    reps: int


class SmoothnessParameters(BaseModel):
    """Coupling time T and failure probability eta for one colour pair."""

    colours: Tuple[int, int]
    s: int
    h_min: float
    T: float
    eta: float
    eps_w: float


# Model configurations

GraphFamily = Literal["cycle", "path", "grid", "random_regular"]


def _family_edges(family: str, size: int, degree: int, seed: int) -> List[Tuple[int, int]]:
    """Edge list of a graph family on ``size`` vertices, relabelled 0..size-1."""
    if family == "cycle":
        graph = nx.cycle_graph(size)
    elif family == "path":
        graph = nx.path_graph(size)
    elif family == "grid":
        side = int(round(math.sqrt(size)))
        if side * side != size:
            raise ValueError(f"grid family needs a square vertex count, got {size}")
        graph = nx.convert_node_labels_to_integers(nx.grid_2d_graph(side, side))
    elif family == "random_regular":
        graph = nx.random_regular_graph(degree, size, seed=seed)
    else:
        raise ValueError(f"Unknown graph family '{family}'")
    return sorted((min(u, v), max(u, v)) for u, v in graph.edges())


class ColoringModel(BaseModel):
    """Independent vertex colouring of a graph; W_i counts monochrome edges of colour i."""

    kind: Literal["coloring"] = "coloring"
    num_vertices: int = Field(..., ge=1, description="Vertex count M")
    edges: List[Tuple[int, int]] = Field(default_factory=list)
    pi: List[float] = Field(..., min_length=1, description="Colour probabilities")
    thinning_p: Optional[float] = Field(None, ge=0.0, le=1.0)
    family: Optional[GraphFamily] = Field(None, description="Regenerate edges per size")
    degree: int = Field(3, ge=1, description="Degree for random_regular graphs")
    graph_seed: int = Field(0, description="Seed for random graph families")
    edges_file: Optional[Path] = Field(None, description="Edge list, one pair per line")

    @model_validator(mode="after")
    def check_graph(self) -> "ColoringModel":
        if abs(sum(self.pi) - 1.0) > 1e-12 or any(p < 0 for p in self.pi):
            raise ValueError("pi must be a probability vector")
        if self.edges_file is not None and not self.edges:
            from .dependency import read_subsets

            subsets = read_subsets(self.edges_file)
            if any(len(s) != 2 for s in subsets):
                raise ValueError(f"'{self.edges_file}' must list two vertices per line")
            self.edges = [tuple(sorted(s)) for s in subsets]  # type: ignore[misc]
        elif self.family is not None and not self.edges:
            self.edges = _family_edges(
                self.family, self.num_vertices, self.degree, self.graph_seed
            )
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"loop at vertex {u}")
            if not (0 <= u < self.num_vertices and 0 <= v < self.num_vertices):
                raise ValueError(f"edge ({u}, {v}) outside [0, {self.num_vertices})")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"multi-edge {key}")
            seen.add(key)
        if not self.edges:
            raise ValueError("graph needs at least one edge")
        return self

    @property
    def dimension(self) -> int:
        return len(self.pi)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def graph(self) -> nx.Graph:
        """The vertex graph G = ([M], E)."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.num_vertices))
        graph.add_edges_from(self.edges)
        return graph

    def at_size(self, size: float) -> "ColoringModel":
        """The same family on ``size`` vertices."""
        if self.family is None:
            raise ValueError("a size ladder needs a graph family")
        data = self.model_dump()
        data.update(num_vertices=int(size), edges=[], edges_file=None)
        return ColoringModel.model_validate(data)


class RggModel(BaseModel):
    """n^2 uniform points on the n x n torus joined within distance r."""

    kind: Literal["rgg"] = "rgg"
    n: int = Field(..., ge=1, description="Torus side; M = n^2 points")
    r: float = Field(..., gt=0.0, description="Connection radius")

    @model_validator(mode="after")
    def check_radius(self) -> "RggModel":
        if not self.r < self.n / 4:
            raise ValueError(f"radius {self.r} must be below n/4 = {self.n / 4}")
        return self

    @property
    def num_points(self) -> int:
        return self.n * self.n

    def at_size(self, size: float) -> "RggModel":
        return RggModel(n=int(size), r=self.r)


class MarkovModel(BaseModel):
    """Finite chain on {0, ..., d}; W_n counts visits to states 1..d at times 1..n."""

    kind: Literal["markov"] = "markov"
    P: List[List[float]] = Field(..., description="Row-stochastic transition matrix")
    start: int = Field(0, ge=0)
    n: int = Field(100, ge=1, description="Horizon")

    @field_validator("P")
    @classmethod
    def check_stochastic(cls, rows: List[List[float]]) -> List[List[float]]:
        matrix = _as_matrix(rows, "P")
        if matrix.shape[0] < 2:
            raise ValueError("P needs at least two states")
        if np.any(matrix < 0):
            raise ValueError("P has negative entries")
        if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("rows of P must sum to 1")
        graph = nx.DiGraph()
        graph.add_nodes_from(range(matrix.shape[0]))
        graph.add_edges_from(zip(*np.nonzero(matrix)))
        if not nx.is_strongly_connected(graph):
            raise ValueError("chain is reducible")
        if not nx.is_aperiodic(graph):
            raise ValueError("chain is periodic")
        return rows

    @model_validator(mode="after")
    def check_start(self) -> "MarkovModel":
        if self.start >= len(self.P):
            raise ValueError(f"start state {self.start} outside 0..{len(self.P) - 1}")
        return self

    @property
    def dimension(self) -> int:
        return len(self.P) - 1

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.P, dtype=float)

    @property
    def satisfies_a1(self) -> bool:
        """Every state can be held for one step: P_ii > 0."""
        return bool(np.all(np.diag(self.matrix) > 0))

    def at_size(self, size: float) -> "MarkovModel":
        return MarkovModel(P=self.P, start=self.start, n=int(size))


class MaxPointsModel(BaseModel):
    """Poisson process on the unit triangle; Y_i counts maximal points in strip E_i."""

    kind: Literal["maxpoints"] = "maxpoints"
    lam: float = Field(..., gt=0.0, description="Intensity lambda")
    strips: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, 1.0), (1.0, 2.0)],
        description="(b_i, d_i) in units of lambda^(-1/2) from the hypotenuse",
    )

    @field_validator("strips")
    @classmethod
    def check_strips(cls, strips: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if not strips:
            raise ValueError("at least one strip is needed")
        previous_end = 0.0
        for b, d in strips:
            if not (previous_end <= b < d < math.inf):
                raise ValueError(
                    "strips must satisfy 0 <= b_1 < d_1 <= b_2 < d_2 < ..."
                )
            previous_end = d
        return strips

    @property
    def dimension(self) -> int:
        return len(self.strips)

    def at_size(self, size: float) -> "MaxPointsModel":
        return MaxPointsModel(lam=float(size), strips=self.strips)


class ConstantModel(BaseModel):
    """Degenerate W equal to a fixed vector, compared with a fixed DN target."""

    kind: Literal["constant"] = "constant"
    value: List[int] = Field(..., min_length=1)
    variance: float = Field(1.0, gt=0.0, description="Per-coordinate DN target variance")

    @property
    def dimension(self) -> int:
        return len(self.value)

    def at_size(self, size: float) -> "ConstantModel":
        return self


ModelConfig = Annotated[
    Union[ColoringModel, RggModel, MarkovModel, MaxPointsModel, ConstantModel],
    Field(discriminator="kind"),
]


class ExperimentConfig(BaseModel):
    """A seeded convergence experiment over a ladder of model sizes."""

    model: ModelConfig
    sizes: List[float] = Field(..., min_length=3, description="Strictly increasing")
    replicates: int = Field(10_000, ge=1_000)
    seed: int = Field(DEFAULT_SEED)
    epsilon_tail: float = Field(DEFAULT_EPSILON_TAIL, gt=0.0, lt=1.0)
    n_bootstrap: int = Field(DEFAULT_BOOTSTRAP, ge=0)
    output: Optional[Path] = None
    format: Literal["csv", "json"] = "json"

    @field_validator("sizes")
    @classmethod
    def check_ladder(cls, sizes: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        if sizes[0] <= 0:
            raise ValueError("sizes must be positive")
        return sizes


class ConvergenceRow(BaseModel):
    """TV estimate and bound terms at one ladder size."""

    size: float
    m: int
    tv_estimate: float
    mc_std_error: float
    tail_bound: float
    tv_method: Literal["exact", "empirical"]
    rate_reference: float
    bound_breakdown: Optional[BoundBreakdown] = None


class ConvergenceReport(BaseModel):
    """Per-size rows plus the fitted log-log decay slope."""

    model_kind: str
    seed: int
    rows: List[ConvergenceRow] = Field(default_factory=list)
    slope: Optional[float] = None
    slope_std_error: Optional[float] = None
    reference_slope: float
    notes: str = ""
