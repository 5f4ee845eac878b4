"""Intersection-graph dependency structure.

Summand ``j`` is a function of the independent variables indexed by
``M_j``; summands ``j != k`` are neighbours when ``M_j`` and ``M_k``
intersect. Neighbourhoods ``N_j`` exclude ``j`` itself.
"""

import logging
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Set

from .errors import DomainError
from .models import NeighborhoodStats

logger = logging.getLogger(__name__)


class IntersectionGraph:
    """Dependency graph induced by subsets of ``range(num_variables)``.

    Immutable after construction. ``adjacency[j]`` is the sorted list ``N_j``
    and ``variable_index[l]`` the sorted list ``L_l`` of summands using
    variable ``l``.
    """

    def __init__(
        self,
        subsets: Sequence[Sequence[int]],
        num_variables: int,
        adjacency: List[List[int]],
        variable_index: List[List[int]],
    ):
        self.subsets = [frozenset(s) for s in subsets]
        self.num_variables = num_variables
        self.adjacency = adjacency
        self.variable_index = variable_index

    @property
    def n(self) -> int:
        """Number of summands."""
        return len(self.subsets)

    @property
    def M(self) -> int:
        """Number of underlying independent variables."""
        return self.num_variables

    def neighbors(self, j: int) -> List[int]:
        return self.adjacency[j]

    def closed_neighborhood(self, j: int) -> Set[int]:
        return {j, *self.adjacency[j]}

    def are_adjacent(self, j: int, k: int) -> bool:
        return j != k and k in self.adjacency[j]

    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def __repr__(self) -> str:
        return f"<IntersectionGraph(n={self.n}, M={self.M}, edges={self.num_edges()})>"


def build_intersection_graph(
    subsets: Sequence[Iterable[int]], num_variables: Optional[int] = None
) -> IntersectionGraph:
    """Build the intersection graph through the inverted index l -> L_l."""
    subsets = [sorted(set(int(v) for v in s)) for s in subsets]
    if not subsets:
        raise DomainError("at least one subset is required")
    largest = max((s[-1] for s in subsets if s), default=-1)
    if num_variables is None:
        num_variables = largest + 1
    for j, subset in enumerate(subsets):
        if subset and (subset[0] < 0 or subset[-1] >= num_variables):
            raise DomainError(
                f"subset {j} has an element outside [0, {num_variables}): {subset}"
            )

    variable_index: List[List[int]] = [[] for _ in range(num_variables)]
    for j, subset in enumerate(subsets):
        for variable in subset:
            variable_index[variable].append(j)

    neighbor_sets: List[Set[int]] = [set() for _ in subsets]
    for users in variable_index:
        for j in users:
            neighbor_sets[j].update(users)
    adjacency = [sorted(s - {j}) for j, s in enumerate(neighbor_sets)]
    graph = IntersectionGraph(subsets, num_variables, adjacency, variable_index)
    logger.debug("built %r", graph)
    return graph


def neighborhood_stats(graph: IntersectionGraph, m: int) -> NeighborhoodStats:
    """Degrees D_j = |N_j| and D-bar-squared = m^-1 sum_j (D_j + 1)^2."""
    if m < 1:
        raise DomainError(f"m must be at least 1, got {m}")
    degrees = [len(a) for a in graph.adjacency]
    total = sum((degree + 1) ** 2 for degree in degrees)
    return NeighborhoodStats(degrees=degrees, dbar2=total / m, m_used=m)


class DecompositionSets(NamedTuple):
    """Index sets with W = W^(j) + Z^(j) and W^(j) = W^(j,k) + Z^(j,k)."""

    Zj: List[int]
    Wj: List[int]
    Zjk: List[int]
    Wjk: List[int]


def decomposition_sets(
    graph: IntersectionGraph, j: int, k: Optional[int] = None
) -> DecompositionSets:
    """Summand index sets of the local decompositions around ``j`` and ``k``.

    Without ``k`` the second-level sets coincide with the first (as for
    ``k == j``).
    """
    if not 0 <= j < graph.n:
        raise DomainError(f"index j={j} outside [0, {graph.n})")
    if k is None:
        k = j
    if not 0 <= k < graph.n:
        raise DomainError(f"index k={k} outside [0, {graph.n})")
    if k != j and not graph.are_adjacent(j, k):
        raise DomainError(f"k={k} is neither j={j} nor one of its neighbours")

    near_j = graph.closed_neighborhood(j)
    near_jk = near_j | graph.closed_neighborhood(k)
    everything = range(graph.n)
    return DecompositionSets(
        Zj=sorted(near_j),
        Wj=[i for i in everything if i not in near_j],
        Zjk=sorted(near_jk - near_j),
        Wjk=[i for i in everything if i not in near_jk],
    )


def excluded_variables(graph: IntersectionGraph, j: int, k: int) -> Set[int]:
    """Variables M^(j,k) used by any summand in the closed neighbourhoods of j and k."""
    excluded: Set[int] = set()
    for i in graph.closed_neighborhood(j) | graph.closed_neighborhood(k):
        excluded.update(graph.subsets[i])
    return excluded


def read_subsets(path: Path) -> List[List[int]]:
    """Read subsets from a text file, one whitespace-separated line each.

    Blank lines and lines starting with ``#`` are skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DomainError(f"Cannot read subsets from '{path}': {e}") from e

    subsets = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            subsets.append([int(token) for token in line.split()])
        except ValueError as e:
            raise DomainError(f"'{path}' line {number}: {e}") from e
    return subsets


def write_subsets(path: Path, subsets: Sequence[Iterable[int]]) -> None:
    """Write subsets in the format read by :func:`read_subsets`."""
    path = Path(path)
    text = "".join(" ".join(str(v) for v in sorted(s)) + "\n" for s in subsets)
    try:
        path.write_text(text)
    except OSError as e:
        raise DomainError(f"Cannot write subsets to '{path}': {e}") from e
