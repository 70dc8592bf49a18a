"""Exact shortest-path oracle: distances, counting, uniform sampling, random walks.

All shortest paths between a pair (i, j) live on a DAG: edge (u, v) is on
it iff dist(i,u) + 1 = dist(i,v) and v still lies on some shortest route
to j.  Counting is dynamic programming over that DAG with exact
arbitrary-precision integers (full-size maps overflow 64-bit counts), and
uniform sampling walks the DAG backward from j, weighting each
predecessor by the number of shortest paths that reach it.

Every operation is pure given an immutable map and a caller-supplied RNG;
per-map distance/count fields are cached (bounded LRU) without affecting
any result.
"""

from __future__ import annotations

import random
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator
from weakref import WeakKeyDictionary

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import CapacityError, ParameterError
from .gridmap import DIRECTIONS, Direction, GridMap, NodeId

# enumerate-and-sample cutoff for drawing distinct paths without replacement
ENUMERATION_LIMIT = 4096
REJECTION_ATTEMPT_FACTOR = 100


@dataclass(frozen=True, slots=True)
class PathQuery:
    """An ordered start-end pair on one map. Start and end must differ."""

    map_id: str
    start: NodeId
    end: NodeId

    def __post_init__(self):
        if self.start == self.end:
            raise ParameterError("path queries exclude (i, i) pairs")
        if self.start.map_id != self.map_id or self.end.map_id != self.map_id:
            raise ParameterError("query endpoints must belong to the queried map")


@dataclass(frozen=True, slots=True)
class Path:
    """A trajectory: the query plus the move sequence from start to end."""

    query: PathQuery
    moves: tuple[Direction, ...]

    @property
    def length(self) -> int:
        return len(self.moves)

    def nodes(self, grid: GridMap) -> list[NodeId]:
        """Derived node sequence start..end; raises if any move is illegal."""
        seq = [self.query.start]
        cell = grid.cell_of(self.query.start)
        for k, move in enumerate(self.moves):
            nxt = grid.adjacency[cell].get(move)
            if nxt is None:
                raise ParameterError(f"move {k} ({move.token}) is not an edge of {grid.map_id}")
            cell = nxt
            seq.append(grid.node_by_cell(cell))
        return seq

    def validate(self, grid: GridMap) -> None:
        if self.length < 1:
            raise ParameterError("a path has at least one move")
        if self.nodes(grid)[-1] != self.query.end:
            raise ParameterError("path does not terminate at the query end node")


class _MapCache:
    """Per-map LRU of distance fields and shortest-path-count fields."""

    def __init__(self, grid: GridMap, maxsize: int = 4096):
        self.maxsize = maxsize
        self.lock = threading.Lock()
        self.dist: OrderedDict[int, np.ndarray] = OrderedDict()
        self.ways: OrderedDict[int, list[int]] = OrderedDict()
        n = grid.n_cells
        rows, cols = [], []
        for cell, adj in enumerate(grid.adjacency):
            for other in adj.values():
                rows.append(cell)
                cols.append(other)
        self.csr = csr_matrix(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)
        )
        # neighbour lists in canonical direction order, for DP and sampling
        self.nbr: list[tuple[tuple[Direction, int], ...]] = [
            tuple((d, adj[d]) for d in DIRECTIONS if d in adj) for adj in grid.adjacency
        ]


_caches: "WeakKeyDictionary[GridMap, _MapCache]" = WeakKeyDictionary()
_caches_lock = threading.Lock()


def _cache_of(grid: GridMap) -> _MapCache:
    with _caches_lock:
        cache = _caches.get(grid)
        if cache is None:
            cache = _MapCache(grid)
            _caches[grid] = cache
        return cache


def distance_field(grid: GridMap, source: NodeId) -> np.ndarray:
    """BFS distances from ``source`` to every cell; -1 where unreachable."""
    cell = grid.cell_of(source)
    cache = _cache_of(grid)
    with cache.lock:
        field = cache.dist.get(cell)
        if field is not None:
            cache.dist.move_to_end(cell)
            return field
    raw = dijkstra(cache.csr, unweighted=True, indices=cell)
    field = np.where(np.isinf(raw), -1, raw).astype(np.int64)
    field.setflags(write=False)
    with cache.lock:
        cache.dist[cell] = field
        if len(cache.dist) > cache.maxsize:
            cache.dist.popitem(last=False)
    return field


def _count_field(grid: GridMap, source_cell: int) -> list[int]:
    """ways[v] = number of distinct shortest paths source -> v (exact ints)."""
    cache = _cache_of(grid)
    with cache.lock:
        ways = cache.ways.get(source_cell)
        if ways is not None:
            cache.ways.move_to_end(source_cell)
            return ways
    dist = distance_field(grid, grid.node_by_cell(source_cell))
    order = [c for c in np.argsort(dist, kind="stable").tolist() if dist[c] >= 0]
    ways = [0] * grid.n_cells
    ways[source_cell] = 1
    nbr = cache.nbr
    for cell in order:
        if cell == source_cell:
            continue
        target = dist[cell]
        total = 0
        for _, other in nbr[cell]:
            if dist[other] == target - 1:
                total += ways[other]
        ways[cell] = total
    with cache.lock:
        cache.ways[source_cell] = ways
        if len(cache.ways) > cache.maxsize:
            cache.ways.popitem(last=False)
    return ways


def shortest_distance(grid: GridMap, start: NodeId, end: NodeId) -> int | None:
    """Exact BFS distance, or None when unreachable (never on generated maps)."""
    field = distance_field(grid, start)
    d = int(field[grid.cell_of(end)])
    return None if d < 0 else d


def count_shortest_paths(grid: GridMap, start: NodeId, end: NodeId) -> int:
    """Number of distinct shortest paths from start to end (0 if unreachable)."""
    if start == end:
        raise ParameterError("path counting excludes (i, i) pairs")
    ways = _count_field(grid, grid.cell_of(start))
    return ways[grid.cell_of(end)]


def _backward_step_choices(
    cache: _MapCache, dist: np.ndarray, ways: list[int], cell: int
) -> list[tuple[int, Direction]]:
    """Predecessors of ``cell`` on the shortest-path DAG, with the forward move."""
    target = dist[cell] - 1
    return [
        (other, d.inverse)
        for d, other in cache.nbr[cell]
        if dist[other] == target and ways[other] > 0
    ]


def sample_shortest_path(
    grid: GridMap, start: NodeId, end: NodeId, rng: random.Random
) -> Path:
    """Draw one shortest path uniformly from the full set between start and end."""
    query = PathQuery(grid.map_id, start, end)
    start_cell, end_cell = grid.cell_of(start), grid.cell_of(end)
    dist = distance_field(grid, start)
    if dist[end_cell] < 0:
        raise ParameterError(f"{end.token} is unreachable from {start.token}")
    ways = _count_field(grid, start_cell)
    cache = _cache_of(grid)
    moves: list[Direction] = []
    cell = end_cell
    while cell != start_cell:
        choices = _backward_step_choices(cache, dist, ways, cell)
        total = sum(ways[c] for c, _ in choices)
        pick = rng.randrange(total)
        for c, move in choices:
            pick -= ways[c]
            if pick < 0:
                moves.append(move)
                cell = c
                break
    moves.reverse()
    return Path(query, tuple(moves))


def enumerate_shortest_paths(
    grid: GridMap, start: NodeId, end: NodeId, limit: int | None = None
) -> list[Path]:
    """All shortest paths in a canonical order; raises CapacityError past ``limit``."""
    query = PathQuery(grid.map_id, start, end)
    start_cell, end_cell = grid.cell_of(start), grid.cell_of(end)
    dist = distance_field(grid, start)
    if dist[end_cell] < 0:
        return []
    ways = _count_field(grid, start_cell)
    cache = _cache_of(grid)
    out: list[Path] = []
    stack: list[tuple[int, tuple[Direction, ...]]] = [(end_cell, ())]
    while stack:
        cell, suffix = stack.pop()
        if cell == start_cell:
            out.append(Path(query, suffix))
            if limit is not None and len(out) > limit:
                raise CapacityError(f"more than {limit} shortest paths for {start.token}->{end.token}")
            continue
        # reversed push keeps canonical (direction-order) output from the stack
        for c, move in reversed(_backward_step_choices(cache, dist, ways, cell)):
            stack.append((c, (move,) + suffix))
    return out


def sample_distinct_shortest_paths(
    grid: GridMap,
    start: NodeId,
    end: NodeId,
    k: int,
    rng: random.Random,
    exclude: set[tuple[Direction, ...]] | None = None,
) -> list[Path]:
    """Up to ``k`` distinct shortest paths, uniform without replacement.

    Enumerates when the pair has at most ENUMERATION_LIMIT paths; otherwise
    rejection-samples with a bounded attempt budget.
    """
    if k < 1:
        raise ParameterError("k must be at least 1")
    taken = set(exclude) if exclude else set()
    count = count_shortest_paths(grid, start, end)

    def enumerate_and_sample() -> list[Path]:
        pool = [p for p in enumerate_shortest_paths(grid, start, end) if p.moves not in taken]
        if len(pool) <= k:
            return pool
        return rng.sample(pool, k)

    enumerable = count <= ENUMERATION_LIMIT
    # enumerate when most of the set is wanted; otherwise rejection-sample
    # (distinct draws are uniform without replacement either way)
    if enumerable and (4 * (k + len(taken)) >= count or count <= 64):
        return enumerate_and_sample()
    out: list[Path] = []
    for _ in range(REJECTION_ATTEMPT_FACTOR * k):
        path = sample_shortest_path(grid, start, end, rng)
        if path.moves not in taken:
            taken.add(path.moves)
            out.append(path)
            if len(out) == k:
                return out
    if enumerable:
        return out + [
            p for p in enumerate_and_sample() if p.moves not in {q.moves for q in out}
        ][: k - len(out)]
    raise CapacityError(
        f"could not draw {k} distinct shortest paths for {start.token}->{end.token} "
        f"within {REJECTION_ATTEMPT_FACTOR * k} attempts"
    )


def random_walk(
    grid: GridMap, start: NodeId, steps: int, rng: random.Random
) -> tuple[list[NodeId], list[Direction]]:
    """Uniform random walk: at each step one incident edge, chosen uniformly."""
    if steps < 1:
        raise ParameterError("a walk has at least one step")
    cache = _cache_of(grid)
    cell = grid.cell_of(start)
    nodes = [start]
    moves: list[Direction] = []
    for _ in range(steps):
        options = cache.nbr[cell]
        move, cell = options[rng.randrange(len(options))]
        moves.append(move)
        nodes.append(grid.node_by_cell(cell))
    return nodes, moves


def query_pairs(grid: GridMap, nodes: list[NodeId]) -> Iterator[tuple[NodeId, NodeId]]:
    """All ordered pairs (i, j), i != j, over ``nodes`` in canonical uid order."""
    ordered = sorted(nodes, key=lambda n: n.uid)
    for i in ordered:
        for j in ordered:
            if i != j:
                yield i, j
