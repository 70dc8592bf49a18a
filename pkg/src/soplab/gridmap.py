"""Seeded sparse grid maps with disjoint per-map node vocabularies.

A map is a 4-connected ``width x height`` grid in which every cell is a
node and the edge set is a connected random subgraph of the full grid:
a uniform spanning tree (Wilson's algorithm) plus every remaining grid
edge retained independently with probability ``1 - sparsity``.  The
spanning tree guarantees connectivity without rejection sampling, so
``sparsity`` is exactly the probability of dropping a non-tree edge.

Coordinates put the origin at the bottom-left corner: E is +x, N is +y.
Node tokens are strings ``m<map_index>_n<cell_index>`` so the vocabularies
of two maps with different indices are disjoint by construction.  Maps
and registries are immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MembershipError, ParameterError

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
SEP_TOKEN = ":"
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN)

# cell indices live in the low bits of a node uid; map_index in the high bits
_CELL_BITS = 20
_MAX_CELLS = 1 << _CELL_BITS


class Direction(Enum):
    """The four grid moves. E=+x, W=-x, N=+y, S=-y."""

    E = (1, 0)
    W = (-1, 0)
    N = (0, 1)
    S = (0, -1)

    @property
    def dx(self) -> int:
        return self.value[0]

    @property
    def dy(self) -> int:
        return self.value[1]

    @property
    def inverse(self) -> "Direction":
        return _INVERSE[self]

    @property
    def token(self) -> str:
        return self.name


_INVERSE = {
    Direction.E: Direction.W,
    Direction.W: Direction.E,
    Direction.N: Direction.S,
    Direction.S: Direction.N,
}

DIRECTIONS = (Direction.E, Direction.W, Direction.N, Direction.S)
DIRECTION_TOKENS = tuple(d.token for d in DIRECTIONS)


@dataclass(frozen=True, slots=True)
class NodeId:
    """A grid cell: globally unique integer id, token string, and coordinates."""

    uid: int
    token: str
    x: int
    y: int
    map_id: str


def node_uid(map_index: int, cell: int) -> int:
    return (map_index << _CELL_BITS) | cell


class GridMap:
    """Immutable sparse grid map. Build with :func:`generate_map` or :func:`read_map_file`."""

    def __init__(
        self,
        map_index: int,
        width: int,
        height: int,
        sparsity: float,
        seed: int,
        edges: Iterable[tuple[int, int]],
    ):
        self.map_index = map_index
        self.map_id = f"m{map_index}"
        self.width = width
        self.height = height
        self.sparsity = sparsity
        self.seed = seed
        n = width * height
        self.n_cells = n
        self._nodes = tuple(
            NodeId(
                uid=node_uid(map_index, c),
                token=f"m{map_index}_n{c}",
                x=c % width,
                y=c // width,
                map_id=self.map_id,
            )
            for c in range(n)
        )
        adjacency: list[dict[Direction, int]] = [{} for _ in range(n)]
        edge_set: set[tuple[int, int]] = set()
        for a, b in edges:
            if a > b:
                a, b = b, a
            ax, ay = a % width, a // width
            bx, by = b % width, b // width
            if abs(ax - bx) + abs(ay - by) != 1:
                raise ParameterError(f"edge ({a},{b}) does not join 4-neighbour cells")
            edge_set.add((a, b))
            for d in DIRECTIONS:
                if (ax + d.dx, ay + d.dy) == (bx, by):
                    adjacency[a][d] = b
                    adjacency[b][d.inverse] = a
                    break
        self._edges = tuple(sorted(edge_set))
        self.adjacency: tuple[dict[Direction, int], ...] = tuple(adjacency)
        self._by_token = {node.token: node for node in self._nodes}

    # -- accessors ---------------------------------------------------------

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        return self._nodes

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def cell_edges(self) -> tuple[tuple[int, int], ...]:
        """Edges as (cell, cell) pairs, lower cell first, sorted."""
        return self._edges

    def node_at(self, x: int, y: int) -> NodeId:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise MembershipError(f"({x},{y}) outside {self.width}x{self.height} map {self.map_id}")
        return self._nodes[y * self.width + x]

    def node_by_token(self, token: str) -> NodeId:
        try:
            return self._by_token[token]
        except KeyError:
            raise MembershipError(f"token {token!r} not in map {self.map_id}") from None

    def node_by_cell(self, cell: int) -> NodeId:
        return self._nodes[cell]

    def cell_of(self, node: NodeId) -> int:
        """Validate membership and return the node's cell index."""
        cell = node.uid & (_MAX_CELLS - 1)
        if node.map_id != self.map_id or cell >= self.n_cells or self._nodes[cell] != node:
            raise MembershipError(f"node {node.token} does not belong to map {self.map_id}")
        return cell

    def __contains__(self, node: NodeId) -> bool:
        try:
            self.cell_of(node)
            return True
        except MembershipError:
            return False

    def __repr__(self) -> str:
        return (
            f"GridMap({self.map_id}, {self.width}x{self.height}, "
            f"sparsity={self.sparsity}, seed={self.seed}, edges={self.n_edges})"
        )


def _grid_neighbor_cells(cell: int, width: int, height: int) -> list[int]:
    x, y = cell % width, cell // width
    out = []
    for d in DIRECTIONS:
        nx, ny = x + d.dx, y + d.dy
        if 0 <= nx < width and 0 <= ny < height:
            out.append(ny * width + nx)
    return out


def _full_grid_edges(width: int, height: int) -> list[tuple[int, int]]:
    edges = []
    for y in range(height):
        for x in range(width):
            c = y * width + x
            if x + 1 < width:
                edges.append((c, c + 1))
            if y + 1 < height:
                edges.append((c, c + width))
    return sorted(edges)


def _uniform_spanning_tree(width: int, height: int, rng: random.Random) -> set[tuple[int, int]]:
    """Wilson's loop-erased random walk algorithm; exactly uniform over spanning trees."""
    n = width * height
    in_tree = bytearray(n)
    in_tree[0] = 1
    successor = [-1] * n
    edges: set[tuple[int, int]] = set()
    for start in range(n):
        if in_tree[start]:
            continue
        cell = start
        while not in_tree[cell]:
            nbrs = _grid_neighbor_cells(cell, width, height)
            successor[cell] = nbrs[rng.randrange(len(nbrs))]
            cell = successor[cell]
        cell = start
        while not in_tree[cell]:
            in_tree[cell] = 1
            nxt = successor[cell]
            edges.add((cell, nxt) if cell < nxt else (nxt, cell))
            cell = nxt
    return edges


def generate_map(
    width: int,
    height: int,
    sparsity: float,
    seed: int,
    map_index: int = 0,
) -> GridMap:
    """Generate a connected sparse grid map, deterministic in all arguments.

    ``sparsity`` is the probability of dropping each grid edge that is not
    on the (uniform) spanning tree: 0.0 keeps the full grid, 1.0 keeps the
    tree alone.
    """
    if width < 2 or height < 2:
        raise ParameterError(f"map dimensions must be at least 2x2, got {width}x{height}")
    if not 0.0 <= sparsity <= 1.0:
        raise ParameterError(f"sparsity must lie in [0,1], got {sparsity}")
    if width * height > _MAX_CELLS:
        raise ParameterError(f"map exceeds {_MAX_CELLS} cells")
    if map_index < 0:
        raise ParameterError("map_index must be non-negative")
    rng = random.Random(seed)
    tree = _uniform_spanning_tree(width, height, rng)
    edges = list(tree)
    for edge in _full_grid_edges(width, height):
        if edge in tree:
            continue
        if rng.random() >= sparsity:
            edges.append(edge)
    return GridMap(map_index, width, height, sparsity, seed, edges)


def neighbors(grid: GridMap, node: NodeId) -> set[tuple[Direction, NodeId]]:
    """All edges incident to ``node``, labelled with the direction of motion."""
    cell = grid.cell_of(node)
    return {(d, grid.node_by_cell(c)) for d, c in grid.adjacency[cell].items()}


def apply_move(grid: GridMap, node: NodeId, direction: Direction) -> NodeId | None:
    """Follow one edge; None when the move fails (see :func:`move_failure` for why)."""
    cell = grid.cell_of(node)
    target = grid.adjacency[cell].get(direction)
    return None if target is None else grid.node_by_cell(target)


def move_failure(grid: GridMap, node: NodeId, direction: Direction) -> str | None:
    """Classify a move: None on success, else "off-grid" or "blocked"."""
    cell = grid.cell_of(node)
    if direction in grid.adjacency[cell]:
        return None
    x, y = node.x + direction.dx, node.y + direction.dy
    if 0 <= x < grid.width and 0 <= y < grid.height:
        return "blocked"
    return "off-grid"


# -- serialization ----------------------------------------------------------


def map_to_dict(grid: GridMap) -> dict:
    return {
        "map_id": grid.map_id,
        "width": grid.width,
        "height": grid.height,
        "sparsity": grid.sparsity,
        "seed": grid.seed,
        "nodes": [
            {"id": n.uid, "token": n.token, "x": n.x, "y": n.y}
            for n in grid.nodes
        ],
        "edges": [
            sorted([grid.node_by_cell(a).uid, grid.node_by_cell(b).uid])
            for a, b in grid.cell_edges()
        ],
    }


def map_from_dict(data: dict) -> GridMap:
    map_id = data["map_id"]
    if not (map_id.startswith("m") and map_id[1:].isdigit()):
        raise ParameterError(f"map_id must look like m<index>, got {map_id!r}")
    map_index = int(map_id[1:])
    width, height = data["width"], data["height"]
    base = map_index << _CELL_BITS
    edges = [(a - base, b - base) for a, b in data["edges"]]
    grid = GridMap(map_index, width, height, data["sparsity"], data["seed"], edges)
    expect = [{"id": n.uid, "token": n.token, "x": n.x, "y": n.y} for n in grid.nodes]
    if data["nodes"] != expect:
        raise ParameterError(f"node table of {map_id} is inconsistent with its dimensions")
    return grid


def dumps_map(grid: GridMap) -> str:
    return json.dumps(map_to_dict(grid), separators=(",", ":")) + "\n"


def write_map_file(grid: GridMap, path: str | Path) -> None:
    Path(path).write_text(dumps_map(grid), encoding="utf-8")


def read_map_file(path: str | Path) -> GridMap:
    return map_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class MapRegistry:
    """An ordered, immutable collection of maps sharing one token table.

    The table is a bijection: ids are dense, starting with the special
    tokens, then the four directions, then every map's node tokens in
    registry order.
    """

    def __init__(self, maps: Iterable[GridMap]):
        self.maps = tuple(maps)
        seen_index: set[int] = set()
        for grid in self.maps:
            if grid.map_index in seen_index:
                raise ParameterError(f"duplicate map_index {grid.map_index} in registry")
            seen_index.add(grid.map_index)
        self._by_id = {grid.map_id: grid for grid in self.maps}
        tokens: list[str] = list(SPECIAL_TOKENS) + list(DIRECTION_TOKENS)
        for grid in self.maps:
            tokens.extend(node.token for node in grid.nodes)
        self.token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ParameterError("token table is not a bijection; node vocabularies overlap")
        self.id_to_token = tokens

    def map_by_id(self, map_id: str) -> GridMap:
        try:
            return self._by_id[map_id]
        except KeyError:
            raise MembershipError(f"map {map_id!r} not in registry") from None

    def __contains__(self, map_id: str) -> bool:
        return map_id in self._by_id

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def token_table_digest(self) -> str:
        payload = json.dumps(self.id_to_token, separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()

    def __iter__(self) -> Iterator[GridMap]:
        return iter(self.maps)


def write_registry(registry: MapRegistry, path: str | Path, map_paths: list[str]) -> None:
    """Write the registry file: map file names plus the token table."""
    if len(map_paths) != len(registry.maps):
        raise ParameterError("one map path per registry map required")
    payload = {
        "maps": list(map_paths),
        "token_table": registry.token_to_id,
        "digest": registry.token_table_digest(),
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8")


def load_registry(path: str | Path) -> MapRegistry:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    maps = [read_map_file(path.parent / p) for p in data["maps"]]
    registry = MapRegistry(maps)
    if data.get("token_table") != registry.token_to_id:
        raise ParameterError(f"registry {path} token table does not match its maps")
    return registry
