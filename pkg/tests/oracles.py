"""Independent brute-force oracles used to check the package's algorithms.

Deliberately naive: queue-based BFS over an adjacency table rebuilt from the
public edge list, and forward DFS enumeration of shortest paths guided only
by the oracle's own distance tables.  Nothing here shares code with the
implementations under test.
"""

from collections import deque

from soplab.gridmap import DIRECTIONS, GridMap


def adjacency_table(grid: GridMap) -> dict[int, list[tuple[str, int]]]:
    """cell -> [(direction token, neighbour cell)] straight from the edge list."""
    table: dict[int, list[tuple[str, int]]] = {c: [] for c in range(grid.n_cells)}
    for a, b in grid.cell_edges():
        ax, ay = a % grid.width, a // grid.width
        bx, by = b % grid.width, b // grid.width
        for d in DIRECTIONS:
            if (ax + d.dx, ay + d.dy) == (bx, by):
                table[a].append((d.token, b))
                table[b].append((d.inverse.token, a))
    return table


def bfs_distances(grid: GridMap, source_cell: int) -> list[int]:
    adj = adjacency_table(grid)
    dist = [-1] * grid.n_cells
    dist[source_cell] = 0
    queue = deque([source_cell])
    while queue:
        u = queue.popleft()
        for _, v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def all_pairs_distances(grid: GridMap) -> list[list[int]]:
    return [bfs_distances(grid, c) for c in range(grid.n_cells)]


def enumerate_shortest_move_sequences(
    grid: GridMap, start_cell: int, end_cell: int
) -> list[tuple[str, ...]]:
    """Every shortest path start->end as a tuple of direction tokens.

    Forward DFS that only takes steps strictly decreasing the remaining
    distance to the end (computed by this module's own BFS).
    """
    dist_to_end = bfs_distances(grid, end_cell)
    if dist_to_end[start_cell] < 0:
        return []
    adj = adjacency_table(grid)
    out: list[tuple[str, ...]] = []
    stack: list[tuple[int, tuple[str, ...]]] = [(start_cell, ())]
    while stack:
        cell, moves = stack.pop()
        if cell == end_cell:
            out.append(moves)
            continue
        for token, nxt in adj[cell]:
            if dist_to_end[nxt] == dist_to_end[cell] - 1:
                stack.append((nxt, moves + (token,)))
    return out


def enumerate_walks(grid: GridMap, start_cell: int, max_len: int):
    """All legal move sequences from start_cell of length 1..max_len.

    Yields (tokens, terminal cell).  Grows with the branching factor; callers
    cap max_len accordingly.
    """
    adj = adjacency_table(grid)
    stack: list[tuple[int, tuple[str, ...]]] = [(start_cell, ())]
    while stack:
        cell, moves = stack.pop()
        if moves:
            yield moves, cell
        if len(moves) < max_len:
            for token, nxt in adj[cell]:
                stack.append((nxt, moves + (token,)))
