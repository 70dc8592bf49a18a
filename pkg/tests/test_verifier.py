import json
import random

from soplab.gridmap import DIRECTIONS, MapRegistry, generate_map, move_failure
from soplab.pathfind import PathQuery, sample_shortest_path, shortest_distance
from soplab.verifier import (
    VerificationClass,
    batch_verify,
    verify_completion,
    verify_line,
    write_results,
)

from oracles import bfs_distances, enumerate_walks


def answer_tokens(path, with_eos=True):
    q = path.query
    toks = [q.start.token] + [m.token for m in path.moves] + [q.end.token]
    if with_eos:
        toks.append("</s>")
    return " ".join(toks)


def random_pair(grid, rng):
    a, b = rng.sample(range(grid.n_cells), 2)
    return grid.node_by_cell(a), grid.node_by_cell(b)


def test_oracle_paths_verify_success(sparse_6x6):
    rng = random.Random(0)
    for _ in range(50):
        i, j = random_pair(sparse_6x6, rng)
        path = sample_shortest_path(sparse_6x6, i, j, rng)
        result = verify_completion(sparse_6x6, path.query, answer_tokens(path))
        assert result.outcome is VerificationClass.SUCCESS
        assert result.reward == 1
        assert result.generated_length == result.shortest_length


def test_detour_classified_non_shortest(full_8x8):
    rng = random.Random(1)
    for _ in range(20):
        i, j = random_pair(full_8x8, rng)
        path = sample_shortest_path(full_8x8, i, j, rng)
        # insert an E/W detour at a position where E stays on the grid
        nodes = path.nodes(full_8x8)
        spot = next((k for k, n in enumerate(nodes) if n.x < full_8x8.width - 1), None)
        if spot is None:
            continue
        moves = [m.token for m in path.moves]
        detoured = moves[:spot] + ["E", "W"] + moves[spot:]
        completion = " ".join([i.token] + detoured + [j.token, "</s>"])
        result = verify_completion(full_8x8, path.query, completion)
        assert result.outcome is VerificationClass.NON_SHORTEST
        assert result.reward == 0
        assert result.generated_length == result.shortest_length + 2


def test_truncated_path_not_reached(sparse_6x6):
    rng = random.Random(2)
    for _ in range(20):
        i, j = random_pair(sparse_6x6, rng)
        if shortest_distance(sparse_6x6, i, j) < 2:
            continue
        path = sample_shortest_path(sparse_6x6, i, j, rng)
        moves = [m.token for m in path.moves][:-1]
        completion = " ".join([i.token] + moves + [j.token, "</s>"])
        result = verify_completion(sparse_6x6, path.query, completion)
        assert result.outcome is VerificationClass.NOT_REACHED
        assert result.reward == 0


def test_off_grid_move_invalid(full_3x3):
    i = full_3x3.node_at(2, 0)
    j = full_3x3.node_at(0, 2)
    completion = f"{i.token} E N N {j.token} </s>"  # E exits the grid immediately
    result = verify_completion(full_3x3, PathQuery(full_3x3.map_id, i, j), completion)
    assert result.outcome is VerificationClass.INVALID_MOVE
    assert result.reward == 0


def test_blocked_edge_move_invalid(sparse_6x6):
    found = next(
        (node, d)
        for node in sparse_6x6.nodes
        for d in DIRECTIONS
        if move_failure(sparse_6x6, node, d) == "blocked"
    )
    node, d = found
    other = next(n for n in sparse_6x6.nodes if n != node)
    completion = f"{node.token} {d.token} {other.token}"
    result = verify_completion(sparse_6x6, PathQuery(sparse_6x6.map_id, node, other), completion)
    assert result.outcome is VerificationClass.INVALID_MOVE


def test_malformed_variants(sparse_6x6):
    rng = random.Random(3)
    i, j = random_pair(sparse_6x6, rng)
    query = PathQuery(sparse_6x6.map_id, i, j)
    path = sample_shortest_path(sparse_6x6, i, j, rng)
    good = answer_tokens(path)
    cases = [
        "",  # empty
        j.token,  # single token
        good.replace(i.token, j.token, 1),  # wrong start echo
        " ".join(good.split()[:-2] + ["</s>"]),  # terminator without end token
        good.replace(" E ", " blorp ", 1) if " E " in f" {good} " else f"{i.token} blorp {j.token}",
        f"{i.token} {i.token} {j.token}",  # node token where a direction belongs
    ]
    for completion in cases:
        result = verify_completion(sparse_6x6, query, completion)
        assert result.outcome is VerificationClass.MALFORMED, completion
        assert result.reward == 0


def test_unknown_tokens_never_crash(sparse_6x6):
    rng = random.Random(4)
    i, j = random_pair(sparse_6x6, rng)
    query = PathQuery(sparse_6x6.map_id, i, j)
    for completion in ("🤖", "<s> <s> <s>", "42 E N", f"{i.token} E \x00 {j.token}"):
        result = verify_completion(sparse_6x6, query, completion)
        assert result.outcome is VerificationClass.MALFORMED


def test_reward_invariant_under_trailing_eos(sparse_6x6):
    rng = random.Random(5)
    for _ in range(20):
        i, j = random_pair(sparse_6x6, rng)
        path = sample_shortest_path(sparse_6x6, i, j, rng)
        with_eos = verify_completion(sparse_6x6, path.query, answer_tokens(path, True))
        without = verify_completion(sparse_6x6, path.query, answer_tokens(path, False))
        assert with_eos.reward == without.reward == 1
        assert with_eos.outcome == without.outcome


def test_tokens_after_terminator_ignored_but_flagged(sparse_6x6):
    rng = random.Random(6)
    i, j = random_pair(sparse_6x6, rng)
    path = sample_shortest_path(sparse_6x6, i, j, rng)
    completion = answer_tokens(path) + " E E W garbage"
    result = verify_completion(sparse_6x6, path.query, completion)
    assert result.outcome is VerificationClass.SUCCESS
    assert result.trailing_tokens


def test_every_walk_classified_like_brute_force(sparse_6x6):
    # exhaustive on a 36-node map: all legal move sequences up to length 8
    # from a handful of starts; Success iff the walk ends at the queried end
    # in exactly the BFS distance.
    grid = sparse_6x6
    for start_cell in (0, 14, 27):
        start = grid.node_by_cell(start_cell)
        dist = bfs_distances(grid, start_cell)
        for moves, terminal in enumerate_walks(grid, start_cell, 8):
            if terminal == start_cell:
                continue
            end = grid.node_by_cell(terminal)
            query = PathQuery(grid.map_id, start, end)
            completion = " ".join([start.token] + list(moves) + [end.token])
            result = verify_completion(grid, query, completion)
            if len(moves) == dist[terminal]:
                assert result.outcome is VerificationClass.SUCCESS
            else:
                assert result.outcome is VerificationClass.NON_SHORTEST


def test_classification_is_total_on_fuzzed_sequences(sparse_6x6):
    rng = random.Random(7)
    vocabulary = [n.token for n in sparse_6x6.nodes] + ["E", "W", "N", "S", "</s>", "<s>", ":", "zzz"]
    i, j = random_pair(sparse_6x6, rng)
    query = PathQuery(sparse_6x6.map_id, i, j)
    for _ in range(500):
        tokens = [rng.choice(vocabulary) for _ in range(rng.randrange(0, 12))]
        result = verify_completion(sparse_6x6, query, tokens)
        assert result.outcome in VerificationClass
        assert result.reward in (0, 1)
        assert (result.reward == 1) == (result.outcome is VerificationClass.SUCCESS)


def test_batch_verify_preserves_order_and_counts(registry_pair):
    grid = registry_pair.maps[0]
    rng = random.Random(8)
    lines = []
    expected = []
    for _ in range(100):
        i, j = random_pair(grid, rng)
        path = sample_shortest_path(grid, i, j, rng)
        lines.append(f"{grid.map_id}\t{i.token}\t{j.token}\t{answer_tokens(path)}")
        expected.append("Success")
    rows, summary = batch_verify(registry_pair, lines)
    assert [r["class"] for r in rows] == expected
    assert [r["idx"] for r in rows] == list(range(100))
    assert summary["classes"]["Success"] == 100


def test_batch_verify_constructed_proportions(registry_pair, tmp_path):
    grid = registry_pair.maps[0]
    rng = random.Random(9)
    lines = []
    want = {"Success": 40, "NonShortest": 30, "NotReached": 20, "Malformed": 10}
    while len(lines) < 40:
        i, j = random_pair(grid, rng)
        p = sample_shortest_path(grid, i, j, rng)
        lines.append(f"{grid.map_id}\t{i.token}\t{j.token}\t{answer_tokens(p)}")
    while len(lines) < 70:
        i, j = random_pair(grid, rng)
        if shortest_distance(grid, i, j) > 12:
            continue
        p = sample_shortest_path(grid, i, j, rng)
        nodes = p.nodes(grid)
        spot = next((k for k, n in enumerate(nodes) if n.x < grid.width - 1 and "E" in [d.token for d, _ in grid.adjacency[grid.cell_of(n)].items()]), None)
        if spot is None:
            continue
        moves = [m.token for m in p.moves]
        eastback = moves[:spot] + ["E", "W"] + moves[spot:]
        completion = " ".join([i.token] + eastback + [j.token])
        if verify_completion(grid, p.query, completion).outcome is not VerificationClass.NON_SHORTEST:
            continue
        lines.append(f"{grid.map_id}\t{i.token}\t{j.token}\t{completion}")
    while len(lines) < 90:
        i, j = random_pair(grid, rng)
        if shortest_distance(grid, i, j) < 2:
            continue
        p = sample_shortest_path(grid, i, j, rng)
        moves = [m.token for m in p.moves][:-1]
        lines.append(f"{grid.map_id}\t{i.token}\t{j.token}\t" + " ".join([i.token] + moves + [j.token]))
    while len(lines) < 100:
        i, j = random_pair(grid, rng)
        lines.append(f"{grid.map_id}\t{i.token}\t{j.token}\tnot a path at all")
    rows, summary = batch_verify(registry_pair, lines)
    assert summary["classes"] == {**{c.value: 0 for c in VerificationClass}, **want}
    out = tmp_path / "results.ndjson"
    write_results(rows, out)
    parsed = [json.loads(line) for line in out.read_text().splitlines()]
    assert parsed == rows
    assert list(parsed[0].keys()) == ["idx", "class", "reward", "gen_len", "shortest_len"]


def test_batch_verify_empty_input(registry_pair):
    rows, summary = batch_verify(registry_pair, [])
    assert rows == []
    assert summary["total"] == 0
    assert all(v == 0 for v in summary["classes"].values())


def test_batch_verify_bad_lines_become_malformed(registry_pair):
    lines = [
        "not\ta\tline",
        "m99\tx\ty\tz",
        "m0\tnope\talso-nope\tE E",
    ]
    rows, _ = batch_verify(registry_pair, lines)
    assert [r["class"] for r in rows] == ["Malformed"] * 3
    assert all(r["reward"] == 0 for r in rows)


def test_fold_malformed_flag(registry_pair):
    rows, _ = batch_verify(registry_pair, ["junk"], fold_malformed=True)
    assert rows[0]["class"] == "InvalidMove"


def test_verify_line_matches_verify_completion(sparse_6x6, registry_pair):
    rng = random.Random(10)
    i, j = random_pair(sparse_6x6, rng)
    path = sample_shortest_path(sparse_6x6, i, j, rng)
    via_line = verify_line(registry_pair, f"m0\t{i.token}\t{j.token}\t{answer_tokens(path)}")
    direct = verify_completion(sparse_6x6, path.query, answer_tokens(path))
    assert via_line == direct
