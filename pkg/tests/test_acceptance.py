"""Release gate: every check here must pass at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.  Model outputs are simulated with oracle-derived fixtures; no
trainer is required.
"""

import json
import math
import random
import time

import pytest

from soplab.dataset import (
    DatasetSpec,
    build_sft_dataset,
    decode_record,
    round_half_up,
    split_nodes,
    train_pool_size,
)
from soplab.evaluation import (
    OutcomeRow,
    compose_probability,
    decomposition_stats,
    select_candidates,
)
from soplab.gridmap import MapRegistry, generate_map
from soplab.pathfind import (
    count_shortest_paths,
    enumerate_shortest_paths,
    sample_shortest_path,
    shortest_distance,
)
from soplab.service import DistanceCache, RewardService
from soplab.verifier import VerificationClass, verify_completion

from oracles import enumerate_shortest_move_sequences

pytestmark = pytest.mark.acceptance


def ok(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


def answer(path, eos=True) -> str:
    q = path.query
    toks = [q.start.token] + [m.token for m in path.moves] + [q.end.token]
    if eos:
        toks.append("</s>")
    return " ".join(toks)


def test_oracle_equivalence_on_seeded_maps():
    """count/sample vs exhaustive enumeration, all pairs, 10 maps, < 30 s."""
    started = time.monotonic()
    shapes = [(5, 5), (6, 6), (7, 7), (7, 6), (6, 5)]
    sparsities = [0.25, 0.5, 0.75, 0.6, 0.4]
    checked_pairs = 0
    for index in range(10):
        w, h = shapes[index % 5]
        grid = generate_map(w, h, sparsities[index % 5], seed=1000 + index)
        rng = random.Random(index)
        for a in range(grid.n_cells):
            start = grid.node_by_cell(a)
            for b in range(grid.n_cells):
                if a == b:
                    continue
                end = grid.node_by_cell(b)
                oracle = enumerate_shortest_move_sequences(grid, a, b)
                assert count_shortest_paths(grid, start, end) == len(oracle)
                sampled = sample_shortest_path(grid, start, end, rng)
                assert tuple(m.token for m in sampled.moves) in set(oracle)
                checked_pairs += 1
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"oracle equivalence took {elapsed:.1f}s"
    assert checked_pairs == 13_608  # all ordered pairs over the ten maps
    ok(f"oracle-equivalence ({checked_pairs} pairs in {elapsed:.1f}s)")


def test_analytic_corner_counts():
    """Full n x m grid corner-to-corner counts equal the binomial, exactly."""
    for n in range(2, 7):
        for m in range(2, 7):
            grid = generate_map(n, m, 0.0, seed=1)
            count = count_shortest_paths(grid, grid.node_at(0, 0), grid.node_at(n - 1, m - 1))
            assert count == math.comb((n - 1) + (m - 1), n - 1)
    ok("analytic-counts")


def _build_taxonomy_fixture():
    """400 completions, 100 per class, by perturbing oracle paths."""
    grid = generate_map(10, 10, 0.0, seed=2000)  # full grid: detours always legal
    rng = random.Random(2000)
    fixture = []  # (query, completion, expected class)

    def pair(min_dist=2):
        while True:
            a, b = rng.sample(range(grid.n_cells), 2)
            i, j = grid.node_by_cell(a), grid.node_by_cell(b)
            if shortest_distance(grid, i, j) >= min_dist:
                return i, j

    while sum(1 for _, _, c in fixture if c is VerificationClass.SUCCESS) < 100:
        i, j = pair()
        path = sample_shortest_path(grid, i, j, rng)
        fixture.append((path.query, answer(path), VerificationClass.SUCCESS))

    while sum(1 for _, _, c in fixture if c is VerificationClass.NON_SHORTEST) < 100:
        i, j = pair()
        path = sample_shortest_path(grid, i, j, rng)
        nodes = path.nodes(grid)
        spots = [k for k, n in enumerate(nodes) if n.x < grid.width - 1]
        spot = rng.choice(spots)
        moves = [m.token for m in path.moves]
        detoured = moves[:spot] + ["E", "W"] + moves[spot:]
        completion = " ".join([i.token] + detoured + [j.token, "</s>"])
        fixture.append((path.query, completion, VerificationClass.NON_SHORTEST))

    while sum(1 for _, _, c in fixture if c is VerificationClass.NOT_REACHED) < 100:
        i, j = pair(min_dist=3)
        path = sample_shortest_path(grid, i, j, rng)
        moves = [m.token for m in path.moves][: -rng.randrange(1, 3)]
        completion = " ".join([i.token] + moves + [j.token, "</s>"])
        fixture.append((path.query, completion, VerificationClass.NOT_REACHED))

    while sum(1 for _, _, c in fixture if c is VerificationClass.INVALID_MOVE) < 100:
        i, j = pair()
        path = sample_shortest_path(grid, i, j, rng)
        nodes = path.nodes(grid)
        moves = [m.token for m in path.moves]
        # walk off the grid at the first boundary node along the path
        spot, bad = None, None
        for k, node in enumerate(nodes[:-1]):
            if node.x == grid.width - 1:
                spot, bad = k, "E"
                break
            if node.y == grid.height - 1:
                spot, bad = k, "N"
                break
            if node.x == 0:
                spot, bad = k, "W"
                break
            if node.y == 0:
                spot, bad = k, "S"
                break
        if spot is None:
            continue
        broken = moves[:spot] + [bad] + moves[spot:]
        completion = " ".join([i.token] + broken + [j.token, "</s>"])
        fixture.append((path.query, completion, VerificationClass.INVALID_MOVE))

    return grid, fixture


def test_verifier_taxonomy_fixture():
    """Constructed 400-completion fixture (100 per class) classifies exactly as built."""
    grid, fixture = _build_taxonomy_fixture()
    from collections import Counter

    by_class = Counter(expected for _, _, expected in fixture)
    assert by_class == {
        VerificationClass.SUCCESS: 100,
        VerificationClass.NON_SHORTEST: 100,
        VerificationClass.NOT_REACHED: 100,
        VerificationClass.INVALID_MOVE: 100,
    }
    assert sum(by_class.values()) == 400
    for query, completion, expected in fixture:
        result = verify_completion(grid, query, completion)
        assert result.outcome is expected, (completion, expected, result)
        assert result.reward == (1 if expected is VerificationClass.SUCCESS else 0)
    ok("verifier-taxonomy (400 completions, 100 per class)")


def test_dataset_controls_grid():
    """27 (coverage, diversity, budget) combinations on a 20 x 16 map."""
    grid = generate_map(20, 16, 0.5, seed=11)
    split = split_nodes(grid, 0.8, seed=11)
    registry = MapRegistry([grid])
    n_nodes = len(grid.nodes)
    combos = 0
    for coverage in (0.05, 0.2, 0.8):
        for diversity in (1, 4, 32):
            for budget in (0.05, 0.2, 0.6):
                spec = DatasetSpec(
                    map_id=grid.map_id,
                    budget_fraction=budget,
                    coverage=coverage,
                    diversity=diversity,
                    length_min=1,
                    length_max=20,
                    seed=900 + combos,
                )
                records, manifest = build_sft_dataset(grid, split, spec)
                lines = [r.line for r in records]
                # zero duplicates
                assert len(set(lines)) == len(lines)
                # measured coverage within one-node rounding of the target
                target_nodes = round_half_up(coverage * n_nodes)
                assert abs(manifest.nodes_in_questions - target_nodes) <= 1, (
                    coverage,
                    diversity,
                    budget,
                    manifest.nodes_in_questions,
                )
                # measured diversity equals the setting where the pool permits
                if "diversity_shortfall" not in manifest.flags:
                    assert manifest.diversity_measured == diversity
                else:
                    assert manifest.diversity_measured <= diversity
                # every answer re-verifies as a shortest path
                for line in lines:
                    record = decode_record(line, registry, verify=False)
                    result = verify_completion(
                        grid, record.query, " ".join(line.split()[4:])
                    )
                    assert result.outcome is VerificationClass.SUCCESS
                combos += 1
    assert combos == 27
    ok("dataset-controls (27 combinations)")


def test_decomposition_identity_and_published_value():
    """Identity to 1e-12 on 10,000 random tables; published column reproduces."""
    rng = random.Random(3000)
    for _ in range(10_000):
        n = rng.randrange(1, 40)
        rows = [
            OutcomeRow(rng.random() < 0.5, rng.random() < 0.8, rng.random() < 0.8, (0, 9))
            for _ in range(n)
        ]
        stats = decomposition_stats(rows)[(0, 9)]
        if stats["p_long_given_both"] is None:
            continue
        recomposed = compose_probability(
            stats["p_long_given_both"], stats["p_both"], stats["p_long_not_both"]
        )
        assert abs(recomposed - stats["p_long"]) < 1e-12
    assert abs(compose_probability(0.589, 0.796, 0.061) - 0.530) <= 0.001
    ok("decomposition-identity (10,000 tables, 1e-12; published value 0.530)")


def test_selection_determinism_crafted_multisets():
    """Hand-computed majority/shortest answers on 20 crafted candidate sets."""
    cases = [
        # (candidates, expected majority index, expected shortest index)
        (["A"], 0, 0),
        (["A", "A", "A"], 0, 0),
        (["A", "B", "A"], 0, 0),
        (["B", "A", "A"], 1, 0),
        (["A", "B"], 0, 0),
        (["B", "A", "B", "A"], 0, 0),
        (["a b", "c", "d e f"], 0, 1),
        (["a b c", "a b", "a"], 0, 2),
        (["x y", "x y", "z"], 0, 2),
        (["p q r", "s t", "s t", "p q r"], 0, 1),
        (["long seq one", "long seq one", "s"], 0, 2),
        (["A", "B", "B"], 1, 0),
        (["C", "C", "B", "B", "A"], 0, 0),
        (["w x y z", "w x", "w x y", "w x"], 1, 1),
        (["E N", "E N E", "E N"], 0, 0),
        (["one two three four", "five six", "seven", "eight nine ten"], 0, 2),
        (["A A", "B", "A A", "B", "B"], 1, 1),
        (["m", "mm nn", "m"], 0, 0),
        (["k l m", "k l m", "k l", "k l"], 0, 2),
        (["z", "y", "x", "w", "v", "z"], 0, 0),
    ]
    assert len(cases) == 20
    for candidates, want_majority, want_shortest in cases:
        assert select_candidates(candidates, "majority") == want_majority, candidates
        assert select_candidates(candidates, "shortest") == want_shortest, candidates
        assert select_candidates(candidates, "greedy-first") == 0
    ok("selection-determinism (20 multisets)")


def test_end_to_end_determinism(tmp_path, monkeypatch):
    """Identical seeds give byte-identical files across two full CLI runs."""
    from soplab.cli import run_cli

    artifacts = [
        "m0.json",
        "m1.json",
        "registry.json",
        "split.json",
        "corpus.txt",
        "train.txt",
        "train_aug.txt",
        "eval.tsv",
        "completions.tsv",
        "results.ndjson",
        "report/report.json",
        "report/sr_by_group.csv",
        "report/error_distribution.csv",
    ]

    def one_run(workdir):
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        assert run_cli(["gen-map", "--width", "12", "--height", "10", "--sparsity", "0.5",
                        "--seed", "5", "--out", "m0.json"]) == 0
        assert run_cli(["gen-map", "--width", "9", "--height", "9", "--sparsity", "0.3",
                        "--seed", "6", "--map-index", "1", "--out", "m1.json"]) == 0
        assert run_cli(["registry", "--maps", "m0.json", "m1.json", "--out", "registry.json"]) == 0
        assert run_cli(["split", "--map", "m0.json", "--train-fraction", "0.8",
                        "--seed", "7", "--out", "split.json"]) == 0
        assert run_cli(["gen-pretrain", "--map-registry", "registry.json", "--walks", "50",
                        "--min-len", "24", "--max-len", "32", "--seed", "8", "--out", "corpus.txt"]) == 0
        assert run_cli(["gen-sft", "--map", "m0.json", "--split", "split.json",
                        "--budget", "0.05", "--coverage", "0.6", "--diversity", "4",
                        "--lmin", "1", "--lmax", "10", "--seed", "9", "--out", "train.txt"]) == 0
        assert run_cli(["augment-length", "--map", "m0.json", "--split", "split.json",
                        "--in", "train.txt", "--targets", "12", "--fraction", "0.01",
                        "--seed", "10", "--out", "train_aug.txt"]) == 0
        assert run_cli(["build-eval", "--map", "m0.json", "--split", "split.json",
                        "--groups", "1-5,5-10", "--n", "30", "--nodes", "holdout",
                        "--exclude", "train.txt", "--seed", "11", "--out", "eval.tsv"]) == 0
        # deterministic "model": the oracle sampler with a fixed seed
        from soplab.gridmap import read_map_file

        grid = read_map_file("m0.json")
        rng = random.Random(12)
        with open("completions.tsv", "w", encoding="utf-8") as fh:
            for line in open("eval.tsv", encoding="utf-8"):
                map_id, start_tok, end_tok, _, _ = line.split("\t")
                i, j = grid.node_by_token(start_tok), grid.node_by_token(end_tok)
                path = sample_shortest_path(grid, i, j, rng)
                fh.write(f"{map_id}\t{start_tok}\t{end_tok}\t{answer(path)}\n")
        assert run_cli(["verify", "--map-registry", "registry.json", "--in", "completions.tsv",
                        "--out", "results.ndjson"]) == 0
        assert run_cli(["report", "--results", "results.ndjson", "--groups", "1-5,5-10",
                        "--label", "oracle", "--outdir", "report"]) == 0
        return {name: (workdir / name).read_bytes() for name in artifacts}

    run_a = one_run(tmp_path / "a")
    run_b = one_run(tmp_path / "b")
    for name in artifacts:
        assert run_a[name] == run_b[name], f"{name} differs between identical runs"
    ok(f"determinism-end-to-end ({len(artifacts)} artifacts byte-identical)")


def _throughput_requests(grid, n_queries=1250, rollouts=8):
    """GRPO-shaped request mix: each query repeated per rollout with varied answers."""
    rng = random.Random(4000)
    requests = []
    for q in range(n_queries):
        a, b = rng.sample(range(grid.n_cells), 2)
        i, j = grid.node_by_cell(a), grid.node_by_cell(b)
        path = sample_shortest_path(grid, i, j, rng)
        moves = [m.token for m in path.moves]
        for r in range(rollouts):
            roll = rng.random()
            if roll < 0.45:
                completion = " ".join([i.token] + moves + [j.token, "</s>"])
            elif roll < 0.75 and len(moves) > 1:
                completion = " ".join([i.token] + moves[:-1] + [j.token, "</s>"])
            elif roll < 0.9:
                completion = " ".join([i.token] + moves + ["Q", j.token])
            else:
                completion = "asdf qwer"
            requests.append(
                json.dumps(
                    {
                        "id": f"{q}-{r}",
                        "map_id": grid.map_id,
                        "start_token": i.token,
                        "end_token": j.token,
                        "completion": completion,
                    },
                    separators=(",", ":"),
                )
            )
    rng.shuffle(requests)
    return requests


def test_service_transparency_and_throughput():
    """Cache on/off byte-identical over 10,000 requests; >= 10,000 verifications/s."""
    grid = generate_map(50, 40, 0.5, seed=101)
    registry = MapRegistry([grid])
    requests = _throughput_requests(grid)
    assert len(requests) == 10_000

    cached = RewardService(registry, DistanceCache(enabled=True))
    started = time.monotonic()
    responses_cached = [cached.handle_line(line) for line in requests]
    elapsed = time.monotonic() - started
    rate = len(requests) / elapsed

    uncached = RewardService(registry, DistanceCache(enabled=False))
    responses_uncached = [uncached.handle_line(line) for line in requests]

    assert responses_cached == responses_uncached
    assert rate >= 10_000, f"sustained only {rate:.0f} verifications/s"
    ok(f"service-transparency-throughput ({rate:.0f}/s on {len(grid.nodes)} nodes)")


def test_length_distribution_stability():
    """On a 50 x 40, |V|=2000 map, histogram mean varies < 5% across coverage."""
    grid = generate_map(50, 40, 0.5, seed=101)
    assert len(grid.nodes) == 2000
    split = split_nodes(grid, 0.8, seed=101)
    pool = train_pool_size(grid, split, 1, 20)
    budget = 2000 / pool  # ~2000 records; below every coverage's support size
    stats = {}
    for coverage in (0.05, 0.2, 0.8):
        spec = DatasetSpec(
            map_id=grid.map_id,
            budget_fraction=budget,
            coverage=coverage,
            diversity=32,
            length_min=1,
            length_max=20,
            seed=5000,
        )
        records, manifest = build_sft_dataset(grid, split, spec)
        assert manifest.records > 1000
        stats[coverage] = (manifest.length_mean, manifest.length_std)
    means = [m for m, _ in stats.values()]
    spread = (max(means) - min(means)) / (sum(means) / len(means))
    assert spread < 0.05, f"means {means} vary by {100 * spread:.1f}%"
    ok(
        "length-distribution-stability (means "
        + ", ".join(f"{c}: {m:.2f}" for c, (m, _) in stats.items())
        + f"; spread {100 * spread:.1f}%)"
    )
