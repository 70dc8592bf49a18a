"""Dataset construction: node splits, SFT corpora under budget/coverage/diversity
controls, pretraining random-walk corpora, grouped evaluation sets, exact-length
augmentation, and the token-line record format.

Budget accounting: the record budget is ``round(B * |train-region pool|)``
where the pool is every directed pair of training nodes whose shortest
distance lies in the length bounds.  That denominator is independent of the
coverage and diversity settings, so one budget fraction yields the same
record total across (c, d) conditions.  Questions are then drawn from the
coverage-restricted candidate pool: each used start node gets exactly
``min(d, available)`` distinct endpoints, and endpoints are chosen
coverage-aware so that the union of start and end nodes spans the coverage
subset whenever the eligibility graph permits.

All fractional counts round half-up.  Generation is organized around
per-start RNG streams derived from (seed, purpose, node id), and output
ordering is canonical (start id, end id, solution index), so files do not
depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, DecodeError, ParameterError
from .gridmap import (
    BOS_TOKEN,
    EOS_TOKEN,
    SEP_TOKEN,
    Direction,
    GridMap,
    MapRegistry,
    NodeId,
)
from .pathfind import (
    Path,
    PathQuery,
    count_shortest_paths,
    distance_field,
    random_walk,
    sample_distinct_shortest_paths,
    sample_shortest_path,
    shortest_distance,
)

log = logging.getLogger(__name__)

_DIRECTION_BY_TOKEN = {d.token: d for d in Direction}


def round_half_up(x: float) -> int:
    """Deterministic rounding used for every fractional count (0.5 rounds up)."""
    return int(math.floor(x + 0.5))


def derive_seed(master: int, *parts) -> int:
    """A 64-bit child seed from a master seed and a stream label."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master).encode())
    for part in parts:
        h.update(b"\x1f" + str(part).encode())
    return int.from_bytes(h.digest(), "big")


def _rng(master: int, *parts) -> random.Random:
    return random.Random(derive_seed(master, *parts))


# -- node splits -------------------------------------------------------------


@dataclass(frozen=True)
class NodeSplit:
    """Seeded partition of a map's nodes into training and holdout sets."""

    map_id: str
    train_fraction: float
    seed: int
    train_uids: tuple[int, ...]
    holdout_uids: tuple[int, ...]

    def train_nodes(self, grid: GridMap) -> list[NodeId]:
        by_uid = {n.uid: n for n in grid.nodes}
        return [by_uid[u] for u in self.train_uids]

    def holdout_nodes(self, grid: GridMap) -> list[NodeId]:
        by_uid = {n.uid: n for n in grid.nodes}
        return [by_uid[u] for u in self.holdout_uids]


def split_nodes(grid: GridMap, train_fraction: float, seed: int) -> NodeSplit:
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must lie in (0,1), got {train_fraction}")
    nodes = sorted(grid.nodes, key=lambda n: n.uid)
    k = round_half_up(train_fraction * len(nodes))
    rng = _rng(seed, "split", grid.map_id)
    train = sorted(n.uid for n in rng.sample(nodes, k))
    train_set = set(train)
    holdout = tuple(n.uid for n in nodes if n.uid not in train_set)
    return NodeSplit(grid.map_id, train_fraction, seed, tuple(train), holdout)


def split_to_dict(split: NodeSplit) -> dict:
    return {
        "map_id": split.map_id,
        "train_fraction": split.train_fraction,
        "seed": split.seed,
        "train": list(split.train_uids),
        "holdout": list(split.holdout_uids),
    }


def split_from_dict(data: dict) -> NodeSplit:
    return NodeSplit(
        data["map_id"],
        data["train_fraction"],
        data["seed"],
        tuple(data["train"]),
        tuple(data["holdout"]),
    )


# -- record encoding ---------------------------------------------------------


@dataclass(frozen=True)
class Record:
    """One training line: a query, a verified shortest path, and its token form."""

    query: PathQuery
    path: Path
    line: str


def encode_record(record_or_path: Record | Path) -> str:
    path = record_or_path.path if isinstance(record_or_path, Record) else record_or_path
    q = path.query
    tokens = [BOS_TOKEN, q.start.token, q.end.token, SEP_TOKEN, q.start.token]
    tokens.extend(m.token for m in path.moves)
    tokens.append(q.end.token)
    tokens.append(EOS_TOKEN)
    return " ".join(tokens)


def _make_record(path: Path) -> Record:
    return Record(path.query, path, encode_record(path))


def _node_of_token(registry: MapRegistry, token: str) -> tuple[GridMap, NodeId]:
    head, _, _ = token.partition("_")
    if head not in registry:
        raise DecodeError(-1, f"unknown node token {token!r}")
    grid = registry.map_by_id(head)
    return grid, grid.node_by_token(token)


def decode_record(line: str, registry: MapRegistry, verify: bool = True) -> Record:
    """Invert :func:`encode_record`; raise DecodeError at the first bad token.

    With ``verify`` the decoded path must also be a shortest path, so a
    structurally plausible but wrong line can never decode silently.
    """
    tokens = line.split()
    if not tokens:
        raise DecodeError(0, "empty line")

    def expect(pos: int, what: str) -> str:
        if pos >= len(tokens):
            raise DecodeError(len(tokens), f"line ended, expected {what}")
        return tokens[pos]

    if expect(0, BOS_TOKEN) != BOS_TOKEN:
        raise DecodeError(0, f"expected {BOS_TOKEN}")
    start_tok = expect(1, "start node token")
    end_tok = expect(2, "end node token")
    try:
        grid, start = _node_of_token(registry, start_tok)
    except Exception as exc:
        raise DecodeError(1, f"bad start token: {exc}") from None
    try:
        end = grid.node_by_token(end_tok)
    except Exception:
        raise DecodeError(2, f"end token {end_tok!r} not in map {grid.map_id}") from None
    if start == end:
        raise DecodeError(2, "start and end tokens coincide")
    if expect(3, SEP_TOKEN) != SEP_TOKEN:
        raise DecodeError(3, f"expected {SEP_TOKEN}")
    if expect(4, "start token echo") != start_tok:
        raise DecodeError(4, "expected start token echo")
    if len(tokens) < 8:
        raise DecodeError(len(tokens), "line ended before a complete answer")
    if tokens[-1] != EOS_TOKEN:
        raise DecodeError(len(tokens) - 1, f"expected {EOS_TOKEN}")
    if tokens[-2] != end_tok:
        raise DecodeError(len(tokens) - 2, "expected end token before terminator")
    moves: list[Direction] = []
    for pos in range(5, len(tokens) - 2):
        move = _DIRECTION_BY_TOKEN.get(tokens[pos])
        if move is None:
            raise DecodeError(pos, f"expected a direction token, got {tokens[pos]!r}")
        moves.append(move)
    query = PathQuery(grid.map_id, start, end)
    path = Path(query, tuple(moves))
    cell = grid.cell_of(start)
    for k, move in enumerate(moves):
        nxt = grid.adjacency[cell].get(move)
        if nxt is None:
            raise DecodeError(5 + k, f"move {move.token} is not an edge here")
        cell = nxt
    if grid.node_by_cell(cell) != end:
        raise DecodeError(len(tokens) - 2, "moves do not reach the end node")
    if verify and len(moves) != shortest_distance(grid, start, end):
        raise DecodeError(len(tokens) - 2, "path is not a shortest path")
    return Record(query, path, " ".join(tokens))


# -- dataset spec and manifest ------------------------------------------------

ALLOCATION_MODES = ("questions-first", "fixed-answers")


@dataclass(frozen=True)
class DatasetSpec:
    """Generation controls for one SFT dataset."""

    map_id: str
    budget_fraction: float
    coverage: float
    diversity: int
    answers_per_question: int = 1
    length_min: int = 1
    length_max: int = 20
    allocation: str = "questions-first"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ParameterError(f"budget_fraction must lie in (0,1], got {self.budget_fraction}")
        if not 0.0 < self.coverage <= 1.0:
            raise ParameterError(f"coverage must lie in (0,1], got {self.coverage}")
        if self.diversity < 1:
            raise ParameterError(f"diversity must be at least 1, got {self.diversity}")
        if self.answers_per_question < 1:
            raise ParameterError("answers_per_question must be at least 1")
        if not 1 <= self.length_min <= self.length_max:
            raise ParameterError(f"need 1 <= length_min <= length_max, got [{self.length_min},{self.length_max}]")
        if self.allocation not in ALLOCATION_MODES:
            raise ParameterError(f"allocation must be one of {ALLOCATION_MODES}")
        if self.allocation == "questions-first" and self.answers_per_question != 1:
            raise ParameterError("questions-first allocation fixes answers_per_question at 1")

    def to_dict(self) -> dict:
        return {
            "map_id": self.map_id,
            "budget_fraction": self.budget_fraction,
            "coverage": self.coverage,
            "diversity": self.diversity,
            "answers_per_question": self.answers_per_question,
            "length_min": self.length_min,
            "length_max": self.length_max,
            "allocation": self.allocation,
            "seed": self.seed,
        }


@dataclass
class DatasetManifest:
    """Counts recomputed from the emitted lines, never from the spec."""

    spec: dict
    records: int
    target_records: int
    distinct_questions: int
    distinct_starts: int
    nodes_in_questions: int
    coverage_subset_size: int
    coverage_measured: float
    diversity_measured: float
    pool_budget_pairs: int
    pool_candidate_pairs: int
    length_mean: float
    length_std: float
    length_histogram: dict[int, int]
    flags: dict[str, int] = field(default_factory=dict)
    digest: str = ""

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["length_histogram"] = {str(k): v for k, v in sorted(self.length_histogram.items())}
        return out


def dataset_digest(lines: Sequence[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def measure_lines(lines: Sequence[str]) -> dict:
    """Recount coverage/diversity/length statistics from encoded lines."""
    questions: set[tuple[str, str]] = set()
    starts: set[str] = set()
    nodes: set[str] = set()
    lengths: list[int] = []
    for line in lines:
        tokens = line.split()
        start_tok, end_tok = tokens[1], tokens[2]
        questions.add((start_tok, end_tok))
        starts.add(start_tok)
        nodes.add(start_tok)
        nodes.add(end_tok)
        lengths.append(len(tokens) - 7)
    histogram: dict[int, int] = {}
    for length in lengths:
        histogram[length] = histogram.get(length, 0) + 1
    arr = np.asarray(lengths, dtype=np.float64)
    return {
        "records": len(lines),
        "distinct_questions": len(questions),
        "distinct_starts": len(starts),
        "nodes_in_questions": len(nodes),
        "length_mean": float(arr.mean()) if len(lines) else 0.0,
        "length_std": float(arr.std()) if len(lines) else 0.0,
        "length_histogram": histogram,
    }


# -- SFT dataset construction --------------------------------------------------


def _pairs_in_range(grid: GridMap, start: NodeId, cells_mask: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Cells within [lo, hi] of ``start`` that are also in ``cells_mask``."""
    dist = distance_field(grid, start)
    mask = (dist >= lo) & (dist <= hi) & cells_mask
    return np.nonzero(mask)[0]


def train_pool_size(grid: GridMap, split: NodeSplit, length_min: int, length_max: int) -> int:
    """Directed train-region pairs with shortest distance in bounds (budget denominator)."""
    train = split.train_nodes(grid)
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[[grid.cell_of(n) for n in train]] = True
    total = 0
    for node in train:
        dist = distance_field(grid, node)
        total += int(np.count_nonzero((dist >= length_min) & (dist <= length_max) & mask))
    return total


def _select_endpoints(
    grid: GridMap,
    selected: list[NodeId],
    group_size: dict[int, int],
    eligible: dict[int, list[NodeId]],
    vc_uids: set[int],
    seed: int,
) -> tuple[dict[int, list[NodeId]], int]:
    """Pick each start's endpoints, preferring nodes of the coverage subset that
    no question touches yet.  Returns per-start endpoint lists plus the count of
    coverage-subset nodes left uncovered (0 when the eligibility graph permits)."""
    eligible_sets = {n.uid: {e.uid for e in eligible[n.uid]} for n in selected}
    slots = {n.uid: group_size[n.uid] for n in selected}
    chosen: dict[int, list[NodeId]] = {n.uid: [] for n in selected}
    chosen_sets: dict[int, set[int]] = {n.uid: set() for n in selected}
    covered = {n.uid for n in selected}
    by_uid = {n.uid: n for n in grid.nodes}

    reachable_from: dict[int, list[int]] = {}
    for u in sorted(vc_uids - covered):
        reachable_from[u] = [n.uid for n in selected if u in eligible_sets[n.uid]]
    shortfall = 0
    cover_rng = _rng(seed, "cover", grid.map_id)
    # scarcest nodes first so a node's only eligible start is never full;
    # the start itself is drawn uniformly so forced coverage does not skew
    # the endpoint distance distribution
    for u in sorted(reachable_from, key=lambda u: (len(reachable_from[u]), u)):
        candidates = [s for s in reachable_from[u] if slots[s] > 0 and u not in chosen_sets[s]]
        if not candidates:
            shortfall += 1
            continue
        pick = cover_rng.choice(candidates)
        chosen[pick].append(by_uid[u])
        chosen_sets[pick].add(u)
        slots[pick] -= 1

    for node in selected:
        uid = node.uid
        if slots[uid] == 0:
            continue
        rest = [e for e in eligible[uid] if e.uid not in chosen_sets[uid]]
        rng = _rng(seed, "endpoints", uid)
        for e in rng.sample(rest, slots[uid]):
            chosen[uid].append(e)
            chosen_sets[uid].add(e.uid)
        slots[uid] = 0
    return chosen, shortfall


def build_sft_dataset(
    grid: GridMap, split: NodeSplit, spec: DatasetSpec
) -> tuple[list[Record], DatasetManifest]:
    """Build one SFT dataset under the spec's budget/coverage/diversity controls."""
    spec.validate()
    if spec.map_id != grid.map_id or split.map_id != grid.map_id:
        raise ParameterError("spec, split, and map must name the same map")
    nodes_all = grid.nodes
    train = split.train_nodes(grid)
    n_vc = round_half_up(spec.coverage * len(nodes_all))
    if n_vc < 2:
        raise ParameterError(f"coverage {spec.coverage} selects {n_vc} (<2) nodes")
    if n_vc > len(train):
        raise ParameterError(
            f"coverage {spec.coverage} needs {n_vc} nodes but only {len(train)} are in the train split"
        )
    train_sorted = sorted(train, key=lambda n: n.uid)
    coverage_subset = sorted(
        _rng(spec.seed, "coverage", grid.map_id).sample(train_sorted, n_vc),
        key=lambda n: n.uid,
    )
    vc_uids = {n.uid for n in coverage_subset}
    vc_mask = np.zeros(grid.n_cells, dtype=bool)
    vc_mask[[grid.cell_of(n) for n in coverage_subset]] = True

    eligible: dict[int, list[NodeId]] = {}
    pool_candidate = 0
    for node in coverage_subset:
        cells = _pairs_in_range(grid, node, vc_mask, spec.length_min, spec.length_max)
        partners = [grid.node_by_cell(int(c)) for c in cells if grid.node_by_cell(int(c)) != node]
        eligible[node.uid] = partners
        pool_candidate += len(partners)
    if pool_candidate == 0:
        raise CapacityError(
            "empty candidate pool: no coverage-subset pair has a shortest distance "
            f"in [{spec.length_min},{spec.length_max}]"
        )

    pool_budget = train_pool_size(grid, split, spec.length_min, spec.length_max)
    target = round_half_up(spec.budget_fraction * pool_budget)
    if target < 1:
        raise CapacityError("budget rounds to zero records; raise budget_fraction")

    group_size = {uid: min(spec.diversity, len(partners)) for uid, partners in eligible.items()}
    starts_with_pairs = [n for n in coverage_subset if group_size[n.uid] > 0]
    q_total = sum(group_size[n.uid] for n in starts_with_pairs)

    answers = spec.answers_per_question
    start_order = list(starts_with_pairs)
    _rng(spec.seed, "groups", grid.map_id).shuffle(start_order)
    if spec.allocation == "fixed-answers" or target >= q_total:
        selected = start_order
    else:
        # questions-first below the support size: take whole start-groups
        # until the running total is closest to target, keeping measured
        # diversity exactly at the requested level
        selected = []
        running = 0
        for node in start_order:
            size = group_size[node.uid]
            if selected and abs(running + size - target) >= abs(running - target):
                break
            selected.append(node)
            running += size

    diversity_shortfall = sum(
        1 for n in selected if len(eligible[n.uid]) < spec.diversity
    )
    chosen_endpoints, coverage_shortfall = _select_endpoints(
        grid, selected, group_size, eligible, vc_uids, spec.seed
    )
    questions = [
        (start, end)
        for start in sorted(selected, key=lambda n: n.uid)
        for end in sorted(chosen_endpoints[start.uid], key=lambda n: n.uid)
    ]

    # answer targets per question
    counts = {
        (s.uid, e.uid): count_shortest_paths(grid, s, e) for s, e in questions
    }
    question_order = list(range(len(questions)))
    _rng(spec.seed, "answers", grid.map_id).shuffle(question_order)
    targets = {}
    budget_shortfall = 0
    if spec.allocation == "questions-first":
        for s, e in questions:
            targets[(s.uid, e.uid)] = 1
        leftover = target - len(questions)
        if leftover > 0:
            budget_shortfall = _spread_extra_answers(questions, question_order, counts, targets, leftover)
    else:
        # fixed answers per question; a deficit (fewer distinct solutions
        # than requested) frees budget that flows to additional questions,
        # never to extra answers beyond the requested count
        total = 0
        for idx in question_order:
            s, e = questions[idx]
            if total >= target:
                targets[(s.uid, e.uid)] = 0
                continue
            take = min(answers, counts[(s.uid, e.uid)], target - total)
            targets[(s.uid, e.uid)] = take
            total += take
        if total < target:
            budget_shortfall = target - total
        questions = [(s, e) for s, e in questions if targets[(s.uid, e.uid)] > 0]

    records: list[Record] = []
    for s, e in questions:
        want = targets[(s.uid, e.uid)]
        rng = _rng(spec.seed, "paths", s.uid, e.uid)
        if want == 1:
            paths = [sample_shortest_path(grid, s, e, rng)]
        else:
            paths = sample_distinct_shortest_paths(grid, s, e, want, rng)
        records.extend(_make_record(p) for p in paths)

    lines = [r.line for r in records]
    measured = measure_lines(lines)
    flags = {}
    if budget_shortfall:
        flags["budget_shortfall"] = budget_shortfall
    if coverage_shortfall:
        flags["coverage_shortfall"] = coverage_shortfall
    if diversity_shortfall:
        flags["diversity_shortfall"] = diversity_shortfall
    manifest = DatasetManifest(
        spec=spec.to_dict(),
        records=measured["records"],
        target_records=target,
        distinct_questions=measured["distinct_questions"],
        distinct_starts=measured["distinct_starts"],
        nodes_in_questions=measured["nodes_in_questions"],
        coverage_subset_size=n_vc,
        coverage_measured=measured["nodes_in_questions"] / len(nodes_all),
        diversity_measured=(
            measured["distinct_questions"] / measured["distinct_starts"]
            if measured["distinct_starts"]
            else 0.0
        ),
        pool_budget_pairs=pool_budget,
        pool_candidate_pairs=pool_candidate,
        length_mean=measured["length_mean"],
        length_std=measured["length_std"],
        length_histogram=measured["length_histogram"],
        flags=flags,
        digest=dataset_digest(lines),
    )
    return records, manifest


def _spread_extra_answers(
    questions: list[tuple[NodeId, NodeId]],
    question_order: list[int],
    counts: dict[tuple[int, int], int],
    targets: dict[tuple[int, int], int],
    leftover: int,
) -> int:
    """Round-robin +1 answers (distinct paths only) until the leftover budget is
    spent or every question's solution set is exhausted.  Returns the unspent part."""
    progress = True
    while leftover > 0 and progress:
        progress = False
        for idx in question_order:
            s, e = questions[idx]
            key = (s.uid, e.uid)
            if targets[key] < counts[key]:
                targets[key] += 1
                leftover -= 1
                progress = True
                if leftover == 0:
                    break
    return leftover


def write_dataset(lines_or_records: Sequence[str] | Sequence[Record], path: str | FilePath) -> str:
    lines = [
        item.line if isinstance(item, Record) else item for item in lines_or_records
    ]
    FilePath(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return dataset_digest(lines)


def read_dataset_lines(path: str | FilePath) -> list[str]:
    text = FilePath(path).read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip()]


def support_pairs(lines: Iterable[str]) -> set[tuple[str, str]]:
    """Distinct (start token, end token) pairs appearing in encoded lines."""
    out = set()
    for line in lines:
        tokens = line.split(None, 3)
        out.add((tokens[1], tokens[2]))
    return out


# -- pretraining corpus --------------------------------------------------------


def write_pretrain_corpus(
    registry: MapRegistry,
    path: str | FilePath,
    n_walks: int,
    min_len: int,
    max_len: int,
    seed: int,
    nodes_only: bool = False,
    sft_length_max: int | None = None,
) -> dict:
    """Stream a random-walk corpus: one interleaved node/direction line per walk.

    Walk lengths are uniform on [min_len, max_len], start nodes uniform over
    each walk's map, and maps take turns round-robin across the registry.
    """
    if n_walks < 1:
        raise ParameterError("n_walks must be at least 1")
    if not 1 <= min_len <= max_len:
        raise ParameterError(f"need 1 <= min_len <= max_len, got [{min_len},{max_len}]")
    if sft_length_max is not None and min_len <= sft_length_max:
        log.warning(
            "pretraining walks (min %d) are not longer than the fine-tuning length cap (%d); "
            "walk and answer distributions will overlap",
            min_len,
            sft_length_max,
        )
    h = hashlib.sha256()
    tokens_written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for w in range(n_walks):
            grid = registry.maps[w % len(registry.maps)]
            rng = _rng(seed, "walk", w)
            steps = rng.randint(min_len, max_len)
            start = grid.node_by_cell(rng.randrange(grid.n_cells))
            nodes, moves = random_walk(grid, start, steps, rng)
            if nodes_only:
                tokens = [n.token for n in nodes]
            else:
                tokens = [nodes[0].token]
                for move, node in zip(moves, nodes[1:]):
                    tokens.append(move.token)
                    tokens.append(node.token)
            line = " ".join(tokens)
            fh.write(line + "\n")
            h.update(line.encode("utf-8"))
            h.update(b"\n")
            tokens_written += len(tokens)
    return {
        "walks": n_walks,
        "min_len": min_len,
        "max_len": max_len,
        "nodes_only": nodes_only,
        "tokens": tokens_written,
        "digest": h.hexdigest(),
    }


# -- evaluation sets -------------------------------------------------------------


@dataclass
class EvalSets:
    """Per-group query lists plus, for short groups, the eligible-pair counts."""

    map_id: str
    groups: list[tuple[int, int]]
    queries: dict[tuple[int, int], list[PathQuery]]
    eligible: dict[tuple[int, int], int]
    requested: int

    def shortfalls(self) -> dict[tuple[int, int], int]:
        return {
            g: self.eligible[g]
            for g in self.groups
            if self.eligible[g] < self.requested
        }


def parse_groups(text: str) -> list[tuple[int, int]]:
    """Parse "0-10,10-20" into half-open (lo, hi] intervals."""
    groups = []
    for chunk in text.split(","):
        lo, _, hi = chunk.strip().partition("-")
        groups.append((int(lo), int(hi)))
    return validate_groups(groups)


def validate_groups(groups: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    out = sorted(groups)
    for lo, hi in out:
        if lo >= hi:
            raise ParameterError(f"group ({lo},{hi}] is empty")
    for (_, hi_a), (lo_b, _) in zip(out, out[1:]):
        if hi_a > lo_b:
            raise ParameterError("length groups must be disjoint")
    return out


def build_eval_sets(
    grid: GridMap,
    groups: Sequence[tuple[int, int]],
    n_per_group: int,
    seed: int,
    nodes: Sequence[NodeId] | None = None,
    exclude: set[tuple[int, int]] | None = None,
) -> EvalSets:
    """Sample ``n_per_group`` queries per length group, uniformly over eligible pairs.

    ``nodes`` restricts both endpoints (pass the holdout set for length-scaling
    sets on the training map; leave None on disjoint transfer maps).  ``exclude``
    drops (start uid, end uid) pairs, e.g. the training support.  Groups that
    cannot fill emit everything available and report the shortfall.
    """
    groups = validate_groups(groups)
    if n_per_group < 1:
        raise ParameterError("n_per_group must be at least 1")
    pool_nodes = sorted(nodes if nodes is not None else grid.nodes, key=lambda n: n.uid)
    exclude = exclude or set()
    group_of: dict[int, tuple[int, int]] = {}
    for lo, hi in groups:
        for d in range(lo + 1, hi + 1):
            group_of[d] = (lo, hi)
    rng = _rng(seed, "evalsets", grid.map_id)
    reservoir: dict[tuple[int, int], list[tuple[NodeId, NodeId]]] = {g: [] for g in groups}
    seen: dict[tuple[int, int], int] = {g: 0 for g in groups}
    for start in pool_nodes:
        dist = distance_field(grid, start)
        for end in pool_nodes:
            if end == start:
                continue
            g = group_of.get(int(dist[grid.cell_of(end)]))
            if g is None or (start.uid, end.uid) in exclude:
                continue
            seen[g] += 1
            if seen[g] <= n_per_group:
                reservoir[g].append((start, end))
            else:
                r = rng.randrange(seen[g])
                if r < n_per_group:
                    reservoir[g][r] = (start, end)
    queries = {
        g: [
            PathQuery(grid.map_id, s, e)
            for s, e in sorted(reservoir[g], key=lambda p: (p[0].uid, p[1].uid))
        ]
        for g in groups
    }
    return EvalSets(grid.map_id, list(groups), queries, dict(seen), n_per_group)


def write_eval_sets(sets: EvalSets, path: str | FilePath) -> None:
    """TSV: map_id, start token, end token, group lo, group hi."""
    lines = []
    for g in sets.groups:
        for q in sets.queries[g]:
            lines.append(f"{q.map_id}\t{q.start.token}\t{q.end.token}\t{g[0]}\t{g[1]}")
    FilePath(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_eval_sets(path: str | FilePath, registry: MapRegistry) -> list[tuple[PathQuery, tuple[int, int]]]:
    out = []
    for line in read_dataset_lines(path):
        map_id, start_tok, end_tok, lo, hi = line.split("\t")
        grid = registry.map_by_id(map_id)
        q = PathQuery(map_id, grid.node_by_token(start_tok), grid.node_by_token(end_tok))
        out.append((q, (int(lo), int(hi))))
    return out


# -- exact-length augmentation ----------------------------------------------------


def augment_with_length(
    records: Sequence[Record],
    grid: GridMap,
    split: NodeSplit,
    targets: Sequence[int],
    fraction: float,
    seed: int,
) -> list[Record]:
    """Append round(fraction*N) train-region records of each exact target length."""
    if fraction < 0:
        raise ParameterError("fraction must be non-negative")
    base = list(records)
    k = round_half_up(fraction * len(base))
    if k == 0:
        return base
    existing = {(r.query.start.uid, r.query.end.uid) for r in base}
    train = split.train_nodes(grid)
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[[grid.cell_of(n) for n in train]] = True
    added: list[Record] = []
    for target_len in targets:
        rng = _rng(seed, "augment", target_len)
        pool: list[tuple[NodeId, NodeId]] = []
        seen = 0
        for start in sorted(train, key=lambda n: n.uid):
            cells = _pairs_in_range(grid, start, mask, target_len, target_len)
            for c in cells:
                end = grid.node_by_cell(int(c))
                if (start.uid, end.uid) in existing:
                    continue
                seen += 1
                if len(pool) < k:
                    pool.append((start, end))
                else:
                    r = rng.randrange(seen)
                    if r < k:
                        pool[r] = (start, end)
        if seen == 0:
            raise CapacityError(f"no train-region pair has shortest distance exactly {target_len}")
        if seen < k:
            raise CapacityError(
                f"only {seen} train-region pairs of length {target_len} available, need {k}"
            )
        for start, end in sorted(pool, key=lambda p: (p[0].uid, p[1].uid)):
            path = sample_shortest_path(grid, start, end, _rng(seed, "augment-path", start.uid, end.uid))
            added.append(_make_record(path))
            existing.add((start.uid, end.uid))
    return base + added
