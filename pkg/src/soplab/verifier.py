"""Completion verification: parse a model's answer, classify it against the
oracle, and emit a binary reward.

Classification applies a fixed precedence — Malformed, then InvalidMove,
then NotReached, then NonShortest — and the first failing check wins, so
every token sequence lands in exactly one class.  Reward is 1 for Success
and 0 otherwise.  Tokens after a well-formed terminator do not affect the
class but are flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .gridmap import EOS_TOKEN, Direction, GridMap, MapRegistry, NodeId
from .pathfind import PathQuery, distance_field

_DIRECTION_BY_TOKEN = {d.token: d for d in Direction}


class VerificationClass(Enum):
    SUCCESS = "Success"
    NON_SHORTEST = "NonShortest"
    NOT_REACHED = "NotReached"
    INVALID_MOVE = "InvalidMove"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class VerificationResult:
    outcome: VerificationClass
    reward: int
    generated_length: int | None
    shortest_length: int | None
    trailing_tokens: bool = False
    detail: str = ""

    def to_row(self, idx: int, fold_malformed: bool = False) -> dict:
        """The NDJSON row shape used by files and the reward service."""
        outcome = self.outcome
        if fold_malformed and outcome is VerificationClass.MALFORMED:
            outcome = VerificationClass.INVALID_MOVE
        return {
            "idx": idx,
            "class": outcome.value,
            "reward": self.reward,
            "gen_len": self.generated_length,
            "shortest_len": self.shortest_length,
        }


def verify_completion(
    grid: GridMap,
    query: PathQuery,
    completion: str | Sequence[str],
    shortest: int | None = None,
    dist_lookup: Callable[[GridMap, NodeId], "object"] | None = None,
) -> VerificationResult:
    """Classify the continuation generated after the ``<s> i j :`` prompt.

    ``completion`` may or may not carry a trailing terminator.  ``shortest``
    (or a ``dist_lookup`` distance-field provider) lets callers reuse cached
    distances; results are identical either way.
    """
    tokens = completion.split() if isinstance(completion, str) else list(completion)
    if shortest is None:
        field = (dist_lookup or distance_field)(grid, query.start)
        d = int(field[grid.cell_of(query.end)])
        shortest = None if d < 0 else d

    trailing = False
    if EOS_TOKEN in tokens:
        cut = tokens.index(EOS_TOKEN)
        trailing = cut < len(tokens) - 1
        tokens = tokens[:cut]

    def malformed(detail: str) -> VerificationResult:
        return VerificationResult(
            VerificationClass.MALFORMED, 0, None, shortest, trailing, detail
        )

    if len(tokens) < 2:
        return malformed("answer shorter than start/end echo")
    if tokens[0] != query.start.token:
        return malformed("first token is not the start node")
    if tokens[-1] != query.end.token:
        return malformed("last token is not the end node")
    moves = []
    for k, tok in enumerate(tokens[1:-1]):
        move = _DIRECTION_BY_TOKEN.get(tok)
        if move is None:
            return malformed(f"token {k + 1} is not a direction")
        moves.append(move)
    gen_len = len(moves)

    cell = grid.cell_of(query.start)
    for k, move in enumerate(moves):
        nxt = grid.adjacency[cell].get(move)
        if nxt is None:
            return VerificationResult(
                VerificationClass.INVALID_MOVE,
                0,
                gen_len,
                shortest,
                trailing,
                f"move {k} ({move.token}) has no edge",
            )
        cell = nxt
    if cell != grid.cell_of(query.end):
        return VerificationResult(
            VerificationClass.NOT_REACHED, 0, gen_len, shortest, trailing, "terminal node differs"
        )
    if gen_len != shortest:
        return VerificationResult(
            VerificationClass.NON_SHORTEST, 0, gen_len, shortest, trailing, "reached via longer route"
        )
    return VerificationResult(VerificationClass.SUCCESS, 1, gen_len, shortest, trailing)


def _malformed_row(detail: str) -> VerificationResult:
    return VerificationResult(VerificationClass.MALFORMED, 0, None, None, False, detail)


def verify_line(
    registry: MapRegistry,
    line: str,
    dist_lookup: Callable | None = None,
) -> VerificationResult:
    """Verify one ``map_id<TAB>start<TAB>end<TAB>completion`` input line."""
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        return _malformed_row("expected 4 tab-separated fields")
    map_id, start_tok, end_tok, completion = parts
    if map_id not in registry:
        return _malformed_row(f"unknown map {map_id!r}")
    grid = registry.map_by_id(map_id)
    try:
        start = grid.node_by_token(start_tok)
        end = grid.node_by_token(end_tok)
        query = PathQuery(map_id, start, end)
    except Exception as exc:
        return _malformed_row(str(exc))
    return verify_completion(grid, query, completion, dist_lookup=dist_lookup)


def summarize(
    results: Sequence[VerificationResult], groups: Sequence[tuple[int, int]] | None = None
) -> dict:
    """Counts per class, and per length group when groups are given."""
    classes = {c.value: 0 for c in VerificationClass}
    for r in results:
        classes[r.outcome.value] += 1
    out = {"total": len(results), "classes": classes}
    if groups:
        per_group: dict[str, dict[str, int]] = {}
        for lo, hi in groups:
            label = f"({lo},{hi}]"
            rows = [r for r in results if r.shortest_length is not None and lo < r.shortest_length <= hi]
            per_group[label] = {c.value: 0 for c in VerificationClass}
            per_group[label]["n"] = len(rows)
            for r in rows:
                per_group[label][r.outcome.value] += 1
        out["groups"] = per_group
    return out


def batch_verify(
    registry: MapRegistry,
    lines: Iterable[str],
    groups: Sequence[tuple[int, int]] | None = None,
    fold_malformed: bool = False,
    dist_lookup: Callable | None = None,
) -> tuple[list[dict], dict]:
    """Verify an input file's lines in order; malformed lines become Malformed rows."""
    results = []
    for line in lines:
        results.append(verify_line(registry, line, dist_lookup=dist_lookup))
    rows = [r.to_row(i, fold_malformed) for i, r in enumerate(results)]
    return rows, summarize(results, groups)


def write_results(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_results(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
