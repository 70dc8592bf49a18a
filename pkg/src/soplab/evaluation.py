"""Success rates, the long-vs-subpath decomposition, inference-time candidate
selection, and error-distribution tables.

Everything here is a pure function over in-memory rows; file rendering
(CSV/JSON/figures) lives in the CLI layer.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .dataset import derive_seed, validate_groups
from .errors import ParameterError
from .gridmap import GridMap
from .pathfind import PathQuery, sample_shortest_path, shortest_distance
from .verifier import VerificationClass

GroupKey = tuple[int, int]


def group_label(group: GroupKey) -> str:
    return f"({group[0]},{group[1]}]"


def assign_group(groups: Sequence[GroupKey], length: int | None) -> GroupKey | None:
    if length is None:
        return None
    for lo, hi in groups:
        if lo < length <= hi:
            return (lo, hi)
    return None


def success_rate(rows: Sequence[dict], groups: Sequence[GroupKey]) -> dict[GroupKey, dict]:
    """SR per length group from verification rows.

    Rows follow the results-file shape ({"class", "shortest_len", ...}).
    A group with no rows gets sr=None — an explicit no-data marker, never 0.
    """
    groups = validate_groups(groups)
    out: dict[GroupKey, dict] = {}
    for g in groups:
        rows_g = [r for r in rows if assign_group([g], r.get("shortest_len")) == g]
        n = len(rows_g)
        wins = sum(1 for r in rows_g if r["class"] == VerificationClass.SUCCESS.value)
        out[g] = {"n": n, "sr": (wins / n) if n else None}
    return out


def error_distribution(
    rows: Sequence[dict],
    groups: Sequence[GroupKey],
    fold_malformed: bool = False,
) -> dict[GroupKey, dict]:
    """Per-group class counts plus each error class's share of the non-Success rows."""
    groups = validate_groups(groups)
    out: dict[GroupKey, dict] = {}
    error_classes = [
        VerificationClass.NON_SHORTEST.value,
        VerificationClass.NOT_REACHED.value,
        VerificationClass.INVALID_MOVE.value,
    ]
    if not fold_malformed:
        error_classes.append(VerificationClass.MALFORMED.value)
    for g in groups:
        rows_g = [r for r in rows if assign_group([g], r.get("shortest_len")) == g]
        counts = {c: 0 for c in [VerificationClass.SUCCESS.value] + error_classes}
        for r in rows_g:
            cls = r["class"]
            if fold_malformed and cls == VerificationClass.MALFORMED.value:
                cls = VerificationClass.INVALID_MOVE.value
            counts[cls] += 1
        n_err = sum(counts[c] for c in error_classes)
        out[g] = {
            "n": len(rows_g),
            "counts": counts,
            "error_share": {
                c: (counts[c] / n_err if n_err else None) for c in error_classes
            },
        }
    return out


# -- long-path decomposition ---------------------------------------------------


@dataclass(frozen=True)
class DecompositionTriplet:
    """A long query, its seeded split node, and the two derived sub-queries."""

    long: PathQuery
    sub1: PathQuery
    sub2: PathQuery
    split_token: str
    group: GroupKey | None = None


def make_decomposition_queries(
    grid: GridMap,
    long_queries: Sequence[PathQuery | tuple[PathQuery, GroupKey]],
    seed: int,
    length_max: int,
) -> tuple[list[DecompositionTriplet], list[PathQuery]]:
    """Split each long query at the midpoint of one seeded reference shortest path.

    Queries longer than 2*length_max (halves would exceed training length)
    are skipped and returned in the second list.
    """
    triplets: list[DecompositionTriplet] = []
    skipped: list[PathQuery] = []
    for idx, item in enumerate(long_queries):
        query, group = item if isinstance(item, tuple) else (item, None)
        dist = shortest_distance(grid, query.start, query.end)
        if dist is None or dist > 2 * length_max or dist < 2:
            skipped.append(query)
            continue
        rng = random.Random(derive_seed(seed, "decompose", idx, query.start.uid, query.end.uid))
        reference = sample_shortest_path(grid, query.start, query.end, rng)
        mid = reference.nodes(grid)[dist // 2]
        triplets.append(
            DecompositionTriplet(
                long=query,
                sub1=PathQuery(grid.map_id, query.start, mid),
                sub2=PathQuery(grid.map_id, mid, query.end),
                split_token=mid.token,
                group=group,
            )
        )
    return triplets, skipped


@dataclass(frozen=True)
class OutcomeRow:
    """One decomposition measurement: success bits for the long path and both halves."""

    long_ok: bool
    sub1_ok: bool
    sub2_ok: bool
    group: GroupKey


def decomposition_stats(rows: Sequence[OutcomeRow]) -> dict[GroupKey, dict]:
    """The five decomposition quantities per group, from raw success bits.

    The conditional is None (no data) when no row has both halves correct.
    """
    if not rows:
        raise ParameterError("decomposition table is empty")
    out: dict[GroupKey, dict] = {}
    for g in sorted({r.group for r in rows}):
        rows_g = [r for r in rows if r.group == g]
        n = len(rows_g)
        n_long = sum(r.long_ok for r in rows_g)
        n_both = sum(r.sub1_ok and r.sub2_ok for r in rows_g)
        n_long_and_both = sum(r.long_ok and r.sub1_ok and r.sub2_ok for r in rows_g)
        n_long_not_both = n_long - n_long_and_both
        n_sub = sum(r.sub1_ok for r in rows_g) + sum(r.sub2_ok for r in rows_g)
        out[g] = {
            "n": n,
            "p_long": n_long / n,
            "p_sub": n_sub / (2 * n),
            "p_both": n_both / n,
            "p_long_given_both": (n_long_and_both / n_both) if n_both else None,
            "p_long_not_both": n_long_not_both / n,
        }
    return out


def compose_probability(p_long_given_both: float, p_both: float, p_long_not_both: float) -> float:
    """Total-probability identity: P(long) from its conditional decomposition."""
    return p_long_given_both * p_both + p_long_not_both


# -- inference-time candidate selection -----------------------------------------

SELECTION_STRATEGIES = ("greedy-first", "majority", "shortest")


def select_candidates(
    candidates: Sequence[str],
    strategy: str,
    valid: Sequence[bool] | None = None,
) -> int:
    """Pick one candidate index. Candidate 0 is the designated greedy decode.

    majority: modal exact token sequence, ties by lowest candidate index.
    shortest: minimal token count, ties by lowest index.  When ``valid`` bits
    are supplied (the --valid-only variant), invalid candidates are skipped
    unless none are valid.
    """
    if strategy not in SELECTION_STRATEGIES:
        raise ParameterError(f"strategy must be one of {SELECTION_STRATEGIES}")
    if not candidates:
        raise ParameterError("at least one candidate per query is required")
    indices = list(range(len(candidates)))
    if valid is not None:
        kept = [i for i in indices if valid[i]]
        if kept:
            indices = kept
    if strategy == "greedy-first":
        return indices[0] if valid is not None else 0
    if strategy == "majority":
        tally = Counter(candidates[i] for i in indices)
        best = max(tally.values())
        modal = {seq for seq, cnt in tally.items() if cnt == best}
        return next(i for i in indices if candidates[i] in modal)
    lengths = [len(candidates[i].split()) for i in indices]
    return indices[lengths.index(min(lengths))]
