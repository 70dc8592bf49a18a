"""Line-file loading and batching for pretraining and SFT.

SFT records look like ``<s> i j : i E S ... W j </s>``.  The prompt is the
first four tokens (``<s> i j :``); loss is computed only on the answer
(the start echo, the direction tokens, the end token, and the terminator).
Prompt positions carry the ignore label, so their logits receive no
gradient at all.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import torch

from .vocab import DIRECTIONS, Vocab

IGNORE = -100
PROMPT_LEN = 4  # <s> i j :


class RecordError(ValueError):
    """A dataset line failed structural decoding; datasets are oracle-clean by contract."""


def read_lines(path: str | Path) -> list[str]:
    return [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]


def validate_record(tokens: list[str], vocab: Vocab) -> None:
    if len(tokens) < 8:
        raise RecordError(f"record too short: {' '.join(tokens)!r}")
    if tokens[0] != "<s>" or tokens[3] != ":" or tokens[-1] != "</s>":
        raise RecordError("record frame tokens missing")
    if tokens[4] != tokens[1] or tokens[-2] != tokens[2]:
        raise RecordError("answer does not echo the prompt endpoints")
    for tok in tokens[5:-2]:
        if tok not in DIRECTIONS:
            raise RecordError(f"expected a direction token, got {tok!r}")
    for tok in (tokens[1], tokens[2]):
        if tok not in vocab.token_to_id:
            raise RecordError(f"unknown node token {tok!r}")


@dataclass
class Batch:
    tokens: torch.Tensor  # (batch, seq)
    labels: torch.Tensor  # (batch, seq), IGNORE on prompt/pad positions


def _pad_stack(rows: list[list[int]], pad_id: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), pad_id, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


def _labels_for(rows: list[list[int]], tokens: torch.Tensor, loss_from: int) -> torch.Tensor:
    """Next-token labels; IGNORE for pads and for targets before ``loss_from``."""
    labels = torch.full_like(tokens, IGNORE)
    for i, r in enumerate(rows):
        for t in range(len(r) - 1):
            if t + 1 >= loss_from:
                labels[i, t] = r[t + 1]
    return labels


class LineDataset:
    """Token-id sequences from a corpus or SFT line file."""

    def __init__(self, path: str | Path, vocab: Vocab, sft: bool):
        self.vocab = vocab
        self.sft = sft
        self.rows: list[list[int]] = []
        for line in read_lines(path):
            tokens = line.split()
            if sft:
                validate_record(tokens, vocab)
            self.rows.append(vocab.encode(tokens))

    def __len__(self) -> int:
        return len(self.rows)

    def batches(self, batch_size: int, seed: int, epochs: int = 1) -> Iterator[Batch]:
        """Seeded shuffled batches; for SFT the prompt is excluded from the loss."""
        loss_from = PROMPT_LEN if self.sft else 1
        rng = random.Random(seed)
        for _ in range(epochs):
            order = list(range(len(self.rows)))
            rng.shuffle(order)
            for lo in range(0, len(order), batch_size):
                rows = [self.rows[i] for i in order[lo : lo + batch_size]]
                tokens = _pad_stack(rows, self.vocab.pad_id)
                yield Batch(tokens, _labels_for(rows, tokens, loss_from))


def batch_loss(model, batch: Batch) -> torch.Tensor:
    logits = model(batch.tokens)
    return torch.nn.functional.cross_entropy(
        logits.view(-1, logits.shape[-1]), batch.labels.view(-1), ignore_index=IGNORE
    )


def parse_queries_tsv(path: str | Path) -> list[dict]:
    """Evaluation query rows: map_id, start, end, group bounds."""
    out = []
    for line in read_lines(path):
        map_id, start, end, lo, hi = line.split("\t")
        out.append(
            {"map_id": map_id, "start": start, "end": end, "group": (int(lo), int(hi))}
        )
    return out


def prompts_from_records(lines: Sequence[str]) -> list[dict]:
    """Distinct prompts (map-agnostic token form) from SFT record lines."""
    seen = set()
    prompts = []
    for line in lines:
        tokens = line.split()
        key = (tokens[1], tokens[2])
        if key in seen:
            continue
        seen.add(key)
        prompts.append({"start": tokens[1], "end": tokens[2]})
    return prompts
