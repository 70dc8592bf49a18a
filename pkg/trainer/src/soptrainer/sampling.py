"""Autoregressive decoding into the evaluation harness's candidate format.

Candidate index 0 is always the greedy decode; the rest are temperature
samples.  One NDJSON object per query:
``{"query": {"map_id","start","end"}, "candidates": [...], "truncated": [...]}``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import torch

from .model import PathModel
from .vocab import Vocab


@torch.no_grad()
def generate(
    model: PathModel,
    vocab: Vocab,
    prompts: Sequence[Sequence[int]],
    max_new: int,
    temperature: float,
    generator: torch.Generator | None = None,
) -> tuple[list[list[int]], list[bool]]:
    """Decode a batch of equal-length prompts; returns token ids and truncation flags."""
    model.eval()
    batch = torch.tensor(list(prompts), dtype=torch.long)
    eos = vocab.eos_id
    alive = torch.ones(batch.shape[0], dtype=torch.bool)
    produced: list[list[int]] = [[] for _ in prompts]
    max_new = min(max_new, model.config.max_seq_len - batch.shape[1])
    for _ in range(max_new):
        logits = model(batch)[:, -1, :]
        if temperature <= 0:
            nxt = logits.argmax(dim=-1)
        else:
            probs = torch.softmax(logits / temperature, dim=-1)
            nxt = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
        nxt = torch.where(alive, nxt, torch.full_like(nxt, vocab.pad_id))
        for row in range(batch.shape[0]):
            if alive[row]:
                produced[row].append(int(nxt[row]))
        alive &= nxt != eos
        if not alive.any():
            break
        batch = torch.cat([batch, nxt.unsqueeze(-1)], dim=-1)
    truncated = [bool(a) for a in alive]
    return produced, truncated


def _prompt_ids(vocab: Vocab, query: dict) -> list[int]:
    return vocab.encode(["<s>", query["start"], query["end"], ":"])


def _to_text(vocab: Vocab, ids: list[int]) -> str:
    tokens = vocab.decode(ids)
    if tokens and tokens[-1] == "</s>":
        tokens = tokens[:-1]
    return " ".join(tokens)


def sample_completions(
    model: PathModel,
    vocab: Vocab,
    queries: Sequence[dict],
    k: int,
    temperature: float,
    seed: int,
    max_new: int = 64,
    batch_size: int = 256,
) -> list[dict]:
    """K candidates per query: greedy first, then K-1 temperature samples."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rows: list[dict] = [
        {"query": {"map_id": q["map_id"], "start": q["start"], "end": q["end"]},
         "candidates": [], "truncated": []}
        for q in queries
    ]
    for index in range(k):
        gen = torch.Generator().manual_seed(seed * 1000 + index)
        temp = 0.0 if index == 0 else temperature
        for lo in range(0, len(queries), batch_size):
            chunk = queries[lo : lo + batch_size]
            prompts = [_prompt_ids(vocab, q) for q in chunk]
            produced, truncated = generate(model, vocab, prompts, max_new, temp, gen)
            for offset, (ids, cut) in enumerate(zip(produced, truncated)):
                rows[lo + offset]["candidates"].append(_to_text(vocab, ids))
                rows[lo + offset]["truncated"].append(cut)
    return rows


def write_candidates(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
