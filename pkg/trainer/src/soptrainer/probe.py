"""Layer-wise probes for the remaining distance to the end node.

A two-layer perceptron (rectifier nonlinearity, softmax output) is trained
independently per layer on hidden states from training-map records and
evaluated on records from a disjoint map.  Remaining distances 1..20 are
bucketed into 10 classes of width 2.  By default every answer-token
position that precedes a move is probed, labelled with the distance still
to go; the prompt-terminal position (the ``:`` token, labelled with the
full path length) is available behind a flag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .model import PathModel
from .vocab import Vocab

log = logging.getLogger(__name__)


@dataclass
class ProbeConfig:
    classes: int = 10
    granularity: int = 2
    max_length: int = 20
    position: str = "answer"  # or "prompt-end"
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 256

    def __post_init__(self):
        if self.classes * self.granularity < self.max_length:
            raise ValueError("classes x granularity must cover the probed length range")
        if self.position not in ("answer", "prompt-end"):
            raise ValueError("position must be 'answer' or 'prompt-end'")

    def bucket(self, remaining: int) -> int:
        return min(self.classes - 1, (remaining - 1) // self.granularity)


class DistanceProbe(nn.Module):
    def __init__(self, hidden: int, classes: int):
        super().__init__()
        self.inner = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(torch.relu(self.inner(x)))


def collect_features(
    model: PathModel, vocab: Vocab, lines: Sequence[str], config: ProbeConfig
) -> tuple[list[torch.Tensor], torch.Tensor]:
    """Hidden states per layer and bucket labels for every probed position."""
    per_layer: list[list[torch.Tensor]] = [[] for _ in range(model.config.layers + 1)]
    labels: list[int] = []
    for line in lines:
        ids = vocab.encode(line)
        length = len(ids) - 7  # frame: <s> i j : i ... j </s>
        if not 1 <= length <= config.max_length:
            continue
        states = model.hidden_states(torch.tensor([ids], dtype=torch.long))
        if config.position == "prompt-end":
            positions = [(3, length)]
        else:
            # the start echo and each non-final move: remaining distance before
            # the next move, in 1..length
            positions = [(4 + k, length - k) for k in range(length)]
        for pos, remaining in positions:
            for layer, state in enumerate(states):
                per_layer[layer].append(state[0, pos])
            labels.append(config.bucket(remaining))
    stacked = [torch.stack(layer) if layer else torch.empty(0) for layer in per_layer]
    return stacked, torch.tensor(labels, dtype=torch.long)


def _check_balance(labels: torch.Tensor, config: ProbeConfig, split: str) -> None:
    counts = torch.bincount(labels, minlength=config.classes).tolist()
    present = [c for c in counts if c]
    if len(present) < config.classes or min(present) * 5 < max(present):
        log.warning("%s probe classes are unbalanced: counts=%s", split, counts)


def probe_distance(
    model: PathModel,
    vocab: Vocab,
    train_lines: Sequence[str],
    test_lines: Sequence[str],
    config: ProbeConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """Train one probe per layer; report per-layer test accuracy."""
    config = config or ProbeConfig()
    train_x, train_y = collect_features(model, vocab, train_lines, config)
    test_x, test_y = collect_features(model, vocab, test_lines, config)
    if not len(train_y) or not len(test_y):
        raise ValueError("no probe positions collected; check record lengths")
    _check_balance(train_y, config, "train")
    _check_balance(test_y, config, "test")
    table = []
    for layer in range(len(train_x)):
        torch.manual_seed(seed * 31 + layer)
        probe = DistanceProbe(model.config.hidden, config.classes)
        optimizer = torch.optim.Adam(probe.parameters(), lr=config.lr)
        x, y = train_x[layer], train_y
        for _ in range(config.epochs):
            perm = torch.randperm(len(y))
            for lo in range(0, len(y), config.batch_size):
                idx = perm[lo : lo + config.batch_size]
                loss = nn.functional.cross_entropy(probe(x[idx]), y[idx])
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        with torch.no_grad():
            accuracy = float((probe(test_x[layer]).argmax(-1) == test_y).float().mean())
        table.append({"layer": layer, "accuracy": accuracy, "n_test": int(len(test_y))})
    return table
