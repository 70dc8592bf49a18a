"""Group-relative policy optimization against the binary reward socket.

Per prompt, sample a group of rollouts, fetch rewards, and weight each
rollout's summed token log-probability by its advantage (reward minus the
group mean; the unbiased variant: no per-group standard-deviation division
and no per-sequence length normalization).  A group with uniform rewards
has zero advantage everywhere and so contributes exactly zero gradient.

One-pass mode consumes the prompt stream once; multi-pass repeats it for
the configured number of epochs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .data import PROMPT_LEN
from .model import PathModel, save_checkpoint
from .sampling import generate
from .vocab import Vocab

log = logging.getLogger(__name__)

ROLLOUT_CHOICES = (4, 8, 16)


class RewardServiceError(RuntimeError):
    """The reward endpoint stayed unreachable through all retries."""


@dataclass
class GrpoConfig:
    host: str
    port: int
    rollouts: int = 8
    temperature: float = 1.0
    lr: float = 1e-4
    epochs: int = 1
    pass_mode: str = "one-pass"  # or "multi-pass"
    prompt_batch: int = 16
    max_new: int = 64
    retries: int = 5
    backoff: float = 0.5
    # which SFT checkpoint the run started from, as a fraction of SFT progress
    warm_start_fraction: float | None = None

    def __post_init__(self):
        if self.rollouts not in ROLLOUT_CHOICES:
            raise ValueError(f"rollouts must be one of {ROLLOUT_CHOICES}")
        if self.pass_mode not in ("one-pass", "multi-pass"):
            raise ValueError("pass_mode must be 'one-pass' or 'multi-pass'")
        if self.warm_start_fraction is not None and not 0.06 <= self.warm_start_fraction <= 0.8:
            raise ValueError("warm_start_fraction lies in [0.06, 0.8] when given")


class RewardSocket:
    """NDJSON reward client with retry/backoff and request/response digests."""

    def __init__(self, host: str, port: int, retries: int = 5, backoff: float = 0.5):
        self.host, self.port = host, port
        self.retries, self.backoff = retries, backoff
        self._file = None
        self._request_hash = hashlib.sha256()
        self._response_hash = hashlib.sha256()

    def _connect(self):
        sock = socket.create_connection((self.host, self.port), timeout=60)
        self._file = sock.makefile("rwb")

    def request(self, payload: dict) -> dict:
        line = json.dumps(payload, separators=(",", ":"))
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                if self._file is None:
                    self._connect()
                self._file.write((line + "\n").encode("utf-8"))
                self._file.flush()
                raw = self._file.readline()
                if not raw:
                    raise ConnectionError("reward service closed the connection")
                self._request_hash.update((line + "\n").encode("utf-8"))
                self._response_hash.update(raw)
                return json.loads(raw.decode("utf-8"))
            except (OSError, ConnectionError) as exc:
                last_error = exc
                self._file = None
                wait = self.backoff * (2**attempt)
                log.warning("reward request failed (%s); retrying in %.1fs", exc, wait)
                time.sleep(wait)
        raise RewardServiceError(f"reward service unreachable: {last_error}")

    @property
    def digests(self) -> dict:
        return {
            "requests": self._request_hash.hexdigest(),
            "responses": self._response_hash.hexdigest(),
        }

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def group_advantages(rewards: torch.Tensor) -> torch.Tensor:
    """Reward minus the group mean, groups along the last dimension."""
    return rewards - rewards.mean(dim=-1, keepdim=True)


def completion_log_probs(
    model: PathModel, vocab: Vocab, sequences: list[list[int]]
) -> torch.Tensor:
    """Summed log-probability of each sequence's tokens after the prompt."""
    width = max(len(s) for s in sequences)
    tokens = torch.full((len(sequences), width), vocab.pad_id, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        tokens[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[i, PROMPT_LEN : len(seq)] = True
    logits = model(tokens)
    logprobs = torch.log_softmax(logits[:, :-1], dim=-1)
    picked = logprobs.gather(-1, tokens[:, 1:].unsqueeze(-1)).squeeze(-1)
    return (picked * mask[:, 1:]).sum(dim=-1)


@dataclass
class GrpoResult:
    epoch_mean_reward: list[float] = field(default_factory=list)
    reward_digests: dict = field(default_factory=dict)
    rollouts_scored: int = 0


def grpo_train(
    model: PathModel,
    prompts: Sequence[dict],
    vocab: Vocab,
    config: GrpoConfig,
    seed: int,
    checkpoint_dir: str | Path | None = None,
) -> GrpoResult:
    """Reinforce ``model`` on ``prompts`` ({"map_id","start","end"} rows)."""
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, betas=(0.9, 0.95))
    client = RewardSocket(config.host, config.port, config.retries, config.backoff)
    result = GrpoResult()
    torch.manual_seed(seed)
    epochs = config.epochs if config.pass_mode == "multi-pass" else 1
    try:
        for epoch in range(epochs):
            rewards_seen: list[float] = []
            gen = torch.Generator().manual_seed(seed * 7919 + epoch)
            for lo in range(0, len(prompts), config.prompt_batch):
                chunk = prompts[lo : lo + config.prompt_batch]
                prompt_ids = [
                    vocab.encode(["<s>", p["start"], p["end"], ":"]) for p in chunk
                ]
                tiled = [ids for ids in prompt_ids for _ in range(config.rollouts)]
                with torch.no_grad():
                    produced, _ = generate(
                        model, vocab, tiled, config.max_new, config.temperature, gen
                    )
                rewards = torch.zeros(len(chunk), config.rollouts)
                sequences = []
                for i, prompt in enumerate(chunk):
                    for g in range(config.rollouts):
                        ids = produced[i * config.rollouts + g]
                        sequences.append(prompt_ids[i] + ids)
                        response = client.request(
                            {
                                "id": f"e{epoch}-p{lo + i}-r{g}",
                                "map_id": prompt["map_id"],
                                "start_token": prompt["start"],
                                "end_token": prompt["end"],
                                "completion": " ".join(vocab.decode(ids)),
                            }
                        )
                        if "error" in response:
                            raise RewardServiceError(f"reward error: {response['error']}")
                        if response["reward"] not in (0, 1):
                            raise RewardServiceError("reward must be exactly 0 or 1")
                        rewards[i, g] = float(response["reward"])
                        result.rollouts_scored += 1
                rewards_seen.extend(rewards.flatten().tolist())
                advantages = group_advantages(rewards).flatten()
                if advantages.abs().sum() == 0:
                    continue  # every group uniform: exactly zero gradient
                model.train()
                logps = completion_log_probs(model, vocab, sequences)
                loss = -(advantages * logps).sum() / advantages.numel()
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
                optimizer.step()
            mean_reward = sum(rewards_seen) / max(1, len(rewards_seen))
            result.epoch_mean_reward.append(mean_reward)
            log.info("rl epoch %d mean reward %.3f", epoch, mean_reward)
            if checkpoint_dir:
                save_checkpoint(
                    model,
                    Path(checkpoint_dir) / f"grpo-epoch{epoch + 1:03d}.pt",
                    {"epoch": epoch + 1, "mean_reward": mean_reward},
                )
    except RewardServiceError:
        if checkpoint_dir:
            save_checkpoint(model, Path(checkpoint_dir) / "grpo-aborted.pt",
                            {"error": "reward service unreachable"})
        raise
    finally:
        result.reward_digests = client.digests
        client.close()
    return result
