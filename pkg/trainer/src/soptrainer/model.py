"""Decoder-only transformer with rotary position encoding.

8 layers and 8 heads throughout; hidden size 512 at full scale, 128 for
desk-scale runs.  RMSNorm, gated MLP, no biases.  ``hidden_states`` exposes
every layer's residual stream for probing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    vocab_size: int
    vocab_digest: str
    hidden: int = 512
    layers: int = 8
    heads: int = 8
    max_seq_len: int = 256
    mlp_ratio: float = 8 / 3
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must divide evenly across heads")


class RMSNorm(nn.Module):
    def __init__(self, hidden: int, eps: float):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(hidden))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        norm = x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps)
        return norm * self.weight


def _rotary_tables(head_dim: int, max_seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    inv_freq = 1.0 / (10000 ** (torch.arange(0, head_dim, 2).float() / head_dim))
    positions = torch.arange(max_seq_len).float()
    angles = torch.outer(positions, inv_freq)
    return torch.cos(angles), torch.sin(angles)


def _apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (batch, heads, seq, head_dim); tables: (seq, head_dim/2)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    cos = cos[: x.shape[-2]].unsqueeze(0).unsqueeze(0)
    sin = sin[: x.shape[-2]].unsqueeze(0).unsqueeze(0)
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


class Attention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.hidden // config.heads
        self.qkv = nn.Linear(config.hidden, 3 * config.hidden, bias=False)
        self.out = nn.Linear(config.hidden, config.hidden, bias=False)

    def forward(self, x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        q = _apply_rotary(q, cos, sin)
        k = _apply_rotary(k, cos, sin)
        attended = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.out(attended.transpose(1, 2).reshape(b, t, -1))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        inner = int(config.mlp_ratio * config.hidden)
        self.attn_norm = RMSNorm(config.hidden, config.norm_eps)
        self.attn = Attention(config)
        self.mlp_norm = RMSNorm(config.hidden, config.norm_eps)
        self.gate = nn.Linear(config.hidden, inner, bias=False)
        self.up = nn.Linear(config.hidden, inner, bias=False)
        self.down = nn.Linear(inner, config.hidden, bias=False)

    def forward(self, x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.attn_norm(x), cos, sin)
        h = self.mlp_norm(x)
        return x + self.down(F.silu(self.gate(h)) * self.up(h))


class PathModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.hidden)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        self.final_norm = RMSNorm(config.hidden, config.norm_eps)
        self.lm_head = nn.Linear(config.hidden, config.vocab_size, bias=False)
        cos, sin = _rotary_tables(config.hidden // config.heads, config.max_seq_len)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)
        self.apply(self._init_weights)

    def _init_weights(self, module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02 / math.sqrt(2 * self.config.layers))
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x, self.rope_cos, self.rope_sin)
        return self.lm_head(self.final_norm(x))

    @torch.no_grad()
    def hidden_states(self, tokens: torch.Tensor) -> list[torch.Tensor]:
        """Residual stream after the embedding and after each block."""
        x = self.embed(tokens)
        states = [x]
        for block in self.blocks:
            x = block(x, self.rope_cos, self.rope_sin)
            states.append(x)
        return states

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def save_checkpoint(model: PathModel, path: str | Path, meta: dict | None = None) -> None:
    payload = {
        "config": asdict(model.config),
        "state": model.state_dict(),
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path, expect_digest: str | None = None) -> tuple[PathModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig(**payload["config"])
    if expect_digest is not None and config.vocab_digest != expect_digest:
        raise ValueError(
            "checkpoint vocabulary does not match the registry token table "
            f"({config.vocab_digest[:12]} != {expect_digest[:12]})"
        )
    model = PathModel(config)
    model.load_state_dict(payload["state"])
    return model, payload.get("meta", {})
