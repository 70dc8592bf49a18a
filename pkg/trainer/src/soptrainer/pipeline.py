"""Scripted experiment pipelines: map/data preparation through the testbed's
command-line interface, training with this package, verification back through
the testbed, and the headline success-rate comparisons.

Everything here talks to the testbed via subprocess calls to ``soplab`` and
via its published file formats; nothing imports it.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from .data import parse_queries_tsv
from .sampling import sample_completions
from .training import TrainConfig, pretrain_model, sft_train
from .vocab import Vocab, load_vocab

log = logging.getLogger(__name__)


def soplab(*args) -> None:
    command = ["soplab"] + [str(a) for a in args]
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(f"{' '.join(command)} failed: {result.stderr.strip()}")


@dataclass(frozen=True)
class ExperimentScale:
    """Knobs for one end-to-end run; `desk` is the reference configuration."""

    name: str
    width: int
    height: int
    hidden: int
    length_max: int
    beyond_hi: int
    walks: int
    walk_min: int
    walk_max: int
    pretrain_steps: int
    sft_epochs: float
    budget: float
    coverage: float
    diversity: int
    n_eval: int
    batch_size: int
    pretrain_lr: float = 1e-3
    sft_lr: float = 5e-4


PILOT = ExperimentScale(
    name="pilot", width=6, height=6, hidden=64, length_max=6, beyond_hi=10,
    walks=8000, walk_min=14, walk_max=20, pretrain_steps=3500, sft_epochs=40,
    budget=0.6, coverage=0.8, diversity=16, n_eval=200, batch_size=64,
    pretrain_lr=1.5e-3, sft_lr=1e-3,
)

DESK = ExperimentScale(
    name="desk", width=12, height=12, hidden=128, length_max=10, beyond_hi=16,
    walks=60000, walk_min=24, walk_max=36, pretrain_steps=6000, sft_epochs=40,
    budget=0.6, coverage=0.8, diversity=32, n_eval=1000, batch_size=64,
    pretrain_lr=1e-3, sft_lr=5e-4,
)


@dataclass
class Workspace:
    root: Path
    scale: ExperimentScale
    vocab: Vocab

    @property
    def registry(self) -> Path:
        return self.root / "registry.json"


def build_workspace(root: str | Path, scale: ExperimentScale, seed: int = 0) -> Workspace:
    """Training map, disjoint transfer map, registry, split, corpus, SFT data,
    and the within/beyond evaluation query sets."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    soplab("gen-map", "--width", scale.width, "--height", scale.height,
           "--sparsity", 0.5, "--seed", seed + 1, "--out", root / "m0.json")
    soplab("gen-map", "--width", scale.width, "--height", scale.height,
           "--sparsity", 0.35, "--seed", seed + 2, "--map-index", 1, "--out", root / "m1.json")
    soplab("registry", "--maps", root / "m0.json", root / "m1.json",
           "--out", root / "registry.json")
    soplab("split", "--map", root / "m0.json", "--train-fraction", 0.8,
           "--seed", seed + 3, "--out", root / "split.json")
    soplab("gen-pretrain", "--map-registry", root / "registry.json",
           "--walks", scale.walks, "--min-len", scale.walk_min, "--max-len", scale.walk_max,
           "--sft-lmax", scale.length_max, "--seed", seed + 4, "--out", root / "corpus.txt")
    soplab("gen-sft", "--map", root / "m0.json", "--split", root / "split.json",
           "--budget", scale.budget, "--coverage", scale.coverage,
           "--diversity", scale.diversity, "--lmin", 1, "--lmax", scale.length_max,
           "--seed", seed + 5, "--out", root / "train.txt")
    # within-training-length transfer queries live on the disjoint map
    soplab("build-eval", "--map", root / "m1.json", "--groups", f"1-{scale.length_max}",
           "--n", scale.n_eval, "--seed", seed + 6, "--out", root / "eval_within.tsv")
    # first beyond-training group on the training map's holdout nodes
    soplab("build-eval", "--map", root / "m0.json", "--split", root / "split.json",
           "--groups", f"{scale.length_max}-{scale.beyond_hi}", "--n", scale.n_eval,
           "--nodes", "holdout", "--exclude", root / "train.txt",
           "--seed", seed + 7, "--out", root / "eval_beyond.tsv")
    return Workspace(root, scale, load_vocab(root / "registry.json"))


def pretrain(ws: Workspace, seed: int = 0):
    config = TrainConfig(batch_size=ws.scale.batch_size, lr=ws.scale.pretrain_lr,
                         warmup_steps=max(20, ws.scale.pretrain_steps // 20))
    torch.manual_seed(seed)
    model, losses = pretrain_model(ws.root / "corpus.txt", ws.vocab,
                                   steps=ws.scale.pretrain_steps, seed=seed,
                                   hidden=ws.scale.hidden, config=config,
                                   checkpoint_dir=ws.root / "ckpt")
    log.info("pretrain final loss %.3f", losses[-1])
    return model


def finetune(ws: Workspace, model, dataset: Path | None = None, epochs: float | None = None,
             seed: int = 1):
    config = TrainConfig(batch_size=ws.scale.batch_size, lr=ws.scale.sft_lr,
                         warmup_steps=20)
    model, losses = sft_train(model, dataset or ws.root / "train.txt", ws.vocab,
                              epochs=epochs if epochs is not None else ws.scale.sft_epochs,
                              seed=seed, config=config)
    log.info("sft final loss %.3f", losses[-1])
    return model


def greedy_success_rate(ws: Workspace, model, queries_tsv: Path, tag: str) -> float:
    """Greedy-decode every query, verify through the testbed, return the SR."""
    queries = parse_queries_tsv(queries_tsv)
    rows = sample_completions(model, ws.vocab, queries, k=1, temperature=0.0,
                              seed=0, max_new=2 * ws.scale.beyond_hi + 4)
    completions = ws.root / f"completions_{tag}.tsv"
    with completions.open("w", encoding="utf-8") as fh:
        for q, row in zip(queries, rows):
            fh.write(f"{q['map_id']}\t{q['start']}\t{q['end']}\t{row['candidates'][0]}\n")
    results = ws.root / f"results_{tag}.ndjson"
    soplab("verify", "--map-registry", ws.registry, "--in", completions, "--out", results)
    rows = [json.loads(l) for l in results.read_text().splitlines()]
    return sum(r["reward"] for r in rows) / max(1, len(rows))


# -- pretraining-only behavior (walk format) -----------------------------------


def _adjacency_from_map_file(map_path: Path) -> tuple[dict[str, dict[str, str]], list[str]]:
    data = json.loads(Path(map_path).read_text(encoding="utf-8"))
    token_of = {n["id"]: n["token"] for n in data["nodes"]}
    coord = {n["id"]: (n["x"], n["y"]) for n in data["nodes"]}
    moves = {(1, 0): "E", (-1, 0): "W", (0, 1): "N", (0, -1): "S"}
    adjacency: dict[str, dict[str, str]] = {tok: {} for tok in token_of.values()}
    for a, b in data["edges"]:
        ax, ay = coord[a]
        bx, by = coord[b]
        d = moves[(bx - ax, by - ay)]
        inverse = {"E": "W", "W": "E", "N": "S", "S": "N"}[d]
        adjacency[token_of[a]][d] = token_of[b]
        adjacency[token_of[b]][inverse] = token_of[a]
    return adjacency, list(token_of.values())


def pretrained_walk_behavior(
    ws: Workspace, model, map_path: Path, n_prompts: int, steps: int, seed: int = 0
) -> dict:
    """Free generation in the pretraining format (a single node-token prompt).

    valid_rate: fraction whose first ``steps`` moves are a legal interleaved
    node/direction walk.  shortest_rate: fraction that additionally traces a
    shortest path from the prompt node to the walk's final node, judged by
    the testbed verifier.
    """
    adjacency, tokens = _adjacency_from_map_file(map_path)
    map_id = Path(map_path).stem
    gen = torch.Generator().manual_seed(seed)
    rng = torch.Generator().manual_seed(seed + 1)
    picks = torch.randint(0, len(tokens), (n_prompts,), generator=rng)
    prompts = [[ws.vocab.token_to_id[tokens[int(i)]]] for i in picks]
    produced, _ = generate_walks(model, ws.vocab, prompts, 2 * steps, gen)
    valid = 0
    lines = []
    for prompt_ids, out_ids in zip(prompts, produced):
        walk = ws.vocab.decode(prompt_ids + out_ids)
        ok, end_token, n_moves = _walk_is_legal(walk, adjacency)
        valid += ok
        if ok and end_token is not None and end_token != walk[0] and n_moves >= 1:
            move_tokens = [walk[k] for k in range(1, len(walk) - 1, 2)][:n_moves]
            lines.append(f"{map_id}\t{walk[0]}\t{end_token}\t"
                         + " ".join([walk[0]] + move_tokens + [end_token]))
    shortest = 0
    if lines:
        completions = ws.root / "pretrain_walks.tsv"
        completions.write_text("\n".join(lines) + "\n", encoding="utf-8")
        results = ws.root / "pretrain_walks.ndjson"
        soplab("verify", "--map-registry", ws.registry, "--in", completions, "--out", results)
        shortest = sum(
            json.loads(l)["reward"] for l in results.read_text().splitlines()
        )
    return {
        "valid_rate": valid / n_prompts,
        "shortest_rate": shortest / n_prompts,
        "n": n_prompts,
    }


def generate_walks(model, vocab, prompts, max_new, gen):
    from .sampling import generate

    return generate(model, vocab, prompts, max_new, temperature=1.0, generator=gen)


def _walk_is_legal(walk: list[str], adjacency: dict) -> tuple[bool, str | None, int]:
    """Check alternating node/direction structure; returns (legal, end node, moves)."""
    if not walk or walk[0] not in adjacency:
        return False, None, 0
    current = walk[0]
    moves = 0
    k = 1
    while k + 1 < len(walk):
        direction, nxt = walk[k], walk[k + 1]
        target = adjacency[current].get(direction)
        if target is None or target != nxt:
            return False, None, 0
        current = nxt
        moves += 1
        k += 2
    return moves >= 1, current, moves


# -- headline experiments ----------------------------------------------------------


def transfer_and_scaling(ws: Workspace, model) -> dict:
    within = greedy_success_rate(ws, model, ws.root / "eval_within.tsv", "within")
    beyond = greedy_success_rate(ws, model, ws.root / "eval_beyond.tsv", "beyond")
    return {"sr_within_transfer": within, "sr_beyond": beyond}


def length_augmentation_comparison(ws: Workspace, pretrained, seed: int = 2) -> dict:
    """SFT three ways: no augmentation, ~1% at length_max+2, equal-count shorter."""
    import copy

    target_long = ws.scale.length_max + 2
    target_short = max(2, ws.scale.length_max - 2)
    soplab("augment-length", "--map", ws.root / "m0.json", "--split", ws.root / "split.json",
           "--in", ws.root / "train.txt", "--targets", target_long, "--fraction", 0.01,
           "--seed", seed, "--out", ws.root / "train_long.txt")
    soplab("augment-length", "--map", ws.root / "m0.json", "--split", ws.root / "split.json",
           "--in", ws.root / "train.txt", "--targets", target_short, "--fraction", 0.01,
           "--seed", seed, "--out", ws.root / "train_short.txt")
    # the beyond-group here targets exactly the first out-of-training lengths
    soplab("build-eval", "--map", ws.root / "m0.json", "--split", ws.root / "split.json",
           "--groups", f"{ws.scale.length_max}-{target_long}", "--n", ws.scale.n_eval,
           "--nodes", "holdout", "--exclude", ws.root / "train_long.txt",
           "--seed", seed + 8, "--out", ws.root / "eval_firstbeyond.tsv")
    out = {}
    for tag, dataset in (
        ("none", ws.root / "train.txt"),
        ("longer", ws.root / "train_long.txt"),
        ("shorter", ws.root / "train_short.txt"),
    ):
        model = finetune(ws, copy.deepcopy(pretrained), dataset=dataset, seed=seed)
        out[tag] = greedy_success_rate(ws, model, ws.root / "eval_firstbeyond.tsv", f"aug_{tag}")
        log.info("augmentation %s: first-beyond SR %.3f", tag, out[tag])
    return out
