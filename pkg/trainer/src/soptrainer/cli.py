"""Command-line entry points for the training stack."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .data import parse_queries_tsv, read_lines
from .grpo import GrpoConfig, grpo_train
from .model import load_checkpoint, save_checkpoint
from .probe import ProbeConfig, probe_distance
from .sampling import sample_completions, write_candidates
from .training import TrainConfig, pretrain_model, sft_train
from .vocab import load_vocab


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        checkpoint_every=args.checkpoint_every,
    )


def _cmd_pretrain(args) -> int:
    vocab = load_vocab(args.map_registry)
    model, losses = pretrain_model(
        args.corpus, vocab, steps=args.steps, seed=args.seed, hidden=args.hidden,
        config=_train_config(args), checkpoint_dir=args.outdir,
    )
    save_checkpoint(model, Path(args.outdir) / "pretrain-final.pt",
                    {"steps": args.steps, "final_loss": losses[-1]})
    print(json.dumps({"steps": args.steps, "final_loss": losses[-1]}))
    return 0


def _cmd_sft(args) -> int:
    vocab = load_vocab(args.map_registry)
    model, _ = load_checkpoint(args.checkpoint, expect_digest=vocab.digest)
    model, losses = sft_train(
        model, args.dataset, vocab, epochs=args.epochs, seed=args.seed,
        config=_train_config(args), checkpoint_dir=args.outdir,
    )
    save_checkpoint(model, Path(args.outdir) / "sft-final.pt",
                    {"epochs": args.epochs, "final_loss": losses[-1]})
    print(json.dumps({"epochs": args.epochs, "final_loss": losses[-1]}))
    return 0


def _cmd_grpo(args) -> int:
    vocab = load_vocab(args.map_registry)
    model, _ = load_checkpoint(args.checkpoint, expect_digest=vocab.digest)
    if args.prompts.endswith(".tsv"):
        rows = parse_queries_tsv(args.prompts)
        prompts = [{"map_id": r["map_id"], "start": r["start"], "end": r["end"]} for r in rows]
    else:
        prompts = [
            {"map_id": args.map_id, "start": t[1], "end": t[2]}
            for t in (line.split() for line in read_lines(args.prompts))
        ]
    config = GrpoConfig(
        host=args.host, port=args.port, rollouts=args.rollouts,
        temperature=args.temperature, lr=args.lr, epochs=args.epochs,
        pass_mode=args.pass_mode, max_new=args.max_new,
    )
    result = grpo_train(model, prompts, vocab, config, seed=args.seed,
                        checkpoint_dir=args.outdir)
    save_checkpoint(model, Path(args.outdir) / "grpo-final.pt",
                    {"mean_rewards": result.epoch_mean_reward})
    print(json.dumps({
        "epoch_mean_reward": result.epoch_mean_reward,
        "rollouts_scored": result.rollouts_scored,
        "reward_digests": result.reward_digests,
    }))
    return 0


def _cmd_sample(args) -> int:
    vocab = load_vocab(args.map_registry)
    model, _ = load_checkpoint(args.checkpoint, expect_digest=vocab.digest)
    queries = parse_queries_tsv(args.queries)
    rows = sample_completions(
        model, vocab, queries, k=args.k, temperature=args.temperature,
        seed=args.seed, max_new=args.max_new,
    )
    write_candidates(rows, args.out)
    print(json.dumps({"queries": len(rows), "k": args.k}))
    return 0


def _cmd_probe(args) -> int:
    vocab = load_vocab(args.map_registry)
    model, _ = load_checkpoint(args.checkpoint, expect_digest=vocab.digest)
    config = ProbeConfig(position=args.position)
    table = probe_distance(
        model, vocab, read_lines(args.train_paths), read_lines(args.test_paths),
        config=config, seed=args.seed,
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "accuracy", "n_test"])
        for row in table:
            writer.writerow([row["layer"], f"{row['accuracy']:.4f}", row["n_test"]])
    print(json.dumps({"best_layer": max(table, key=lambda r: r["accuracy"])}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soptrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--map-registry", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain")
    common(p, checkpoint=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("sft")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=float, required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_sft)

    p = sub.add_parser("grpo")
    common(p)
    p.add_argument("--prompts", required=True, help="eval TSV or record lines")
    p.add_argument("--map-id", default="m0")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--rollouts", type=int, default=8)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--pass-mode", choices=("one-pass", "multi-pass"), default="one-pass")
    p.add_argument("--max-new", type=int, default=64)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_grpo)

    p = sub.add_parser("sample")
    common(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-new", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("probe")
    common(p)
    p.add_argument("--train-paths", required=True)
    p.add_argument("--test-paths", required=True)
    p.add_argument("--position", choices=("answer", "prompt-end"), default="answer")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_probe)

    return parser


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("SOPTRAINER_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    args = build_parser().parse_args()
    sys.exit(args.func(args))


if __name__ == "__main__":
    main()
