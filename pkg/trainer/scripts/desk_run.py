#!/usr/bin/env python3
"""Run the headline experiments end to end.

    python scripts/desk_run.py --scale pilot --outdir /tmp/pilot
    python scripts/desk_run.py --scale desk  --outdir /tmp/desk

pilot: 8x8 maps, hidden 64 — minutes on a CPU core, same pipeline.
desk:  12x12 maps, hidden 128 — the reference configuration (hours on CPU,
       about an hour on a small accelerator).
"""

import argparse
import copy
import json
import logging
import time
from pathlib import Path

import torch

from soptrainer.pipeline import (
    DESK,
    PILOT,
    build_workspace,
    finetune,
    length_augmentation_comparison,
    pretrain,
    pretrained_walk_behavior,
    transfer_and_scaling,
)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--scale", choices=("pilot", "desk"), default="pilot")
    parser.add_argument("--outdir", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0)
    parser.add_argument("--skip-augmentation", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    scale = PILOT if args.scale == "pilot" else DESK
    started = time.monotonic()
    ws = build_workspace(Path(args.outdir), scale, seed=args.seed)
    logging.info("workspace ready (%.0fs)", time.monotonic() - started)

    pretrained = pretrain(ws, seed=args.seed)
    logging.info("pretraining done (%.0fs)", time.monotonic() - started)
    behavior = pretrained_walk_behavior(ws, pretrained, ws.root / "m0.json",
                                        n_prompts=200, steps=scale.length_max)
    logging.info("pretrained-only behavior: %s", behavior)

    sft = finetune(ws, copy.deepcopy(pretrained), seed=args.seed + 1)
    logging.info("sft done (%.0fs)", time.monotonic() - started)
    headline = transfer_and_scaling(ws, sft)
    logging.info("transfer/scaling: %s", headline)

    report = {
        "scale": scale.name,
        "pretrained_behavior": behavior,
        "transfer_scaling": headline,
        "runtime_s": round(time.monotonic() - started, 1),
    }
    if not args.skip_augmentation:
        report["augmentation"] = length_augmentation_comparison(ws, pretrained)
        report["runtime_s"] = round(time.monotonic() - started, 1)
    out = Path(args.outdir) / "experiment_report.json"
    out.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    logging.info("report written to %s", out)
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
