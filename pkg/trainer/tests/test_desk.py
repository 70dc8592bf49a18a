"""Desk-scale reproduction runs (12x12 maps, hidden size 128).

These take hours on a single CPU core; they are excluded from the default
suite and selected with ``pytest -m desk``.  ``scripts/desk_run.py --scale
pilot`` exercises the same pipeline at a reduced scale in a few minutes.
"""

import copy
import threading

import pytest
import torch

from soplab.gridmap import load_registry
from soplab.service import RewardServer

from soptrainer.grpo import GrpoConfig, grpo_train
from soptrainer.pipeline import (
    DESK,
    build_workspace,
    finetune,
    length_augmentation_comparison,
    pretrain,
    pretrained_walk_behavior,
    transfer_and_scaling,
)

pytestmark = pytest.mark.desk


@pytest.fixture(scope="module")
def desk_ws(tmp_path_factory):
    torch.set_num_threads(max(1, torch.get_num_threads()))
    return build_workspace(tmp_path_factory.mktemp("desk"), DESK, seed=0)


@pytest.fixture(scope="module")
def desk_pretrained(desk_ws):
    return pretrain(desk_ws, seed=0)


@pytest.fixture(scope="module")
def desk_sft(desk_ws, desk_pretrained):
    return finetune(desk_ws, copy.deepcopy(desk_pretrained), seed=1)


def test_desk_transfer_high_and_scaling_drop(desk_ws, desk_sft):
    """Spatial-transfer SR >= 0.8 within training lengths on a disjoint map,
    and the first beyond-training group at least 30 points lower."""
    results = transfer_and_scaling(desk_ws, desk_sft)
    print(f"\ndesk transfer/scaling: {results}")
    assert results["sr_within_transfer"] >= 0.8
    assert results["sr_beyond"] <= results["sr_within_transfer"] - 0.30


def test_desk_pretraining_does_not_interfere(desk_ws, desk_pretrained):
    """Pretrained-only behavior: valid walks >= 0.95, shortest-path rate <= 0.05."""
    behavior = pretrained_walk_behavior(
        desk_ws, desk_pretrained, desk_ws.root / "m0.json", n_prompts=200, steps=10
    )
    print(f"\ndesk pretrained-only behavior: {behavior}")
    assert behavior["valid_rate"] >= 0.95
    assert behavior["shortest_rate"] <= 0.05


def test_desk_reward_strictly_increases_from_one_epoch_warm_start(desk_ws, desk_pretrained):
    warm = finetune(desk_ws, copy.deepcopy(desk_pretrained), epochs=1.0, seed=2)
    registry = load_registry(desk_ws.registry)
    server = RewardServer(registry, port=0)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.address
    lines = (desk_ws.root / "train.txt").read_text().splitlines()
    prompts, seen = [], set()
    for line in lines:
        tokens = line.split()
        if (tokens[1], tokens[2]) not in seen:
            seen.add((tokens[1], tokens[2]))
            prompts.append({"map_id": "m0", "start": tokens[1], "end": tokens[2]})
        if len(prompts) == 512:
            break
    try:
        config = GrpoConfig(host=host, port=port, rollouts=8, temperature=1.0,
                            lr=1e-4, epochs=3, pass_mode="multi-pass",
                            prompt_batch=16, max_new=2 * DESK.length_max + 4)
        result = grpo_train(warm, prompts, desk_ws.vocab, config, seed=3)
    finally:
        server.shutdown()
        server.server_close()
    curve = result.epoch_mean_reward
    print(f"\ndesk rl reward curve: {curve}")
    assert len(curve) == 3
    assert curve[0] < curve[1] < curve[2]


def test_desk_slightly_longer_augmentation_rescues_scaling(desk_ws, desk_pretrained):
    """~1% exact-length (L_max + 2) records lift the first beyond-training group
    by >= 15 points; equal-count shorter records lift it strictly less."""
    results = length_augmentation_comparison(desk_ws, desk_pretrained)
    print(f"\ndesk augmentation comparison: {results}")
    assert results["longer"] >= results["none"] + 0.15
    assert results["shorter"] - results["none"] < results["longer"] - results["none"]
