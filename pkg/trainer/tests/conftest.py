"""Shared fixtures: a tiny workspace produced entirely through the testbed's
public CLI, so the trainer is exercised against the real file formats."""

import pytest
import torch

from soplab.cli import run_cli

from soptrainer.training import TrainConfig, new_model, pretrain_model, sft_train
from soptrainer.vocab import load_vocab

torch.set_num_threads(1)


def cli(*args) -> None:
    assert run_cli([str(a) for a in args]) == 0


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainer-ws")
    cli("gen-map", "--width", 6, "--height", 6, "--sparsity", 0.4, "--seed", 1,
        "--out", root / "m0.json")
    cli("gen-map", "--width", 5, "--height", 5, "--sparsity", 0.3, "--seed", 2,
        "--map-index", 1, "--out", root / "m1.json")
    cli("registry", "--maps", root / "m0.json", root / "m1.json",
        "--out", root / "registry.json")
    cli("split", "--map", root / "m0.json", "--train-fraction", 0.8, "--seed", 3,
        "--out", root / "split.json")
    cli("gen-pretrain", "--map-registry", root / "registry.json", "--walks", 200,
        "--min-len", 12, "--max-len", 18, "--sft-lmax", 6, "--seed", 4,
        "--out", root / "corpus.txt")
    cli("gen-sft", "--map", root / "m0.json", "--split", root / "split.json",
        "--budget", 0.8, "--coverage", 0.8, "--diversity", 8,
        "--lmin", 1, "--lmax", 6, "--seed", 5, "--out", root / "train.txt")
    cli("build-eval", "--map", root / "m0.json", "--groups", "0-4", "--n", 30,
        "--seed", 6, "--out", root / "queries.tsv")
    return root


@pytest.fixture(scope="session")
def vocab(workspace):
    return load_vocab(workspace / "registry.json")


@pytest.fixture(scope="session")
def tiny_model(vocab):
    torch.manual_seed(0)
    return new_model(vocab, hidden=32, max_seq_len=64)


@pytest.fixture(scope="session")
def warm_model(workspace, vocab):
    """A briefly pretrained + briefly fine-tuned small model."""
    config = TrainConfig(batch_size=32, lr=1e-3, warmup_steps=10, log_every=0)
    model, _ = pretrain_model(workspace / "corpus.txt", vocab, steps=60, seed=7,
                              hidden=32, config=config)
    model, _ = sft_train(model, workspace / "train.txt", vocab, epochs=1.0, seed=8,
                         config=config)
    return model
