"""Training stack for the grid-map planning testbed: a small rotary-position
decoder-only transformer, pretraining on random walks, prompt-masked SFT,
group-relative RL against the binary reward socket, candidate sampling for
the evaluation harness, and layer-wise distance probes."""

from .data import LineDataset, RecordError, batch_loss, parse_queries_tsv, prompts_from_records
from .grpo import GrpoConfig, GrpoResult, RewardServiceError, RewardSocket, group_advantages, grpo_train
from .model import ModelConfig, PathModel, load_checkpoint, save_checkpoint
from .probe import DistanceProbe, ProbeConfig, collect_features, probe_distance
from .sampling import generate, sample_completions, write_candidates
from .training import TrainConfig, new_model, pretrain_model, run_training, sft_train
from .vocab import Vocab, VocabError, load_vocab, table_digest

__version__ = "0.1.0"
