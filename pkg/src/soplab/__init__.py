"""Grid-map planning testbed: seeded map generation, an exact shortest-path
oracle, controlled dataset construction, completion verification with binary
rewards, a reward service, and an evaluation harness."""

from .errors import CapacityError, DecodeError, MembershipError, ParameterError, SoplabError
from .gridmap import (
    Direction,
    GridMap,
    MapRegistry,
    NodeId,
    apply_move,
    generate_map,
    load_registry,
    move_failure,
    neighbors,
    read_map_file,
    write_map_file,
    write_registry,
)
from .pathfind import (
    Path,
    PathQuery,
    count_shortest_paths,
    distance_field,
    enumerate_shortest_paths,
    random_walk,
    sample_distinct_shortest_paths,
    sample_shortest_path,
    shortest_distance,
)
from .dataset import (
    DatasetManifest,
    DatasetSpec,
    NodeSplit,
    augment_with_length,
    build_eval_sets,
    build_sft_dataset,
    decode_record,
    encode_record,
    split_nodes,
    write_pretrain_corpus,
)
from .verifier import VerificationClass, VerificationResult, batch_verify, verify_completion
from .evaluation import (
    OutcomeRow,
    compose_probability,
    decomposition_stats,
    error_distribution,
    make_decomposition_queries,
    select_candidates,
    success_rate,
)
from .service import DistanceCache, RewardClient, RewardServer, RewardService

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DecodeError",
    "MembershipError",
    "ParameterError",
    "SoplabError",
    "Direction",
    "GridMap",
    "MapRegistry",
    "NodeId",
    "apply_move",
    "generate_map",
    "load_registry",
    "move_failure",
    "neighbors",
    "read_map_file",
    "write_map_file",
    "write_registry",
    "Path",
    "PathQuery",
    "count_shortest_paths",
    "distance_field",
    "enumerate_shortest_paths",
    "random_walk",
    "sample_distinct_shortest_paths",
    "sample_shortest_path",
    "shortest_distance",
    "DatasetManifest",
    "DatasetSpec",
    "NodeSplit",
    "augment_with_length",
    "build_eval_sets",
    "build_sft_dataset",
    "decode_record",
    "encode_record",
    "split_nodes",
    "write_pretrain_corpus",
    "VerificationClass",
    "VerificationResult",
    "batch_verify",
    "verify_completion",
    "OutcomeRow",
    "compose_probability",
    "decomposition_stats",
    "error_distribution",
    "make_decomposition_queries",
    "select_candidates",
    "success_rate",
    "DistanceCache",
    "RewardClient",
    "RewardServer",
    "RewardService",
    "__version__",
]
