"""Travel time estimation with spatial, trajectory, and semantic views."""

from .dataio import (
    Conditions,
    CrossingRecord,
    Dataset,
    HeadRecord,
    LinkRecord,
    SyntheticConfig,
    Trajectory,
    generate_synthetic,
    parse_road_network,
    parse_trajectories,
    split_dataset,
)
from .evaluate import ExperimentConfig, build_link_time_table, mape_metric, run_experiment, simple_eta
from .graph2vec import EmbeddingState, SkipgramConfig
from .model import MvstmParams, Prediction, TrainConfig, ensemble, mape_loss, predict
from .roadgraph import RoadNetwork, Subgraph, SubgraphCorpus, build_corpus, extract_subgraph

__version__ = "0.1.0"

__all__ = [
    "Conditions",
    "CrossingRecord",
    "Dataset",
    "EmbeddingState",
    "ExperimentConfig",
    "HeadRecord",
    "LinkRecord",
    "MvstmParams",
    "Prediction",
    "RoadNetwork",
    "SkipgramConfig",
    "Subgraph",
    "SubgraphCorpus",
    "SyntheticConfig",
    "TrainConfig",
    "Trajectory",
    "build_corpus",
    "build_link_time_table",
    "ensemble",
    "extract_subgraph",
    "generate_synthetic",
    "mape_loss",
    "mape_metric",
    "parse_road_network",
    "parse_trajectories",
    "predict",
    "run_experiment",
    "simple_eta",
    "split_dataset",
    "__version__",
]
