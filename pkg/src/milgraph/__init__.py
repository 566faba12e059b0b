"""Graph neural networks for multiple instance learning, on a small numpy autodiff core."""

from .data import Bag, Dataset, FoldPlan, Normalizer, apply_normalizer, fit_normalizer, make_folds
from .data import parse_canonical_csv, parse_svmlight_bags, write_canonical_csv
from .graph import INF, BagGraph, build_graph, neighbor_lists
from .model import ModelConfig, forward, forward_batch, init_params, loss, predict
from .train import TrainConfig, compute_metrics, run_cross_validation, train_one_model

__version__ = "0.1.0"
