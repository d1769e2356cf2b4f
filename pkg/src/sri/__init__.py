"""Cross-fitted inference for outcome means annotated on a subset of high-dimensional data."""

from .dataset import (Dataset, FoldAssignment, SynthConfig, corrupt_labels, generate_synthetic, load_csv,
                      oracle_effect, sample_annotations, split_folds, write_csv)
from .estimators import (Estimate, dsl_estimate, naive_estimate, ppi_estimate, sri_noisy, sri_perfect)
from .labelmodel import CoderErrorModel, build_joint_matrices, recover_error_matrices, recover_theta, surrogate_outcome
from .network import FittedNetwork, NetworkConfig, train

__all__ = [
    "Dataset", "FoldAssignment", "SynthConfig", "corrupt_labels", "generate_synthetic", "load_csv",
    "oracle_effect", "sample_annotations", "split_folds", "write_csv",
    "Estimate", "dsl_estimate", "naive_estimate", "ppi_estimate", "sri_noisy", "sri_perfect",
    "CoderErrorModel", "build_joint_matrices", "recover_error_matrices", "recover_theta", "surrogate_outcome",
    "FittedNetwork", "NetworkConfig", "train",
]
