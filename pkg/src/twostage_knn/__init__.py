"""Two-round active-learning k-nearest-neighbor classification with known-eta oracles."""

from .active_sampling import SamplingOutcome, Streams, run_algorithm1, run_rejection_round
from .knn_core import KNNClassifier, ModifiedKNNClassifier, classify_modified, classify_standard
from .metric_space import AugmentedPoint, LabeledSample, Metric, NeighborIndex, Point, Provenance, SamplePool
from .oracles import make_distribution
from .region_estimation import HyperParams, RegionHandle, derive_constants

__all__ = [
    "AugmentedPoint", "HyperParams", "KNNClassifier", "LabeledSample", "Metric",
    "ModifiedKNNClassifier", "NeighborIndex", "Point", "Provenance", "RegionHandle",
    "SamplePool", "SamplingOutcome", "Streams", "classify_modified", "classify_standard",
    "derive_constants", "make_distribution", "run_algorithm1", "run_rejection_round",
]
