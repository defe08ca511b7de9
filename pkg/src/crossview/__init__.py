"""Self-supervised hyperspectral features from cross-channel prediction
(VAE + AAE) refined by an online/target contrastive stage."""

from .channelsplit import (
    ChannelSplit,
    apply_split,
    make_split,
    overlap_split,
    parity_split,
    random_split,
    sequential_split,
)
from .datacube import (
    GroundTruth,
    HyperCube,
    IndexSplit,
    PatchSet,
    PcaModel,
    apply_pca,
    extract_patches,
    fit_pca,
    load_cube,
    load_ground_truth,
    stratified_split,
)
from .evaluate import MetricsReport, SvmModel, classify, compute_metrics, train_svm

__version__ = "0.1.0"
