"""metriclens: a desk-scale workbench for studying which layer of an
embedding network fits the training classes best and which one actually
generalizes to unseen classes in nearest-neighbor retrieval."""

__version__ = "0.1.0"

from .numerics import (
    DegenerateVectorError,
    Rng,
    ShapeError,
    derive_seed,
    group_max_reduce,
    l2_normalize_scale,
    matmul,
    pairwise_sq_euclidean,
)
from .losses import (
    LossOutput,
    NoValidPairError,
    NoValidTripletError,
    batch_all_triplet_loss,
    contrastive_loss,
    count_valid_triplets,
    smooth_triplet,
    softmax_cross_entropy,
)
from .network import (
    ForwardTrace,
    LayerSpec,
    NetConfig,
    NetSpec,
    ParamStore,
    backbone_net,
    backward,
    build_variant,
    forward,
    grad_check,
    init_params,
    reset_layers,
    with_classifier,
)
from .data import BatchPlan, Dataset, GenConfig, augment, gen_synthetic, sample_batch
from .training import Hyper, TrainHistory, lr_at, pretrain_classification, sgd_step, train
from .evaluation import (
    EmbeddingSet,
    Judgment,
    MetricReport,
    average_precision,
    build_emh,
    build_synthetic_judgments,
    extract_features,
    layer_sweep,
    mean_average_precision,
    mean_precision_at_k,
    recall_at_k,
)
from .experiments import (
    EXPERIMENT_IDS,
    ExperimentConfig,
    RunManifest,
    config_hash,
    run_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
