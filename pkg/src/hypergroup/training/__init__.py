from .losses import (
    TERMS,
    Batch,
    LossConfig,
    LossResult,
    NumericalError,
    RaySampleSet,
    TrainableEmbedding,
    aggregate_ray_feature,
    compactness_loss,
    compute_leaf_prototypes,
    compute_root_centroids,
    enumerate_lca_triplets,
    gradient,
    lca_order_loss,
    leaf_angular_loss,
    loss_and_grad,
    max_norm_regularizer,
    root_angular_loss,
    sample_lca_triplets,
    select_high_weight,
    total_loss,
)
from .trainer import Adam, ImageRays, Schedule, TrainingDiverged, TrainResult, nearest_prototype_accuracy, train
