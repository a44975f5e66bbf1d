"""Multi-branch image encoders trained against several captions per image.

Pure numpy with an autodiff core; row-wise kernels are jitted with numba
unless ``M2M_NUMBA=0``.
"""

from .encoders import (
    EmbeddingSet,
    ModelConfig,
    Temperature,
    Variant,
    count_parameters,
    encode_image_cls,
    encode_image_mlp,
    encode_image_vanilla,
    encode_images,
    encode_text,
    encode_texts,
    init_params,
)
from .errors import M2MError
from .evaluation import (
    AVERAGE,
    Fusion,
    FusionStrategy,
    attention_mask,
    customize_branches,
    fuse_scores,
    retrieval_recall,
    zero_shot_classify,
)
from .losses import Reduction, loss_m2m, loss_o2m, loss_o2o
from .matching import MatchingPlan, PlanMode, plan_free, plan_grouped, plan_identity, text_similarity_stats
from .numerics import cosine_similarity_matrix, finite_difference_check, l2_normalize
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AVERAGE",
    "Checkpoint",
    "EmbeddingSet",
    "Fusion",
    "FusionStrategy",
    "M2MError",
    "MatchingPlan",
    "ModelConfig",
    "PlanMode",
    "Reduction",
    "Temperature",
    "TrainConfig",
    "Variant",
    "attention_mask",
    "cosine_similarity_matrix",
    "count_parameters",
    "customize_branches",
    "encode_image_cls",
    "encode_image_mlp",
    "encode_image_vanilla",
    "encode_images",
    "encode_text",
    "encode_texts",
    "finite_difference_check",
    "fuse_scores",
    "init_params",
    "l2_normalize",
    "load_checkpoint",
    "loss_m2m",
    "loss_o2m",
    "loss_o2o",
    "plan_free",
    "plan_grouped",
    "plan_identity",
    "retrieval_recall",
    "save_checkpoint",
    "text_similarity_stats",
    "train",
    "zero_shot_classify",
]
