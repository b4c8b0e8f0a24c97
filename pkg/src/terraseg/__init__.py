"""Terrain-segmentation evaluation and post-processing toolkit."""

__version__ = "0.1.0"

from .schema import ClassDef, ClassSchema, Tier, default_schema, load_schema
from .tensorio import (
    MaskMode,
    ProbTensor,
    TensorKind,
    decode_image,
    decode_mask,
    encode_image,
    encode_mask,
    read_tensor,
    render_overlay,
    write_tensor,
)
from .metrics import ConfusionAccumulator, MetricsReport, accumulate, finalize, top_confusions
from .loss import LossBreakdown, combined_loss, combined_loss_grad, soft_dice, weighted_ce
from .augment import CopyPasteConfig, Sample, copy_paste, hflip, normalize, random_resized_crop
from .postprocess import (
    CrfParams,
    TtaView,
    UncertaintyReport,
    crf_refine,
    mc_aggregate,
    rank_difficulty,
    softmax,
    tta_merge,
    uncertainty,
)
from .costmap import Costmap, PathPlan, plan_path, project_ground, suggest_waypoints, to_costmap

__all__ = [
    "ClassDef",
    "ClassSchema",
    "ConfusionAccumulator",
    "CopyPasteConfig",
    "Costmap",
    "CrfParams",
    "LossBreakdown",
    "MaskMode",
    "MetricsReport",
    "PathPlan",
    "ProbTensor",
    "Sample",
    "TensorKind",
    "Tier",
    "TtaView",
    "UncertaintyReport",
    "accumulate",
    "combined_loss",
    "combined_loss_grad",
    "copy_paste",
    "crf_refine",
    "decode_image",
    "decode_mask",
    "default_schema",
    "encode_image",
    "encode_mask",
    "finalize",
    "hflip",
    "load_schema",
    "mc_aggregate",
    "normalize",
    "plan_path",
    "project_ground",
    "random_resized_crop",
    "rank_difficulty",
    "read_tensor",
    "render_overlay",
    "softmax",
    "soft_dice",
    "suggest_waypoints",
    "to_costmap",
    "top_confusions",
    "tta_merge",
    "uncertainty",
    "weighted_ce",
    "write_tensor",
]
