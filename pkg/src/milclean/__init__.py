"""Label cleaning for patch-lattice slide annotations.

Train an attention-pooled (or mean-pooled) multiple-instance predictor on
bags sampled from a noisily annotated slide, score every tissue patch as
a singleton bag, and binarize plus clean the score map into a refined
annotation. Ships synthetic slide and noise generators, two baseline
cleaners, and evaluation metrics.
"""

from .errors import (
    DegenerateAnnotationError,
    DegenerateHistogramError,
    MilcleanError,
    NumericError,
    ValidationError,
)
from .grids import AnnotationMask, Heatmap, PatchGrid
from .kernels import BACKEND
from .mil import (
    MILDataset,
    TrainConfig,
    backward,
    build_mil_dataset,
    focal_loss,
    forward_attention,
    forward_minet,
    infer_singletons,
    multi_slide_train,
    train,
)
from .models import (
    AttentionMILModel,
    MiNetModel,
    load_model,
    make_attention_model,
    make_minet_model,
    save_model,
)
from .synth import (
    S1Noise,
    S2Noise,
    SynthSpec,
    apply_noise,
    apply_noise_s1,
    apply_noise_s2,
    assign_patch_labels,
    generate_synthetic_slide,
    lesion_ratio,
    tissue_mask_hsv_otsu,
    tissue_mask_rgb,
)
from .baselines import DkNNConfig, RankPruningConfig, dknn_refine, rank_pruning_refine
from .postproc import PostprocConfig, binarize, morphology_clean, otsu_threshold
from .metrics import MetricsReport, aggregate, confusion, report

__version__ = "1.0.0"

__all__ = [
    "AnnotationMask",
    "AttentionMILModel",
    "BACKEND",
    "DegenerateAnnotationError",
    "DegenerateHistogramError",
    "DkNNConfig",
    "Heatmap",
    "MILDataset",
    "MetricsReport",
    "MiNetModel",
    "MilcleanError",
    "NumericError",
    "PatchGrid",
    "PostprocConfig",
    "RankPruningConfig",
    "S1Noise",
    "S2Noise",
    "SynthSpec",
    "TrainConfig",
    "ValidationError",
    "aggregate",
    "apply_noise",
    "apply_noise_s1",
    "apply_noise_s2",
    "assign_patch_labels",
    "backward",
    "binarize",
    "build_mil_dataset",
    "confusion",
    "dknn_refine",
    "focal_loss",
    "forward_attention",
    "forward_minet",
    "generate_synthetic_slide",
    "infer_singletons",
    "lesion_ratio",
    "load_model",
    "make_attention_model",
    "make_minet_model",
    "morphology_clean",
    "multi_slide_train",
    "otsu_threshold",
    "rank_pruning_refine",
    "report",
    "save_model",
    "tissue_mask_hsv_otsu",
    "tissue_mask_rgb",
    "train",
]
