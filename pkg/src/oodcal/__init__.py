"""Calibrated out-of-distribution detection over pre-extracted embeddings."""

from .dataset import (
    EmbeddingRecord,
    EmbeddingSet,
    SplitManifest,
    apply_split,
    load_embeddings,
    load_manifest,
    make_embedding_set,
    save_manifest,
    write_embeddings,
)
from .errors import (
    DataValidationError,
    InputError,
    NumericError,
    OodcalError,
)
from .grood_core import (
    ClassGaussian,
    ClassStrategy,
    GroodModel,
    OODGaussian,
    OODPriorConfig,
    ScorePoint,
    build_ood_model,
    calibrate,
    calibrated_score,
    decide,
    default_epsilon_grid,
    fit_class_gaussians,
    fit_grood,
    fit_score_gaussian,
    log_likelihood_ratio,
    predict_class,
    score_point,
    score_points,
)
from .linear_probe import (
    LinearProbeModel,
    LPTrainConfig,
    lp_logits,
    lp_loss_and_gradient,
    lp_predict,
    lp_score,
    softmax,
    sweep_l2_strength,
    train_lp,
)
from .metrics import (
    EvalReport,
    ScoredSample,
    accuracy,
    auroc,
    build_report,
    fpr_at_tpr,
    oscr,
    per_class_rejection_curve,
)
from .model_io import (
    load_grood,
    load_linear_probe,
    load_nearest_mean,
    save_grood,
    save_linear_probe,
    save_nearest_mean,
)
from .nearest_mean import (
    NearestMeanModel,
    fit_nm,
    nm_distance,
    nm_predict,
    nm_similarity,
)

__version__ = "0.1.0"
