"""Joint-embedding item-response models over binary correctness data."""

from .clustering import ClusterAssignment, agreement_metrics, kmeans_unit
from .data import (
    Dataset,
    FeatureMatrix,
    JeirtCheckpoint,
    ResponseRecord,
    Split,
    load_checkpoint,
    load_features,
    load_responses,
    load_split,
    make_split,
    save_checkpoint,
    save_features,
    save_responses,
    save_split,
)
from .engine import EvalReport, TrainConfig, batch_loss_and_grads, evaluate, train
from .errors import ConfigError, DataError, JeirtError
from .geometry import (
    QuestionGeometry,
    RocCurve,
    compute_question_geometry,
    cosine_to_mean_stats,
    directional_alignment,
    effective_rank,
    geometry_from_embeddings,
    kernel_pca_cosine_2d,
    norm_quantile_accuracy,
    pca_cumulative_variance,
    roc_from_norms,
)
from .irt2pl import IrtParams, Irt2plConfig, correct_set_inclusion, fit_2pl, icc, saturation_report
from .model import AdapterParams, ModelTable, ability, predict_prob, question_embedding
from .onboarding import OnboardConfig, OnboardResult, append_model, onboard_model, subsample_curve
from .synth import (
    ConeMixture,
    LogNormalDifficulty,
    PlantedWorld,
    UniformDirections,
    check_ability_shift,
    check_prob_stability,
    check_prop1,
    generate_planted,
    make_specialist_dataset,
    most_opposed_pair,
    oracle_checkpoint,
    world_from_parameters,
)

__version__ = "0.1.0"
