"""Accepted-answer selection with induced clique views, exact per-clique graph
convolutions and boosted relation aggregation."""

__version__ = "0.1.0"

from .boost import TrainConfig, anneal_lambda, boost_scores, compute_alpha, fit_model, score_model
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    IrgcnError,
    NumericError,
)
from .estimator import IRGCNClassifier, load_model, save_model
from .evaluate import (
    EvalReport,
    accuracy,
    clique_binned_accuracy,
    evaluate_model,
    export_embeddings,
    label_prior_rate,
    misclassification_jaccard,
    mrr,
)
from .ingest import (
    Dataset,
    QATuple,
    build_dataset,
    parse_dump,
    read_dataset,
    standardize_and_split,
    write_dataset,
)
from .synth import synth_dataset
from .views import (
    CliquePartition,
    SkillTable,
    fit_trueskill,
    induce_all_views,
    induce_arrival,
    induce_contrastive,
    induce_reflexive,
    induce_trueskill,
    read_views,
    write_views,
)

__all__ = [
    "IRGCNClassifier",
    "TrainConfig",
    "Dataset",
    "QATuple",
    "CliquePartition",
    "SkillTable",
    "EvalReport",
    "IrgcnError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "accuracy",
    "anneal_lambda",
    "boost_scores",
    "build_dataset",
    "clique_binned_accuracy",
    "compute_alpha",
    "evaluate_model",
    "export_embeddings",
    "fit_model",
    "fit_trueskill",
    "induce_all_views",
    "induce_arrival",
    "induce_contrastive",
    "induce_reflexive",
    "induce_trueskill",
    "label_prior_rate",
    "load_model",
    "misclassification_jaccard",
    "mrr",
    "parse_dump",
    "read_dataset",
    "read_views",
    "save_model",
    "score_model",
    "standardize_and_split",
    "synth_dataset",
    "write_dataset",
    "write_views",
]
