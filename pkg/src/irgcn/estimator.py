"""Estimator facade over the training pipeline, plus checkpoint files.

IRGCNClassifier follows the scikit-learn estimator conventions (constructor
stores hyperparameters verbatim, fit returns self, fitted state lives in
trailing-underscore attributes, get_params/set_params/clone work), so the
model drops into the usual tooling. The input is a Dataset rather than a
bare matrix because the induced views need question grouping, timestamps and
author ids; the classifier is transductive and scores the tuples it was
fitted on unless told otherwise.
"""

import hashlib
import struct
from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator

from .boost import (
    RELATION_STRATEGIES,
    Model,
    Relation,
    TrainConfig,
    fit_model,
    score_model,
)
from .conv import RelationWeights, StrategyStack
from .errors import ConfigError, DataError, FormatError
from .ingest import standardize_and_split
from .validation import check_dataset, check_indices, check_views
from .views import STRATEGY_SEMANTICS, induce_all_views

CHECKPOINT_MAGIC = b"IRGM"
CHECKPOINT_VERSION = 1


class IRGCNClassifier(BaseEstimator):
    """Boosted multi-view clique-convolution classifier for accepted answers.

    Parameters mirror the training configuration; ``relations`` picks the
    relation types (and their order in the boosting loop) from
    'contrastive', 'similar', 'reflexive'.
    """

    def __init__(
        self,
        relations=("contrastive", "similar", "reflexive"),
        epochs=200,
        lr=0.01,
        gamma1=0.05,
        gamma2=0.01,
        dropout=0.5,
        trueskill_margin=4.0,
        arrival_threshold=0.95,
        lambda_max=1.0,
        anneal_tau=0.0,
        test_fraction=0.2,
        seed=0,
    ):
        self.relations = relations
        self.epochs = epochs
        self.lr = lr
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.dropout = dropout
        self.trueskill_margin = trueskill_margin
        self.arrival_threshold = arrival_threshold
        self.lambda_max = lambda_max
        self.anneal_tau = anneal_tau
        self.test_fraction = test_fraction
        self.seed = seed

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            dropout=self.dropout,
            trueskill_margin=self.trueskill_margin,
            arrival_threshold=self.arrival_threshold,
            lambda_max=self.lambda_max,
            anneal_tau=self.anneal_tau,
            test_fraction=self.test_fraction,
            seed=self.seed,
            relation_order=self.relations,
        )

    def fit(self, dataset, views=None, train_idx=None, labeled_idx=None):
        """Fit on a Dataset.

        When train_idx is omitted the dataset is split by question and
        standardized on the training fold here. Views are induced on demand;
        labeled_idx optionally restricts the labels the loss consumes (label
        sparsity experiments).
        """
        config = self._config()
        check_dataset(dataset)
        test_idx = None
        if train_idx is None:
            train_idx, test_idx, dataset = standardize_and_split(
                dataset, config.test_fraction, config.seed
            )
        train_idx = check_indices(train_idx, dataset.n, "train_idx")
        if views is None:
            views = induce_all_views(
                dataset, train_idx,
                margin=config.trueskill_margin,
                arrival_threshold=config.arrival_threshold,
            )
        needed = [s for r in config.relation_order for s in RELATION_STRATEGIES[r]]
        check_views(views, dataset.n, needed)
        if labeled_idx is not None:
            labeled_idx = check_indices(labeled_idx, dataset.n, "labeled_idx")
        self.model_, self.history_ = fit_model(
            dataset, views, train_idx, config,
            loss_idx=labeled_idx, val_idx=test_idx,
        )
        self.dataset_ = dataset
        self.views_ = views
        self.train_idx_ = train_idx
        self.test_idx_ = test_idx
        self.alphas_ = dict(self.model_.alphas)
        return self

    def _resolve(self, dataset, views):
        if dataset is None:
            return self.dataset_, self.views_
        if views is None:
            raise ConfigError("scoring a new dataset requires its induced views")
        if not dataset.standardized and self.dataset_.standardized:
            x = (dataset.x - self.dataset_.feature_means) / self.dataset_.feature_stds
            dataset = replace(
                dataset, x=x, standardized=True,
                feature_means=self.dataset_.feature_means,
                feature_stds=self.dataset_.feature_stds,
            )
        return dataset, views

    def decision_function(self, dataset=None, views=None):
        """Boosted scores under the frozen relation weights (label-free)."""
        self._check_fitted()
        dataset, views = self._resolve(dataset, views)
        return score_model(self.model_, dataset.x, views).boosted.ravel()

    def predict(self, dataset=None, views=None):
        """Predicted labels; a score of exactly zero maps to -1."""
        scores = self.decision_function(dataset, views)
        return np.where(scores > 0, 1, -1).astype(np.int8)

    def score(self, dataset=None, views=None, idx=None):
        """Sign accuracy on idx (defaults to the held-out fold from fit)."""
        self._check_fitted()
        resolved, views = self._resolve(dataset, views)
        scores = score_model(self.model_, resolved.x, views).boosted.ravel()
        if idx is None:
            idx = self.test_idx_ if dataset is None and self.test_idx_ is not None \
                else np.arange(resolved.n)
        idx = np.asarray(idx, dtype=np.int64)
        return float(np.mean(resolved.y[idx] * scores[idx] > 0))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigError("this IRGCNClassifier instance is not fitted yet")


# ---------------------------------------------------------------------------
# Checkpoint container
#
# Layout (little-endian):
#   magic "IRGM" | u16 version
#   u32 config text length | config utf-8 | 32-byte sha256 of the config text
#   u32 d_in | u16 relation count
#   per relation: u8+name | f64 alpha | u16 layer count |
#       per layer: u32 rows, u32 cols, f64 data |
#       u16 strategy count | per strategy: u8+name | u32 rows, u32 cols, f64 data

def _write_str(fh, s):
    encoded = s.encode("utf-8")
    fh.write(struct.pack("<B", len(encoded)))
    fh.write(encoded)


def _read_str(fh):
    (n,) = struct.unpack("<B", fh.read(1))
    return fh.read(n).decode("utf-8")


def _write_array(fh, arr):
    fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh):
    rows, cols = struct.unpack("<II", fh.read(8))
    buf = fh.read(8 * rows * cols)
    if len(buf) != 8 * rows * cols:
        raise FormatError("truncated checkpoint file")
    return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()


def save_model(model, path):
    if set(model.alphas) != set(model.relation_names):
        raise DataError("model is missing frozen alphas; train before saving")
    config_text = model.config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        fh.write(hashlib.sha256(config_text).digest())
        fh.write(struct.pack("<IH", model.d_in, len(model.relations)))
        for rel in model.relations:
            _write_str(fh, rel.name)
            fh.write(struct.pack("<d", model.alphas[rel.name]))
            fh.write(struct.pack("<H", len(rel.weights.ws)))
            for w in rel.weights.ws:
                _write_array(fh, w)
            fh.write(struct.pack("<H", len(rel.strategies)))
            for s in rel.strategies:
                _write_str(fh, s.name)
                _write_array(fh, s.score_w)


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(config_len).decode("utf-8")
        stored_hash = fh.read(32)
        if hashlib.sha256(config_text.encode("utf-8")).digest() != stored_hash:
            raise FormatError(f"{path}: config hash mismatch")
        config = TrainConfig.from_text(config_text)
        d_in, n_relations = struct.unpack("<IH", fh.read(6))
        relations = []
        alphas = {}
        for _ in range(n_relations):
            name = _read_str(fh)
            (alpha,) = struct.unpack("<d", fh.read(8))
            (n_layers,) = struct.unpack("<H", fh.read(2))
            weights = RelationWeights(ws=[_read_array(fh) for _ in range(n_layers)])
            (n_strategies,) = struct.unpack("<H", fh.read(2))
            strategies = []
            for _ in range(n_strategies):
                s_name = _read_str(fh)
                score_w = _read_array(fh)
                strategies.append(
                    StrategyStack(
                        name=s_name,
                        semantics=STRATEGY_SEMANTICS[s_name],
                        weights=weights,
                        score_w=score_w,
                    )
                )
            relations.append(Relation(name=name, weights=weights, strategies=strategies))
            alphas[name] = alpha
    return Model(relations=relations, d_in=d_in, config=config, alphas=alphas)
