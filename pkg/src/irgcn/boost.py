"""Boosted aggregation of relation scores and end-to-end training.

Relation types are processed in a fixed order. For each one the current
boosted score induces exponential example weights, the relation weight alpha
is the half log-odds of its exponentially weighted correct vs incorrect mass,
and alpha times the relation score is added to the running boosted score.

Training minimizes the exponential loss of the boosted score plus elastic-net
regularization on the shared layer weights, plus an annealed sum of
per-relation exponential losses and an alignment penalty that pulls the final
embeddings of strategies within one relation type together. Alpha values are
treated as constants during differentiation and recomputed every forward
pass; the indicator functions inside alpha have zero gradient almost
everywhere, so nothing useful flows through them.
"""

import hashlib
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .conv import (
    RelationWeights,
    StrategyStack,
    relation_backward,
    relation_score,
)
from .errors import ConfigError, NumericError
from .numcore import AdamState, adam_step, make_rng

log = logging.getLogger(__name__)

RELATION_STRATEGIES = {
    "contrastive": ("contrastive",),
    "similar": ("trueskill", "arrival"),
    "reflexive": ("reflexive",),
}
DEFAULT_RELATION_ORDER = ("contrastive", "similar", "reflexive")

ALPHA_EPS = 1e-10
SCORE_CLIP = 50.0
DIVERGENCE_LIMIT = 1e6


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    gamma1: float = 0.05
    gamma2: float = 0.01
    dropout: float = 0.5
    trueskill_margin: float = 4.0
    arrival_threshold: float = 0.95
    lambda_max: float = 1.0
    anneal_tau: float = 0.0  # 0 means epochs / 5
    test_fraction: float = 0.2
    seed: int = 0
    relation_order: tuple = DEFAULT_RELATION_ORDER

    def __post_init__(self):
        if isinstance(self.relation_order, str):
            self.relation_order = tuple(
                token.strip() for token in self.relation_order.split(",") if token.strip()
            )
        else:
            self.relation_order = tuple(self.relation_order)
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not self.relation_order:
            raise ConfigError("relation_order must name at least one relation type")
        for name in self.relation_order:
            if name not in RELATION_STRATEGIES:
                raise ConfigError(
                    f"unknown relation type {name!r}; expected one of "
                    f"{sorted(RELATION_STRATEGIES)}"
                )
        if len(set(self.relation_order)) != len(self.relation_order):
            raise ConfigError("relation_order contains duplicates")
        if self.lambda_max < 0 or self.anneal_tau < 0:
            raise ConfigError("annealing parameters must be nonnegative")

    @property
    def effective_tau(self):
        return self.anneal_tau if self.anneal_tau > 0 else max(self.epochs / 5.0, 1.0)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "relation_order":
                value = ",".join(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            f = known[key]
            if f.name == "relation_order":
                values[key] = value
            elif f.type == "int" or f.name in ("epochs", "seed"):
                values[key] = int(value)
            else:
                values[key] = float(value)
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def anneal_lambda(t, lambda_max, tau):
    """Annealing schedule: 0 at t = 0, rising toward lambda_max."""
    return lambda_max * (1.0 - np.exp(-float(t) / float(tau)))


# ---------------------------------------------------------------------------
# Algorithm core

def compute_alpha(y, h_relation, e):
    """Half log-odds of exponentially weighted correct vs incorrect mass.

    Entries with y * h exactly zero count toward neither side. The epsilon
    keeps the ratio finite when one side is empty.
    """
    yh = np.asarray(y).ravel() * np.asarray(h_relation).ravel()
    e = np.asarray(e).ravel()
    correct = float(e[yh > 0].sum())
    incorrect = float(e[yh < 0].sum())
    return 0.5 * float(np.log((correct + ALPHA_EPS) / (incorrect + ALPHA_EPS)))


def boost_scores(relation_scores, y, sample_idx=None, alphas=None):
    """Aggregate per-relation scores into the boosted score.

    relation_scores: ordered list of (name, scores (N,1)) pairs.
    sample_idx restricts the alpha statistics (training tuples); alphas, when
    given, freezes the weights instead of computing them, which is how
    inference runs without consuming labels.

    Returns (boosted (N,1), alphas dict, clipped entry count).
    """
    first = relation_scores[0][1]
    boosted = np.zeros_like(first, dtype=np.float64)
    out_alphas = {}
    clipped = 0
    y_col = None
    if alphas is None:
        y_col = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    for name, h_r in relation_scores:
        if alphas is not None:
            a = float(alphas[name])
        else:
            idx = slice(None) if sample_idx is None else np.asarray(sample_idx)
            h_sub = boosted[idx]
            clipped += int((np.abs(h_sub) > SCORE_CLIP).sum())
            e = np.exp(-y_col[idx] * np.clip(h_sub, -SCORE_CLIP, SCORE_CLIP))
            a = compute_alpha(y_col[idx], h_r[idx], e)
        out_alphas[name] = a
        boosted = boosted + a * h_r
    return boosted, out_alphas, clipped


def exp_loss_and_grad(y, h, idx):
    """Sum of exp(-y * h) over idx and its gradient w.r.t. h (full shape).

    Scores are clipped to +-SCORE_CLIP before the exponential; the gradient is
    zero where the clip is active. Returns (value, grad, clipped count).
    """
    y_col = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    grad = np.zeros_like(h)
    h_sub = h[idx]
    y_sub = y_col[idx]
    clipped_mask = np.abs(h_sub) > SCORE_CLIP
    e = np.exp(-y_sub * np.clip(h_sub, -SCORE_CLIP, SCORE_CLIP))
    value = float(e.sum())
    grad[idx] = np.where(clipped_mask, 0.0, -y_sub * e)
    return value, grad, int(clipped_mask.sum())


# ---------------------------------------------------------------------------
# Model

@dataclass
class Relation:
    name: str
    weights: RelationWeights
    strategies: list  # of StrategyStack sharing `weights`


@dataclass
class Model:
    relations: list  # ordered Relation objects
    d_in: int
    config: TrainConfig
    alphas: dict = field(default_factory=dict)  # frozen after training

    @property
    def relation_names(self):
        return [r.name for r in self.relations]

    def strategy_names(self):
        return [s.name for r in self.relations for s in r.strategies]

    def parameters(self):
        """Ordered (key, array) pairs: shared layers first, then score maps."""
        out = []
        for rel in self.relations:
            for k, w in enumerate(rel.weights.ws):
                out.append(((rel.name, k), w))
            for s in rel.strategies:
                out.append(((s.name, "score"), s.score_w))
        return out


def init_model(d_in, config, rng):
    relations = []
    for name in config.relation_order:
        weights = RelationWeights.init(d_in, rng)
        strategies = [
            StrategyStack.init(strategy, weights, rng)
            for strategy in RELATION_STRATEGIES[name]
        ]
        relations.append(Relation(name=name, weights=weights, strategies=strategies))
    return Model(relations=relations, d_in=d_in, config=config)


@dataclass
class ForwardResult:
    boosted: np.ndarray  # (N, 1)
    relation_scores: dict  # name -> (N, 1)
    alphas: dict
    caches: dict  # relation name -> {strategy name -> StackCache}
    clipped: int

    def embeddings(self):
        return {
            strategy: cache.embedding
            for rel_caches in self.caches.values()
            for strategy, cache in rel_caches.items()
        }


def model_forward(
    model, x, partitions, y=None, sample_idx=None, frozen_alphas=None,
    train=False, rng=None,
):
    """Run every relation and aggregate with boosting.

    With frozen_alphas the labels y are not consulted at all; otherwise alpha
    statistics use y restricted to sample_idx.
    """
    scores = []
    caches = {}
    for rel in model.relations:
        h_r, rel_caches = relation_score(
            rel.strategies, x, partitions,
            train=train, dropout=model.config.dropout, rng=rng,
        )
        scores.append((rel.name, h_r))
        caches[rel.name] = rel_caches
    boosted, alphas, clipped = boost_scores(
        scores, y, sample_idx=sample_idx, alphas=frozen_alphas
    )
    return ForwardResult(
        boosted=boosted,
        relation_scores=dict(scores),
        alphas=alphas,
        caches=caches,
        clipped=clipped,
    )


@dataclass
class LossBreakdown:
    total: float
    boosted: float
    l1: float
    l2: float
    relation_exp: dict
    alignment: dict
    lambda_t: float


def loss_and_grads(model, fwd, y, loss_idx, lambda_t, partitions):
    """Full training loss and gradients for every parameter.

    Alphas are taken from fwd and held constant. Loss sums run over loss_idx
    only; the elastic-net terms cover each shared layer-weight group once.
    Returns (LossBreakdown, grads dict keyed like Model.parameters()).
    """
    cfg = model.config
    idx = np.asarray(loss_idx)
    boosted_val, d_boosted, _ = exp_loss_and_grad(y, fwd.boosted, idx)

    l1 = sum(float(np.abs(w).sum()) for rel in model.relations for w in rel.weights.ws)
    l2 = sum(float((w * w).sum()) for rel in model.relations for w in rel.weights.ws)

    relation_exp = {}
    alignment = {}
    grads = {}
    total = boosted_val + cfg.gamma1 * l1 + cfg.gamma2 * l2
    for rel in model.relations:
        h_r = fwd.relation_scores[rel.name]
        rel_val, d_rel_direct, _ = exp_loss_and_grad(y, h_r, idx)
        relation_exp[rel.name] = rel_val
        d_h_r = fwd.alphas[rel.name] * d_boosted + lambda_t * d_rel_direct

        align_val = 0.0
        d_embeddings = {}
        if len(rel.strategies) > 1:
            embeds = {
                s.name: fwd.caches[rel.name][s.name].embedding for s in rel.strategies
            }
            names = [s.name for s in rel.strategies]
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    diff = embeds[names[i]] - embeds[names[j]]
                    norm = float(np.sqrt((diff * diff).sum()))
                    align_val += norm
                    if norm > 0.0:
                        g = lambda_t * diff / norm
                        d_embeddings[names[i]] = d_embeddings.get(names[i], 0.0) + g
                        d_embeddings[names[j]] = d_embeddings.get(names[j], 0.0) - g
        alignment[rel.name] = align_val
        total += lambda_t * (rel_val + align_val)

        d_shared, d_score_ws = relation_backward(
            rel.strategies,
            partitions,
            fwd.caches[rel.name],
            d_h_r,
            d_embeddings or None,
        )
        for k, w in enumerate(rel.weights.ws):
            grads[(rel.name, k)] = (
                d_shared[k] + cfg.gamma1 * np.sign(w) + 2.0 * cfg.gamma2 * w
            )
        for s in rel.strategies:
            grads[(s.name, "score")] = d_score_ws[s.name]

    breakdown = LossBreakdown(
        total=float(total),
        boosted=boosted_val,
        l1=l1,
        l2=l2,
        relation_exp=relation_exp,
        alignment=alignment,
        lambda_t=lambda_t,
    )
    return breakdown, grads


# ---------------------------------------------------------------------------
# Training loop

class TrainingDiverged(NumericError):
    """Loss blew past the divergence guard; carries the history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def _sign_accuracy(y, h, idx):
    yh = np.asarray(y, dtype=np.float64)[idx] * np.asarray(h).ravel()[idx]
    return float(np.mean(yh > 0))


HISTORY_BASE_COLUMNS = (
    "epoch", "loss_total", "loss_boosted", "loss_l1", "loss_l2",
    "loss_relation_exp", "loss_alignment", "lambda", "train_acc", "val_acc",
)


def history_columns(relation_names):
    return list(HISTORY_BASE_COLUMNS) + [f"alpha_{name}" for name in relation_names]


def history_to_csv(history, relation_names):
    lines = [",".join(history_columns(relation_names))]
    for row in history:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in history_columns(relation_names)))
    return "\n".join(lines) + "\n"


def fit_model(ds, partitions, train_idx, config, loss_idx=None, val_idx=None):
    """Train a boosted model on the given dataset and views.

    train_idx selects training tuples; loss_idx (default train_idx) restricts
    the labeled set that the loss and the alpha statistics consume, which is
    how label-sparsity runs mask labels without touching the graph structure.
    val_idx, when given, adds a held-out accuracy column to the history.

    Returns (model, history). The frozen alphas on the returned model come
    from a final clean forward pass (no dropout) over the training labels.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    loss_idx = train_idx if loss_idx is None else np.asarray(loss_idx, dtype=np.int64)
    if loss_idx.size == 0:
        raise ConfigError("no labeled tuples to train on")
    rng = make_rng(config.seed)
    model = init_model(ds.n_features, config, rng)
    states = {
        key: AdamState.for_param(param, lr=config.lr)
        for key, param in model.parameters()
    }
    history = []
    clip_warnings = 0
    for epoch in range(config.epochs):
        fwd = model_forward(
            model, ds.x, partitions, y=ds.y, sample_idx=loss_idx,
            train=True, rng=rng,
        )
        lambda_t = anneal_lambda(epoch, config.lambda_max, config.effective_tau)
        breakdown, grads = loss_and_grads(
            model, fwd, ds.y, loss_idx, lambda_t, partitions
        )
        clip_warnings += fwd.clipped
        if not np.isfinite(breakdown.total) or breakdown.total > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"loss {breakdown.total} at epoch {epoch} tripped the divergence guard",
                history,
            )
        for rel in model.relations:
            for k in range(len(rel.weights.ws)):
                key = (rel.name, k)
                rel.weights.ws[k] = adam_step(rel.weights.ws[k], grads[key], states[key])
            for s in rel.strategies:
                key = (s.name, "score")
                s.score_w = adam_step(s.score_w, grads[key], states[key])

        clean = model_forward(
            model, ds.x, partitions, y=ds.y, sample_idx=loss_idx, train=False
        )
        row = {
            "epoch": epoch,
            "loss_total": breakdown.total,
            "loss_boosted": breakdown.boosted,
            "loss_l1": breakdown.l1,
            "loss_l2": breakdown.l2,
            "loss_relation_exp": float(sum(breakdown.relation_exp.values())),
            "loss_alignment": float(sum(breakdown.alignment.values())),
            "lambda": lambda_t,
            "train_acc": _sign_accuracy(ds.y, clean.boosted, train_idx),
            "val_acc": (
                _sign_accuracy(ds.y, clean.boosted, val_idx)
                if val_idx is not None and len(val_idx) else float("nan")
            ),
        }
        for name, alpha in fwd.alphas.items():
            row[f"alpha_{name}"] = alpha
        history.append(row)
    final = model_forward(
        model, ds.x, partitions, y=ds.y, sample_idx=loss_idx, train=False
    )
    model.alphas = dict(final.alphas)
    if clip_warnings:
        log.warning("clipped %d overflowing boosted scores during training", clip_warnings)
    return model, history


def score_model(model, x, partitions):
    """Inference with the frozen alphas; consumes no labels."""
    if not model.alphas:
        raise ConfigError("model has no frozen alphas; train it first")
    return model_forward(model, x, partitions, frozen_alphas=model.alphas, train=False)
