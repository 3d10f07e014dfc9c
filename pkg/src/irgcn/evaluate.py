"""Metrics, diagnostics and experiment runners.

Accuracy counts a tuple as correct only when the sign of its boosted score
matches the label strictly; a score of exactly zero is wrong. MRR ranks each
question's answers by descending score with canonical order breaking ties.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .boost import fit_model, score_model
from .errors import DataError
from .numcore import derive_rng

log = logging.getLogger(__name__)

CLIQUE_BIN_MERGE = 8  # questions with this many answers or more share a bin


def worker_count():
    """Worker cap for parallel experiment points (IRGCN_THREADS overrides)."""
    value = os.environ.get("IRGCN_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def accuracy(y, scores):
    y = np.asarray(y, dtype=np.float64).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if y.size == 0:
        raise DataError("cannot compute accuracy of an empty set")
    return float(np.mean(y * scores > 0))


def label_prior_rate(y):
    """Accuracy of the best constant prediction (majority-class rate)."""
    y = np.asarray(y).ravel()
    pos = float(np.mean(y == 1))
    return max(pos, 1.0 - pos)


def _test_questions(ds, test_idx):
    test_set = set(int(i) for i in np.asarray(test_idx).ravel())
    return [
        (qid, span) for qid, span in ds.question_spans.items() if span[0] in test_set
    ]


def mrr(ds, scores, test_idx):
    """Mean reciprocal rank of the accepted answer over the test questions."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    questions = _test_questions(ds, test_idx)
    if not questions:
        raise DataError("no test questions")
    total = 0.0
    for _qid, (start, stop) in questions:
        order = np.argsort(-scores[start:stop], kind="stable")
        accepted = int(np.flatnonzero(ds.y[start:stop] == 1)[0])
        rank = int(np.flatnonzero(order == accepted)[0]) + 1
        total += 1.0 / rank
    return total / len(questions)


def clique_binned_accuracy(ds, scores, test_idx, merge_at=CLIQUE_BIN_MERGE):
    """Accuracy per question size over the test tuples; sizes >= merge_at pool."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    correct = {}
    counts = {}
    for _qid, (start, stop) in _test_questions(ds, test_idx):
        size = stop - start
        key = min(size, merge_at)
        hits = int((ds.y[start:stop] * scores[start:stop] > 0).sum())
        correct[key] = correct.get(key, 0) + hits
        counts[key] = counts.get(key, 0) + size
    return {
        size: (correct[size] / counts[size], counts[size])
        for size in sorted(counts)
    }


def misclassified_set(y, scores, idx):
    """Tuple indices (within idx) whose score sign disagrees with the label."""
    idx = np.asarray(idx, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    bad = idx[(y[idx] * scores[idx]) <= 0]
    return frozenset(int(i) for i in bad)


def misclassification_jaccard(y, scores_a, scores_b, idx):
    """Jaccard overlap of two relations' misclassified tuple sets (1 if both empty)."""
    m_a = misclassified_set(y, scores_a, idx)
    m_b = misclassified_set(y, scores_b, idx)
    union = m_a | m_b
    if not union:
        return 1.0
    return len(m_a & m_b) / len(union)


@dataclass
class EvalReport:
    accuracy: float
    mrr: float
    clique_bins: dict  # size -> (accuracy, tuple count)
    misclassified: tuple  # sorted tuple indices
    jaccard: dict  # "relA|relB" -> overlap
    n_test: int
    seed: int
    config_hash: str
    extras: dict = field(default_factory=dict)

    def rows(self):
        yield ("config_hash", self.config_hash)
        yield ("seed", self.seed)
        yield ("n_test", self.n_test)
        yield ("accuracy", repr(self.accuracy))
        yield ("mrr", repr(self.mrr))
        for size, (acc, count) in self.clique_bins.items():
            yield (f"clique_{size}_accuracy", repr(acc))
            yield (f"clique_{size}_count", count)
        for pair, value in self.jaccard.items():
            yield (f"jaccard_{pair}", repr(value))
        for key, value in self.extras.items():
            yield (key, repr(value) if isinstance(value, float) else value)
        yield ("n_misclassified", len(self.misclassified))

    def to_csv(self):
        lines = ["metric,value"]
        lines.extend(f"{key},{value}" for key, value in self.rows())
        return "\n".join(lines) + "\n"

    def summary(self):
        bins = ", ".join(
            f"{size}:{acc:.3f}({count})"
            for size, (acc, count) in self.clique_bins.items()
        )
        return (
            f"accuracy {self.accuracy:.4f} | mrr {self.mrr:.4f} | "
            f"test tuples {self.n_test} | per-size accuracy {bins}"
        )


def evaluate_model(model, ds, views, test_idx, extras=None):
    """Score a trained model on the test fold and assemble the report.

    Inference runs with frozen alphas on a dataset whose test labels are
    masked out, and the masked scores are checked against the unmasked ones;
    labels enter only in the metric computations below.
    """
    test_idx = np.asarray(test_idx, dtype=np.int64)
    masked = ds.with_masked_labels(test_idx)
    fwd = score_model(model, masked.x, views)
    audit = score_model(model, ds.x, views)
    if not np.array_equal(fwd.boosted, audit.boosted):
        raise DataError("label-access audit failed: masked labels changed inference")
    scores = fwd.boosted.ravel()
    jaccard = {}
    names = list(fwd.relation_scores)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            value = misclassification_jaccard(
                ds.y,
                fwd.relation_scores[names[i]],
                fwd.relation_scores[names[j]],
                test_idx,
            )
            jaccard[f"{names[i]}|{names[j]}"] = value
    report = EvalReport(
        accuracy=accuracy(ds.y[test_idx], scores[test_idx]),
        mrr=mrr(ds, scores, test_idx),
        clique_bins=clique_binned_accuracy(ds, scores, test_idx),
        misclassified=tuple(sorted(misclassified_set(ds.y, scores, test_idx))),
        jaccard=jaccard,
        n_test=int(test_idx.size),
        seed=model.config.seed,
        config_hash=model.config.config_hash(),
        extras=dict(extras or {}),
    )
    return report


# ---------------------------------------------------------------------------
# Experiment runners

def ablation_run(ds, views, train_idx, test_idx, config, subsets):
    """Train and evaluate one model per relation subset.

    Subsets are tuples of relation type names; order within a subset follows
    the configured relation order. Returns {subset label: EvalReport}.
    """
    jobs = []
    for subset in subsets:
        if not subset:
            raise DataError("ablation subset must not be empty")
        order = tuple(name for name in config.relation_order if name in subset)
        if len(order) != len(subset):
            missing = set(subset) - set(order)
            raise DataError(f"subset names {sorted(missing)} not in configured relations")
        jobs.append((subset, replace(config, relation_order=order)))

    def run(job):
        subset, sub_config = job
        model, _history = fit_model(ds, views, train_idx, sub_config, val_idx=test_idx)
        return "+".join(subset), evaluate_model(model, ds, views, test_idx)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, jobs))
    return dict(results)


def sparsity_labeled_indices(ds, train_idx, rate, seed):
    """Pick ceil(rate * train questions) labeled questions, nested across rates."""
    train_set = set(int(i) for i in np.asarray(train_idx).ravel())
    train_qids = [
        qid for qid, span in ds.question_spans.items() if span[0] in train_set
    ]
    n_label = int(np.ceil(rate * len(train_qids)))
    if n_label < 2:
        return None, 0
    rng = derive_rng(seed, 104729)  # fixed stream: same ordering for every rate
    order = rng.permutation(len(train_qids))
    chosen = {train_qids[i] for i in order[:n_label]}
    spans = ds.question_spans
    labeled = []
    for qid in ds.question_order:
        if qid in chosen:
            labeled.extend(range(*spans[qid]))
    return np.array(labeled, dtype=np.int64), n_label


def label_sparsity_sweep(ds, views, train_idx, test_idx, config, rates):
    """Retrain from scratch per label rate; views and split stay fixed.

    Rates yielding fewer than two labeled questions are skipped with a
    warning. Returns {rate: (EvalReport, labeled question count)}.
    """
    jobs = []
    for rate in rates:
        if not 0.0 < rate <= 1.0:
            raise DataError(f"label rate must lie in (0, 1], got {rate}")
        labeled, n_label = sparsity_labeled_indices(ds, train_idx, rate, config.seed)
        if labeled is None:
            log.warning("rate %g yields fewer than 2 labeled questions, skipped", rate)
            continue
        jobs.append((rate, labeled, n_label))

    def run(job):
        rate, labeled, n_label = job
        model, _history = fit_model(
            ds, views, train_idx, config, loss_idx=labeled, val_idx=test_idx
        )
        report = evaluate_model(
            model, ds, views, test_idx,
            extras={"label_rate": rate, "labeled_questions": n_label},
        )
        return rate, (report, n_label)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, jobs))
    return dict(results)


def export_embeddings(model, ds, views, path):
    """Write each strategy's final-layer embeddings as one CSV table."""
    fwd = score_model(model, ds.x, views)
    embeddings = fwd.embeddings()
    strategy_order = [s.name for rel in model.relations for s in rel.strategies]
    d = embeddings[strategy_order[0]].shape[1]
    header = "tuple,strategy," + ",".join(f"e{k}" for k in range(d))
    lines = [header]
    for name in strategy_order:
        z = embeddings[name]
        for i in range(ds.n):
            values = ",".join(repr(float(v)) for v in z[i])
            lines.append(f"{i},{name},{values}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines) - 1
