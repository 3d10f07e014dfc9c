"""Input validation helpers shared by the estimator and the CLI."""

import numpy as np

from .errors import DataError, DimensionError


def check_dataset(ds):
    """Structural checks: finite features, +-1 labels, contiguous question runs."""
    if ds.x.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-D, got shape {ds.x.shape}")
    if not np.isfinite(ds.x).all():
        raise DataError("feature matrix contains NaN or Inf")
    n = ds.x.shape[0]
    for name in ("y", "question_id", "answer_id", "question_author",
                 "answer_author", "question_ts", "answer_ts"):
        arr = getattr(ds, name)
        if arr.shape[0] != n:
            raise DimensionError(f"dataset field {name} has length {arr.shape[0]}, expected {n}")
    if not np.isin(ds.y, (-1, 1)).all():
        raise DataError("labels must be +1 or -1")
    qid = ds.question_id
    seen = set()
    prev = None
    for value in qid:
        value = int(value)
        if value != prev:
            if value in seen:
                raise DataError(f"question {value} appears in two separate runs")
            seen.add(value)
            prev = value
    for q, (start, stop) in ds.question_spans.items():
        if int((ds.y[start:stop] == 1).sum()) != 1:
            raise DataError(f"question {q} must have exactly one accepted answer")
    return ds


def check_indices(idx, n, name="indices"):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError(f"{name} out of range for {n} tuples")
    if np.unique(idx).size != idx.size:
        raise DataError(f"{name} contains duplicates")
    return idx


def check_views(partitions, n, required):
    missing = [name for name in required if name not in partitions]
    if missing:
        raise DataError(f"views missing strategies: {missing}")
    for name in required:
        partitions[name].validate(n)
    return partitions
