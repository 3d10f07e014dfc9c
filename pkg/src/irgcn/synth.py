"""Synthetic dataset generators for controlled experiments.

Both presets draw a latent quality per answer and label the best answer of
every question as accepted, so the concept is a within-question comparison.

* ``contrastive``: observable answer features carry quality only on top of a
  large question-level offset, so models that read tuples in isolation see
  mostly noise while within-question contrast exposes the label. Authors are
  all distinct and arrival times are independent of quality, which starves
  the similarity views of signal.
* ``mixed``: answer quality follows a persistent author skill and better
  answers tend to arrive earlier, so skill and arrival similarity views (and
  to a lesser degree per-tuple features) carry signal too.
"""

import numpy as np

from .errors import ConfigError
from .ingest import QATuple, dataset_from_tuples
from .numcore import make_rng

PRESETS = ("contrastive", "mixed")

_ANSWER_COUNTS = (2, 3, 4, 5)
_ANSWER_COUNT_P = (0.55, 0.25, 0.12, 0.08)

_QUESTION_AUTHOR_BASE = 10_000_000


def synth_dataset(preset, questions, seed):
    """Generate a raw (unstandardized) synthetic dataset."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if questions < 5:
        raise ConfigError("need at least 5 questions")
    rng = make_rng(seed)
    mixed = preset == "mixed"

    if mixed:
        n_users = max(30, questions // 3)
        user_skill = rng.normal(0.0, 1.0, size=n_users)

    tuples = []
    answer_id = 1
    base_ts = 1_300_000_000.0
    for q in range(1, questions + 1):
        n = int(rng.choice(_ANSWER_COUNTS, p=_ANSWER_COUNT_P))
        question_ts = base_ts + q * 10_000.0 + rng.uniform(0.0, 1_000.0)

        if mixed:
            authors = rng.choice(n_users, size=n, replace=False)
            quality = 0.35 * user_skill[authors] + rng.normal(0.0, 1.0, size=n)
        else:
            authors = None
            quality = rng.normal(0.0, 1.0, size=n)
        accepted = int(np.argmax(quality))

        # Question-level channels, identical for every answer of the question.
        q_views = float(np.round(np.exp(rng.normal(6.0, 1.0))))
        q_comments = float(rng.poisson(2.0))
        q_paragraphs = 1.0 + float(rng.poisson(2.0))
        q_words = float(np.round(np.exp(rng.normal(4.5, 0.6))))
        q_code = float(rng.random() < 0.3)
        title_words = 4.0 + float(rng.poisson(5.0))
        q_aboutme = float(np.round(np.exp(rng.normal(3.0, 1.0))))
        offset_words = rng.normal(0.0, 1.0)
        offset_comments = rng.normal(0.0, 1.0)
        offset_paragraphs = rng.normal(0.0, 1.0)
        pace = np.exp(rng.normal(np.log(3600.0), 1.0))

        if mixed:
            gaps = pace * np.exp(-0.3 * quality + rng.normal(0.0, 0.6, size=n))
        else:
            gaps = pace * np.exp(rng.normal(0.0, 0.8, size=n))
        ranks = np.empty(n, dtype=np.int64)
        ranks[np.argsort(gaps, kind="stable")] = np.arange(1, n + 1)

        quality_coeff = 12.0 if mixed else 28.0
        words_noise = 8.0 if mixed else 3.0
        answer_words = (
            80.0 + 80.0 * offset_words + quality_coeff * quality
            + rng.normal(0.0, words_noise, size=n)
        )
        answer_comments = (
            2.0 + 2.0 * offset_comments + (0.9 if mixed else 1.6) * quality
            + rng.normal(0.0, 0.8 if mixed else 0.5, size=n)
        )
        answer_paragraphs = (
            3.0 + 1.5 * offset_paragraphs + (0.4 if mixed else 0.8) * quality
            + rng.normal(0.0, 0.5 if mixed else 0.3, size=n)
        )
        answer_code = (rng.random(size=n) < 0.4).astype(np.float64)
        if mixed:
            answer_aboutme = 40.0 + 4.0 * user_skill[authors] + rng.normal(0.0, 8.0, size=n)
        else:
            answer_aboutme = 40.0 + rng.normal(0.0, 15.0, size=n)

        for a in range(n):
            features = np.array(
                [
                    q_views,
                    q_comments,
                    answer_comments[a],
                    np.log1p(gaps[a]),
                    float(ranks[a]),
                    q_paragraphs,
                    answer_paragraphs[a],
                    q_words,
                    answer_words[a],
                    q_code,
                    answer_code[a],
                    title_words,
                    q_aboutme,
                    answer_aboutme[a],
                ],
                dtype=np.float64,
            )
            tuples.append(
                QATuple(
                    question_id=q,
                    answer_id=answer_id,
                    question_author=_QUESTION_AUTHOR_BASE + q,
                    answer_author=int(authors[a]) if mixed else 100_000 + answer_id,
                    label=1 if a == accepted else -1,
                    features=features,
                    question_ts=question_ts,
                    answer_ts=question_ts + float(gaps[a]),
                )
            )
            answer_id += 1
    return dataset_from_tuples(tuples)
