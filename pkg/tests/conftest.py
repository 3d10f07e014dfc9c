import pytest

from irgcn.ingest import QATuple, dataset_from_tuples
from irgcn.numcore import make_rng


def toy_dataset(questions, d=3, seed=0):
    """Build a small Dataset from per-question answer specs.

    questions: list of lists of (offset_seconds, author_id, label) triples,
    one inner list per question. Features are standard normal draws.
    """
    rng = make_rng(seed)
    tuples = []
    answer_id = 1
    for qi, answers in enumerate(questions, start=1):
        question_ts = 1.0e9 + qi * 100_000.0
        for offset, author, label in answers:
            tuples.append(
                QATuple(
                    question_id=qi,
                    answer_id=answer_id,
                    question_author=900_000 + qi,
                    answer_author=author,
                    label=label,
                    features=rng.normal(size=d),
                    question_ts=question_ts,
                    answer_ts=question_ts + float(offset),
                )
            )
            answer_id += 1
    return dataset_from_tuples(tuples)


def two_answer_questions(count, seed=0, d=3):
    """count questions with two answers each; the accepted one varies."""
    rng = make_rng(seed + 17)
    questions = []
    author = 1
    for i in range(count):
        first_wins = bool(rng.random() < 0.5)
        questions.append(
            [
                (60.0, author, 1 if first_wins else -1),
                (120.0, author + 1, -1 if first_wins else 1),
            ]
        )
        author += 2
    return toy_dataset(questions, d=d, seed=seed)


@pytest.fixture
def rng():
    return make_rng(12345)
