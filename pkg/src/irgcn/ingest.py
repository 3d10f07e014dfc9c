"""StackExchange dump ingestion.

Parses Posts.xml / Users.xml, assembles one (question, answer) tuple per
answer of every question that has an accepted answer and at least two
answers, extracts the 14 activity/text/user features, and standardizes with
a question-level train/test split.

The on-disk dataset container is a little-endian binary file (see
``write_dataset`` for the exact layout, also documented in the README).
"""

import logging
import re
import struct
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .errors import DataError, FormatError
from .numcore import make_rng

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "question_views",
    "question_comments",
    "answer_comments",
    "log_time_gap",
    "arrival_rank",
    "question_paragraphs",
    "answer_paragraphs",
    "question_words",
    "answer_words",
    "question_has_code",
    "answer_has_code",
    "title_words",
    "questioner_aboutme_words",
    "answerer_aboutme_words",
)
N_FEATURES = len(FEATURE_NAMES)

DATASET_MAGIC = b"IRGD"
DATASET_VERSION = 1

# Posts without an OwnerUserId (deleted accounts) get a unique synthetic
# author id so they never join a per-author clique.
_SYNTHETIC_AUTHOR_BASE = -1_000_000


@dataclass
class RawPost:
    id: int
    post_type: str  # "question" | "answer"
    creation_ts: float
    body: str = ""
    title: str = ""
    parent_id: int | None = None
    accepted_answer_id: int | None = None
    view_count: int = 0
    comment_count: int = 0
    owner_user_id: int | None = None


@dataclass
class RawUser:
    id: int
    about_me: str = ""


@dataclass
class QATuple:
    question_id: int
    answer_id: int
    question_author: int
    answer_author: int
    label: int  # +1 accepted, -1 otherwise
    features: np.ndarray
    question_ts: float
    answer_ts: float


@dataclass
class Dataset:
    """Canonically ordered (question, answer) tuples as flat arrays.

    Tuples are sorted by (question_id, answer_ts, answer_id); each question's
    tuples occupy one contiguous index range recorded in ``question_spans``.
    """

    x: np.ndarray  # (N, 14) float64
    y: np.ndarray  # (N,) int8, values +-1
    question_id: np.ndarray  # (N,) int64
    answer_id: np.ndarray  # (N,) int64
    question_author: np.ndarray  # (N,) int64
    answer_author: np.ndarray  # (N,) int64
    question_ts: np.ndarray  # (N,) float64
    answer_ts: np.ndarray  # (N,) float64
    standardized: bool = False
    feature_means: np.ndarray = None
    feature_stds: np.ndarray = None

    def __post_init__(self):
        if self.feature_means is None:
            self.feature_means = np.zeros(self.x.shape[1])
        if self.feature_stds is None:
            self.feature_stds = np.ones(self.x.shape[1])

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def question_spans(self):
        """Ordered map question_id -> (start, stop) index range."""
        spans = {}
        qid = self.question_id
        start = 0
        for i in range(1, self.n + 1):
            if i == self.n or qid[i] != qid[start]:
                spans[int(qid[start])] = (start, i)
                start = i
        return spans

    @property
    def question_order(self):
        return list(self.question_spans.keys())

    def with_masked_labels(self, indices):
        """Copy with labels zeroed at the given indices.

        Inference with frozen boosting weights never consumes labels; this
        masked copy lets the evaluation path audit that claim by comparing
        scores computed with and without the test labels present.
        """
        y = self.y.copy()
        y[np.asarray(indices, dtype=np.int64)] = 0
        return replace(self, y=y)


# ---------------------------------------------------------------------------
# XML parsing

def _parse_timestamp(text):
    # Dump timestamps are UTC without a zone suffix, e.g. 2015-09-01T12:00:00.123
    return datetime.fromisoformat(text).replace(tzinfo=timezone.utc).timestamp()


def _iter_rows(path):
    # Stream row elements without loading the file; clear as we go.
    from xml.etree import ElementTree

    for _event, elem in ElementTree.iterparse(path, events=("end",)):
        if elem.tag == "row":
            yield dict(elem.attrib)
            elem.clear()


def parse_posts(path):
    """Stream Posts.xml into RawPost records. Returns (posts, skipped_count).

    Rows missing required attributes are skipped and counted; post types other
    than question/answer are ignored silently (they are valid dump rows that
    simply do not participate).
    """
    posts = []
    skipped = 0
    for row in _iter_rows(path):
        try:
            post_id = int(row["Id"])
            type_id = row["PostTypeId"]
            ts = _parse_timestamp(row["CreationDate"])
            if type_id == "1":
                post = RawPost(
                    id=post_id,
                    post_type="question",
                    creation_ts=ts,
                    body=row.get("Body", ""),
                    title=row.get("Title", ""),
                    accepted_answer_id=_opt_int(row.get("AcceptedAnswerId")),
                    view_count=int(row.get("ViewCount", 0)),
                    comment_count=int(row.get("CommentCount", 0)),
                    owner_user_id=_opt_int(row.get("OwnerUserId")),
                )
            elif type_id == "2":
                post = RawPost(
                    id=post_id,
                    post_type="answer",
                    creation_ts=ts,
                    body=row.get("Body", ""),
                    parent_id=int(row["ParentId"]),
                    comment_count=int(row.get("CommentCount", 0)),
                    owner_user_id=_opt_int(row.get("OwnerUserId")),
                )
            else:
                continue
        except (KeyError, ValueError):
            skipped += 1
            continue
        posts.append(post)
    if skipped:
        log.warning("skipped %d malformed post rows in %s", skipped, path)
    return posts, skipped


def parse_users(path):
    users = []
    skipped = 0
    for row in _iter_rows(path):
        try:
            user_id = int(row["Id"])
        except (KeyError, ValueError):
            skipped += 1
            continue
        users.append(RawUser(id=user_id, about_me=row.get("AboutMe", "")))
    if skipped:
        log.warning("skipped %d malformed user rows in %s", skipped, path)
    return users, skipped


def parse_dump(posts_path, users_path):
    """Parse a community dump. Returns (posts, users)."""
    posts, _ = parse_posts(posts_path)
    users, _ = parse_users(users_path)
    if not posts:
        raise DataError(f"no valid post rows in {posts_path}")
    return posts, users


def _opt_int(value):
    return None if value is None else int(value)


# ---------------------------------------------------------------------------
# Feature extraction

_TAG_RE = re.compile(r"<[^>]*>")
_PARA_RE = re.compile(r"<p[\s>/]", re.IGNORECASE)
_CODE_RE = re.compile(r"<code[\s>/]", re.IGNORECASE)


def word_count(text):
    """Whitespace-separated segments after stripping HTML tags."""
    return len(_TAG_RE.sub(" ", text).split())


def paragraph_count(body):
    """Number of <p> elements, with a minimum of 1 for any nonempty body."""
    n = len(_PARA_RE.findall(body))
    if n == 0 and body.strip():
        return 1
    return n


def has_code(body):
    return 1.0 if _CODE_RE.search(body) else 0.0


def _author_id(post):
    if post.owner_user_id is not None:
        return post.owner_user_id
    return _SYNTHETIC_AUTHOR_BASE - post.id


def build_dataset(posts, users):
    """Assemble the tuple dataset with raw (unstandardized) features.

    Keeps questions whose accepted answer is present in the dump and that have
    at least two answers; single-answer questions carry no contrast and are
    dropped. Emits one tuple per answer, labeled +1 only for the accepted one.
    """
    # Attribute values arrive entity-decoded from the XML parser; do not
    # decode a second time.
    about_words = {u.id: word_count(u.about_me) for u in users}
    questions = {p.id: p for p in posts if p.post_type == "question"}
    answers_by_q = {}
    for p in posts:
        if p.post_type == "answer" and p.parent_id in questions:
            answers_by_q.setdefault(p.parent_id, []).append(p)

    tuples = []
    dropped_no_accept = 0
    dropped_missing_accept = 0
    dropped_single = 0
    for qid in sorted(questions):
        q = questions[qid]
        answers = answers_by_q.get(qid, [])
        if q.accepted_answer_id is None:
            dropped_no_accept += 1
            continue
        if q.accepted_answer_id not in {a.id for a in answers}:
            dropped_missing_accept += 1
            continue
        if len(answers) < 2:
            dropped_single += 1
            continue
        # Canonical within-question order: (answer_ts, answer_id); rank 1 is
        # the earliest answer, ties resolved by the smaller id.
        answers.sort(key=lambda a: (a.creation_ts, a.id))
        q_features = (
            float(q.view_count),
            float(q.comment_count),
            paragraph_count(q.body),
            word_count(q.body),
            has_code(q.body),
            word_count(q.title),
            float(about_words.get(q.owner_user_id, 0)),
        )
        for rank, a in enumerate(answers, start=1):
            gap = max(0.0, a.creation_ts - q.creation_ts)
            feats = np.array(
                [
                    q_features[0],
                    q_features[1],
                    float(a.comment_count),
                    np.log1p(gap),
                    float(rank),
                    q_features[2],
                    paragraph_count(a.body),
                    q_features[3],
                    word_count(a.body),
                    q_features[4],
                    has_code(a.body),
                    q_features[5],
                    q_features[6],
                    float(about_words.get(a.owner_user_id, 0)),
                ],
                dtype=np.float64,
            )
            tuples.append(
                QATuple(
                    question_id=qid,
                    answer_id=a.id,
                    question_author=_author_id(q),
                    answer_author=_author_id(a),
                    label=1 if a.id == q.accepted_answer_id else -1,
                    features=feats,
                    question_ts=q.creation_ts,
                    answer_ts=a.creation_ts,
                )
            )
    if dropped_no_accept or dropped_missing_accept or dropped_single:
        log.info(
            "dropped questions: %d without accepted answer, %d with accepted "
            "answer missing from dump, %d with a single answer",
            dropped_no_accept,
            dropped_missing_accept,
            dropped_single,
        )
    if not tuples:
        raise DataError("no usable questions (need an accepted answer and >= 2 answers)")
    return dataset_from_tuples(tuples)


def dataset_from_tuples(tuples):
    """Build a Dataset from QATuples, enforcing the canonical tuple order."""
    tuples = sorted(tuples, key=lambda t: (t.question_id, t.answer_ts, t.answer_id))
    n = len(tuples)
    ds = Dataset(
        x=np.stack([t.features for t in tuples]).astype(np.float64),
        y=np.array([t.label for t in tuples], dtype=np.int8),
        question_id=np.array([t.question_id for t in tuples], dtype=np.int64),
        answer_id=np.array([t.answer_id for t in tuples], dtype=np.int64),
        question_author=np.array([t.question_author for t in tuples], dtype=np.int64),
        answer_author=np.array([t.answer_author for t in tuples], dtype=np.int64),
        question_ts=np.array([t.question_ts for t in tuples], dtype=np.float64),
        answer_ts=np.array([t.answer_ts for t in tuples], dtype=np.float64),
    )
    for qid, (start, stop) in ds.question_spans.items():
        labels = ds.y[start:stop]
        if int((labels == 1).sum()) != 1:
            raise DataError(f"question {qid} must have exactly one accepted answer")
        if stop - start < 2:
            raise DataError(f"question {qid} has fewer than two answers")
    assert n == ds.n
    return ds


# ---------------------------------------------------------------------------
# Split and standardization

def split_by_question(ds, test_fraction=0.2, seed=0):
    """Question-level split: all tuples of a test question land in the test fold."""
    qids = ds.question_order
    if len(qids) < 5:
        raise DataError(f"need at least 5 questions to split, got {len(qids)}")
    n_test = int(round(test_fraction * len(qids)))
    n_test = min(max(n_test, 1), len(qids) - 1)
    rng = make_rng(seed)
    perm = rng.permutation(len(qids))
    test_qids = {qids[i] for i in perm[:n_test]}
    spans = ds.question_spans
    train_idx, test_idx = [], []
    for qid in qids:
        start, stop = spans[qid]
        (test_idx if qid in test_qids else train_idx).extend(range(start, stop))
    return np.array(train_idx, dtype=np.int64), np.array(test_idx, dtype=np.int64)


def standardize_and_split(ds, test_fraction=0.2, seed=0):
    """Split by question, then standardize features on training statistics only.

    Returns (train_idx, test_idx, standardized dataset). Zero-variance columns
    are centered but left unscaled.
    """
    train_idx, test_idx = split_by_question(ds, test_fraction, seed)
    means = ds.x[train_idx].mean(axis=0)
    stds = ds.x[train_idx].std(axis=0)
    scales = np.where(stds > 1e-12, stds, 1.0)
    x = (ds.x - means) / scales
    out = replace(ds, x=x, standardized=True, feature_means=means, feature_stds=scales)
    return train_idx, test_idx, out


# ---------------------------------------------------------------------------
# Binary container
#
# Layout (all little-endian):
#   magic "IRGD" | u16 version | u16 flags (bit0 = standardized)
#   u64 N | u32 d
#   f64[d] feature means | f64[d] feature stds
#   f64[N*d] X row-major | i8[N] Y
#   i64[N] question_id | i64[N] answer_id
#   i64[N] question_author | i64[N] answer_author
#   f64[N] question_ts | f64[N] answer_ts

def write_dataset(ds, path):
    with open(path, "wb") as fh:
        flags = 1 if ds.standardized else 0
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HHQI", DATASET_VERSION, flags, ds.n, ds.n_features))
        fh.write(ds.feature_means.astype("<f8").tobytes())
        fh.write(ds.feature_stds.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(ds.y.astype("<i1").tobytes())
        for arr in (ds.question_id, ds.answer_id, ds.question_author, ds.answer_author):
            fh.write(arr.astype("<i8").tobytes())
        for arr in (ds.question_ts, ds.answer_ts):
            fh.write(arr.astype("<f8").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: not a dataset file (magic {magic!r})")
        version, flags, n, d = struct.unpack("<HHQI", fh.read(16))
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")

        def read_array(dtype, count):
            dtype = np.dtype(dtype)
            buf = fh.read(dtype.itemsize * count)
            if len(buf) != dtype.itemsize * count:
                raise FormatError(f"{path}: truncated dataset file")
            return np.frombuffer(buf, dtype=dtype).copy()

        means = read_array("<f8", d)
        stds = read_array("<f8", d)
        x = read_array("<f8", n * d).reshape(n, d)
        y = read_array("<i1", n)
        qid = read_array("<i8", n)
        aid = read_array("<i8", n)
        qauth = read_array("<i8", n)
        aauth = read_array("<i8", n)
        qts = read_array("<f8", n)
        ats = read_array("<f8", n)
    return Dataset(
        x=x,
        y=y,
        question_id=qid,
        answer_id=aid,
        question_author=qauth,
        answer_author=aauth,
        question_ts=qts,
        answer_ts=ats,
        standardized=bool(flags & 1),
        feature_means=means,
        feature_stds=stds,
    )
