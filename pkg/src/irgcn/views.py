"""Induced relational views over (question, answer) tuples.

Each strategy partitions the tuple set into cliques (equivalence classes):

* reflexive       - every tuple is its own singleton clique
* contrastive     - one clique per question, covering all its answers
* trueskill       - tuples whose author out- or under-skills the question's
                    competitors by a margin share a per-(author, polarity) clique
* arrival         - tuples bucketed by how their relative arrival time
                    contrasts with competing answers

The TrueSkill fit consumes training questions only; acceptance labels define
match outcomes, so fitting on test questions would leak labels into the
induced graph.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, FormatError

SEMANTICS_CONTRASTIVE = "contrastive"
SEMANTICS_SIMILAR = "similar"
SEMANTICS_REFLEXIVE = "reflexive"

STRATEGY_SEMANTICS = {
    "reflexive": SEMANTICS_REFLEXIVE,
    "contrastive": SEMANTICS_CONTRASTIVE,
    "trueskill": SEMANTICS_SIMILAR,
    "arrival": SEMANTICS_SIMILAR,
}

# Default TrueSkill environment.
MU0 = 25.0
SIGMA0 = 25.0 / 3.0
BETA = 25.0 / 6.0
TAU = 25.0 / 300.0


@dataclass
class CliquePartition:
    strategy: str
    semantics: str
    clique_of: np.ndarray  # (N,) int64, tuple index -> clique id

    def __post_init__(self):
        self.clique_of = np.asarray(self.clique_of, dtype=np.int64)

    @property
    def n(self):
        return self.clique_of.shape[0]

    @property
    def n_cliques(self):
        return int(self.clique_of.max()) + 1 if self.n else 0

    @property
    def members(self):
        """Map clique id -> array of member tuple indices."""
        order = np.argsort(self.clique_of, kind="stable")
        sorted_ids = self.clique_of[order]
        boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
        groups = np.split(order, boundaries)
        return {int(sorted_ids[g[0]]): g for g in groups}

    def sizes(self):
        return np.bincount(self.clique_of, minlength=self.n_cliques)

    def size_histogram(self):
        """Map clique size -> number of cliques of that size."""
        sizes = self.sizes()
        hist = {}
        for s in sizes:
            hist[int(s)] = hist.get(int(s), 0) + 1
        return dict(sorted(hist.items()))

    def validate(self, n):
        if self.n != n:
            raise DimensionError(f"partition covers {self.n} tuples, dataset has {n}")
        if self.n == 0:
            return
        if self.clique_of.min() < 0:
            raise DataError(f"view {self.strategy}: negative clique id")
        present = np.unique(self.clique_of)
        if present.size != self.n_cliques:
            raise DataError(f"view {self.strategy}: clique ids are not contiguous")


def _compact_ids(raw_ids):
    """Relabel arbitrary clique keys to contiguous ids in first-seen order."""
    mapping = {}
    out = np.empty(len(raw_ids), dtype=np.int64)
    for i, key in enumerate(raw_ids):
        if key not in mapping:
            mapping[key] = len(mapping)
        out[i] = mapping[key]
    return out


def induce_reflexive(ds):
    return CliquePartition(
        strategy="reflexive",
        semantics=SEMANTICS_REFLEXIVE,
        clique_of=np.arange(ds.n, dtype=np.int64),
    )


def induce_contrastive(ds):
    clique_of = np.empty(ds.n, dtype=np.int64)
    for cid, (start, stop) in enumerate(ds.question_spans.values()):
        clique_of[start:stop] = cid
    return CliquePartition(
        strategy="contrastive",
        semantics=SEMANTICS_CONTRASTIVE,
        clique_of=clique_of,
    )


# ---------------------------------------------------------------------------
# TrueSkill

@dataclass
class Rating:
    mu: float = MU0
    sigma: float = SIGMA0


@dataclass
class SkillTable:
    ratings: dict = field(default_factory=dict)
    questions_consumed: int = 0

    def rating(self, user):
        return self.ratings.get(user, Rating())

    def skill(self, user):
        """Point estimate used downstream: the posterior mean."""
        return self.rating(user).mu


def _norm_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _v_win(t):
    denom = _norm_cdf(t)
    if denom < 1e-300:
        # Deep in the tail the ratio pdf/cdf approaches -t.
        return -t
    return _norm_pdf(t) / denom


def _w_win(t):
    v = _v_win(t)
    return v * (v + t)


def trueskill_update(winners, losers, beta=BETA, tau=TAU):
    """Two-team TrueSkill update: the winner team beats the loser team.

    Arguments are lists of Rating. Returns (new_winners, new_losers). Team
    performance is the sum of member performances; each member's dynamics
    noise tau is added before the update. No draw margin: the outcome is a
    strict win.
    """
    w_vars = [r.sigma**2 + tau**2 for r in winners]
    l_vars = [r.sigma**2 + tau**2 for r in losers]
    n_players = len(winners) + len(losers)
    c2 = sum(w_vars) + sum(l_vars) + n_players * beta**2
    c = math.sqrt(c2)
    delta = sum(r.mu for r in winners) - sum(r.mu for r in losers)
    t = delta / c
    v = _v_win(t)
    w = _w_win(t)
    new_winners = [
        Rating(r.mu + (var / c) * v, math.sqrt(var * (1.0 - (var / c2) * w)))
        for r, var in zip(winners, w_vars)
    ]
    new_losers = [
        Rating(r.mu - (var / c) * v, math.sqrt(var * (1.0 - (var / c2) * w)))
        for r, var in zip(losers, l_vars)
    ]
    return new_winners, new_losers


def fit_trueskill(ds, train_idx):
    """Rate answer authors from training questions, in chronological order.

    Per question the accepted answer's author beats the team of all other
    answering authors. Questions answered by a single author carry no match
    information and are skipped.
    """
    train_set = set(int(i) for i in np.asarray(train_idx).ravel())
    spans = ds.question_spans
    ordered = sorted(
        (qid for qid, (start, stop) in spans.items() if start in train_set),
        key=lambda qid: (ds.question_ts[spans[qid][0]], qid),
    )
    table = SkillTable()
    for qid in ordered:
        start, stop = spans[qid]
        idx = np.arange(start, stop)
        accepted = idx[ds.y[idx] == 1][0]
        winner = int(ds.answer_author[accepted])
        losers = []
        for i in idx:
            author = int(ds.answer_author[i])
            if author != winner and author not in losers:
                losers.append(author)
        if not losers:
            continue
        new_w, new_l = trueskill_update(
            [table.rating(winner)], [table.rating(u) for u in losers]
        )
        table.ratings[winner] = new_w[0]
        for user, rating in zip(losers, new_l):
            table.ratings[user] = rating
        table.questions_consumed += 1
    return table


def induce_trueskill(ds, skills, margin=4.0):
    """Similarity-by-skill-contrast view.

    A tuple whose author's skill exceeds (or trails) the mean skill of the
    question's competing authors by the margin joins that author's high (or
    low) clique; everything else stays a singleton.
    """
    keys = []
    singleton = 0
    for qid, (start, stop) in ds.question_spans.items():
        idx = range(start, stop)
        authors = [int(ds.answer_author[i]) for i in idx]
        for i, author in zip(idx, authors):
            competitor_skills = [
                skills.skill(a) for a in authors if a != author
            ]
            if not competitor_skills:
                keys.append(("single", singleton))
                singleton += 1
                continue
            diff = skills.skill(author) - float(np.mean(competitor_skills))
            if diff >= margin:
                keys.append(("high", author))
            elif diff <= -margin:
                keys.append(("low", author))
            else:
                keys.append(("single", singleton))
                singleton += 1
    return CliquePartition(
        strategy="trueskill",
        semantics=SEMANTICS_SIMILAR,
        clique_of=_compact_ids(keys),
    )


def relative_arrival(ds):
    """Relative arrival time of every answer within its question, in [0, 1].

    The earliest answer maps to 0 and the latest to 1 (min-max over the
    answer timestamps). If all answers of a question share one timestamp the
    whole question maps to 0.
    """
    r = np.zeros(ds.n, dtype=np.float64)
    for start, stop in ds.question_spans.values():
        ts = ds.answer_ts[start:stop]
        lo, hi = ts[0], ts[-1]
        if hi > lo:
            r[start:stop] = (ts - lo) / (hi - lo)
    return r


def arrival_contrast(ds):
    """Per tuple: relative arrival minus the mean over competing answers."""
    r = relative_arrival(ds)
    c = np.empty(ds.n, dtype=np.float64)
    for start, stop in ds.question_spans.values():
        seg = r[start:stop]
        n = stop - start
        total = seg.sum()
        c[start:stop] = seg - (total - seg) / (n - 1)
    return c


def induce_arrival(ds, threshold=0.95):
    """Similarity-by-arrival-contrast view.

    Contrast values lie in [-1, 1]; tuples are bucketed at width (1 - threshold)
    so any two members of a clique differ by less than that width. Bucketing
    is transitive by construction, keeping the view a true partition.
    """
    if not 0.0 <= threshold < 1.0:
        raise DataError(f"arrival similarity threshold must be in [0, 1), got {threshold}")
    c = arrival_contrast(ds)
    width = 1.0 - threshold
    buckets = np.floor((c + 1.0) / width).astype(np.int64)
    return CliquePartition(
        strategy="arrival",
        semantics=SEMANTICS_SIMILAR,
        clique_of=_compact_ids([int(b) for b in buckets]),
    )


def induce_all_views(ds, train_idx, margin=4.0, arrival_threshold=0.95):
    """All four strategy views, keyed by strategy name."""
    skills = fit_trueskill(ds, train_idx)
    parts = {
        "contrastive": induce_contrastive(ds),
        "trueskill": induce_trueskill(ds, skills, margin),
        "arrival": induce_arrival(ds, arrival_threshold),
        "reflexive": induce_reflexive(ds),
    }
    for p in parts.values():
        p.validate(ds.n)
    return parts


# ---------------------------------------------------------------------------
# Binary container
#
# Layout (little-endian):
#   magic "IRGV" | u16 version
#   i64 split seed | f64 test fraction | f64 trueskill margin | f64 arrival threshold
#   u16 view count
#   per view: u8 name length | name utf-8 | u8 semantics code | u64 N | i64[N] clique_of

VIEWS_MAGIC = b"IRGV"
VIEWS_VERSION = 1
_SEMANTICS_CODE = {SEMANTICS_CONTRASTIVE: 0, SEMANTICS_SIMILAR: 1, SEMANTICS_REFLEXIVE: 2}
_CODE_SEMANTICS = {v: k for k, v in _SEMANTICS_CODE.items()}


def write_views(parts, path, seed, test_fraction, margin, arrival_threshold):
    with open(path, "wb") as fh:
        fh.write(VIEWS_MAGIC)
        fh.write(struct.pack("<H", VIEWS_VERSION))
        fh.write(struct.pack("<qddd", int(seed), test_fraction, margin, arrival_threshold))
        fh.write(struct.pack("<H", len(parts)))
        for name, part in parts.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<B", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BQ", _SEMANTICS_CODE[part.semantics], part.n))
            fh.write(part.clique_of.astype("<i8").tobytes())


def read_views(path):
    """Returns (parts dict, header dict with seed/test_fraction/margins)."""
    with open(path, "rb") as fh:
        if fh.read(4) != VIEWS_MAGIC:
            raise FormatError(f"{path}: not a views file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VIEWS_VERSION:
            raise FormatError(f"{path}: unsupported views version {version}")
        seed, test_fraction, margin, arrival_threshold = struct.unpack("<qddd", fh.read(32))
        (count,) = struct.unpack("<H", fh.read(2))
        parts = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<B", fh.read(1))
            name = fh.read(name_len).decode("utf-8")
            code, n = struct.unpack("<BQ", fh.read(9))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise FormatError(f"{path}: truncated views file")
            clique_of = np.frombuffer(buf, dtype="<i8").copy()
            parts[name] = CliquePartition(
                strategy=name, semantics=_CODE_SEMANTICS[code], clique_of=clique_of
            )
    header = {
        "seed": seed,
        "test_fraction": test_fraction,
        "margin": margin,
        "arrival_threshold": arrival_threshold,
    }
    return parts, header
