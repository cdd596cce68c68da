"""LLM-based (party, sentiment, violence) labelling and the aggregates built on it."""
from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BudgetExceeded, EmptyInput, GatewayError, MalformedReply
from .scenario import Candidate, GenerationParams

AXES = ("party", "sentiment", "violence")
_CODOMAIN = {"party": (-1, 0, 1), "sentiment": (-1, 0, 1), "violence": (0, 1)}

_NAMES = {
    Candidate.CLINTON: ("Hillary Clinton", "Hillary", "Hillary Clinton is a whore!"),
    Candidate.TRUMP: ("Donald Trump", "Trump", "Donald Trump is a piece of shit!"),
}


def build_classification_prompt(text: str, candidate: Candidate | str) -> str:
    full, short, sample = _NAMES[Candidate(candidate)]
    return (
        "You can only return three numbers, such as 1, -1, 0, without providing any other text. "
        "Classify the text provided based on the following categories, returning the right "
        "number for each entry:\n"
        f"- Position on {full}: Pro-{short} [1], Neutral [0], Anti-{short} [-1].\n"
        "- Sentiment of the text: Positive [1], Neutral [0], Negative [-1].\n"
        "- Level of violence in language: Violent [1], Non-violent [0].\n"
        f"The text to classify is: {sample}\n"
        "Assistant: -1, -1, 1\n"
        f"Continue classifying the following comment: {text}\n"
        "Assistant:"
    )


@dataclass(frozen=True)
class ClassificationTriple:
    party: int
    sentiment: int
    violence: int

    def __post_init__(self):
        for axis in AXES:
            if getattr(self, axis) not in _CODOMAIN[axis]:
                raise ValueError(f"{axis}={getattr(self, axis)} outside {_CODOMAIN[axis]}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.party, self.sentiment, self.violence)


_INT_RE = re.compile(r"[+-]?\d+")


def parse_classification(reply: str) -> ClassificationTriple:
    """Read exactly three integers from a classifier reply."""
    nums = _INT_RE.findall(reply)
    if len(nums) != 3:
        raise MalformedReply(f"expected 3 integers, found {len(nums)} in {reply!r}")
    try:
        return ClassificationTriple(*(int(n) for n in nums))
    except ValueError as exc:
        raise MalformedReply(str(exc)) from None


def _mode(values: Sequence[int]) -> int:
    counts = Counter(values).most_common()
    top = counts[0][1]
    winners = [v for v, c in counts if c == top]
    return winners[0] if len(winners) == 1 else 0


@dataclass(frozen=True)
class AveragedScore:
    party_mean: float
    sentiment_mean: float
    violence_rate: float
    modal_triple: ClassificationTriple
    n_runs: int
    runs: tuple[ClassificationTriple, ...] = ()

    @classmethod
    def from_runs(cls, runs: Sequence[ClassificationTriple]) -> "AveragedScore":
        if not runs:
            raise ValueError("need at least one run")
        cols = list(zip(*(r.as_tuple() for r in runs)))
        means = [math.fsum(c) / len(c) for c in cols]
        modal = ClassificationTriple(*(_mode(c) for c in cols))
        return cls(means[0], means[1], means[2], modal, len(runs), tuple(runs))

    def mean(self, axis: str) -> float:
        return {"party": self.party_mean, "sentiment": self.sentiment_mean, "violence": self.violence_rate}[axis]

    def to_dict(self) -> dict:
        return {
            "party_mean": self.party_mean,
            "sentiment_mean": self.sentiment_mean,
            "violence_rate": self.violence_rate,
            "modal": list(self.modal_triple.as_tuple()),
            "n_runs": self.n_runs,
            "runs": [list(r.as_tuple()) for r in self.runs],
        }


@dataclass
class ClassifiedText:
    key: str
    score: AveragedScore | None  # None = Unclassified
    malformed_runs: int = 0
    error: str | None = None

    @property
    def classified(self) -> bool:
        return self.score is not None


def classify_one(gateway, text: str, candidate, run_index: int, params: GenerationParams | None = None):
    """One labelling run with a single re-query on a malformed reply.

    Returns ``(triple or None, n_malformed)``.
    """
    prompt = build_classification_prompt(text, candidate)
    malformed = 0
    for attempt in range(2):
        reply, _ = gateway.complete(prompt, params, run_index, salt=f"requery{attempt}" if attempt else "")
        try:
            return parse_classification(reply), malformed
        except MalformedReply:
            malformed += 1
    return None, malformed


def classify_corpus(
    texts: Mapping[str, str] | Sequence[str],
    candidate: Candidate | str,
    n_runs: int,
    gateway,
    params: GenerationParams | None = None,
    executor=None,
) -> list[ClassifiedText]:
    """Label every text ``n_runs`` times and average per text.

    Gateway failures are recorded on the affected text and do not stop the
    corpus; an exhausted call budget does.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    items = list(texts.items()) if isinstance(texts, Mapping) else [(str(i), t) for i, t in enumerate(texts)]
    jobs = [(key, text, r) for key, text in items for r in range(n_runs)]

    def work(job):
        key, text, r = job
        try:
            return job, classify_one(gateway, text, candidate, r, params), None
        except BudgetExceeded:
            raise
        except GatewayError as exc:
            return job, (None, 0), str(exc)

    results = list(executor.map(work, jobs)) if executor else [work(j) for j in jobs]
    runs: dict[str, list] = defaultdict(list)
    bad: Counter = Counter()
    errors: dict[str, str] = {}
    for (key, _, r), (triple, n_bad), err in sorted(results, key=lambda x: (x[0][0], x[0][2])):
        bad[key] += n_bad
        if err:
            errors[key] = err
        if triple is not None:
            runs[key].append(triple)
    out = []
    for key, _ in items:
        score = AveragedScore.from_runs(runs[key]) if runs[key] else None
        out.append(ClassifiedText(key, score, bad[key], errors.get(key)))
    return out


# --------------------------------------------------------------- aggregates


@dataclass(frozen=True)
class ShareBreakdown:
    axis: str
    counts: dict[int, int]
    unclassified: int = 0

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    def share(self, label: int) -> float:
        return self.counts.get(label, 0) / self.n if self.n else math.nan

    @property
    def pro(self) -> float:
        return self.share(1)

    @property
    def neutral(self) -> float:
        return self.share(0)

    @property
    def anti(self) -> float:
        return self.share(-1)

    positive, negative, violent = pro, anti, pro

    @property
    def non_violent(self) -> float:
        return self.share(0)


def aggregate_shares(
    scores: Iterable[AveragedScore | None], axis: str, mode: str = "modal"
) -> ShareBreakdown:
    """Label shares on one axis.

    ``mode="modal"`` counts each text's modal label once; ``"pooled"`` counts
    every individual run. ``None`` entries are Unclassified and kept out of
    the denominator.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis}")
    scores = list(scores)
    if not scores:
        raise EmptyInput("no scores to aggregate")
    idx = AXES.index(axis)
    counts = {label: 0 for label in _CODOMAIN[axis]}
    unclassified = 0
    for s in scores:
        if s is None:
            unclassified += 1
        elif mode == "modal":
            counts[s.modal_triple.as_tuple()[idx]] += 1
        elif mode == "pooled":
            for r in s.runs:
                counts[r.as_tuple()[idx]] += 1
        else:
            raise ValueError(f"unknown mode {mode}")
    return ShareBreakdown(axis, counts, unclassified)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    author_means: dict[str, float]


def user_mean_distribution(
    scores_by_author: Mapping[str, Iterable[AveragedScore | float]], bins: int = 20
) -> Histogram:
    """Per-author mean of per-comment party means, histogrammed over [-1, 1]."""
    means = {}
    for author in sorted(scores_by_author):
        vals = [s.party_mean if isinstance(s, AveragedScore) else float(s)
                for s in scores_by_author[author] if s is not None]
        if vals:
            means[author] = math.fsum(vals) / len(vals)
    counts, edges = np.histogram(list(means.values()), bins=bins, range=(-1.0, 1.0))
    return Histogram(edges, counts, means)


@dataclass(frozen=True)
class LengthBin:
    lo: int
    hi: int
    count: int
    mean: float | None  # None when the bin is empty


def bin_by_prompt_length(
    values: Sequence[float], token_estimates: Sequence[int], bin_width: int = 250
) -> list[LengthBin]:
    """Mean party score per fixed-width prompt-length bin, empty bins included."""
    if len(values) != len(token_estimates):
        raise ValueError("one token estimate per score required")
    if not values:
        return []
    groups: dict[int, list[float]] = defaultdict(list)
    for v, t in zip(values, token_estimates):
        groups[int(t) // bin_width].append(float(v))
    out = []
    for b in range(max(groups) + 1):
        vals = sorted(groups.get(b, []))
        out.append(LengthBin(b * bin_width, (b + 1) * bin_width, len(vals),
                             math.fsum(vals) / len(vals) if vals else None))
    return out


LABELS3 = (-1, 0, 1)


@dataclass
class CrossTab:
    counts: np.ndarray  # rows = conditioner label, cols = outcome label, order (-1, 0, 1)
    fractions: np.ndarray
    empty_rows: tuple[int, ...]
    labels: tuple[int, ...] = LABELS3


def cross_tab(conditioner: Sequence[int], outcome: Sequence[int]) -> CrossTab:
    """3x3 count table and its row-normalized fractions (empty rows stay zero and are flagged)."""
    if len(conditioner) != len(outcome):
        raise ValueError("conditioner and outcome must align")
    counts = np.zeros((3, 3), dtype=int)
    for c, o in zip(conditioner, outcome):
        counts[LABELS3.index(c), LABELS3.index(o)] += 1
    fractions = np.zeros((3, 3))
    empty = []
    for i, row in enumerate(counts):
        total = row.sum()
        if total:
            fractions[i] = row / total
        else:
            empty.append(LABELS3[i])
    return CrossTab(counts, fractions, tuple(empty))
