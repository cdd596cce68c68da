"""Stylometric features, n-gram rank/frequency tables and Zipf fits."""
from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, InsufficientData, TooFewShared

URL_TOKEN = "<url>"
ARTICLES = frozenset({"a", "an", "the"})
ABBREVIATIONS = frozenset(
    "mr mrs ms dr prof sr jr st vs etc e.g i.e u.s u.k a.m p.m gen gov sen rep lt col sgt inc ltd".split()
)

_URL_RE = re.compile(r"^(?:https?://|www\.)", re.I)
_SENT_END_RE = re.compile(r"[.!?]+(?=\s|$)")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(tok: str) -> str:
    i, j = 0, len(tok)
    while i < j and _is_punct(tok[i]):
        i += 1
    while j > i and _is_punct(tok[j - 1]):
        j -= 1
    return tok[i:j]


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with edge punctuation stripped; URLs become ``<url>``."""
    out = []
    for raw in text.lower().replace("’", "'").split():
        if _URL_RE.match(raw):
            out.append(URL_TOKEN)
            continue
        tok = _strip_punct(raw)
        if not tok:
            continue
        out.append(URL_TOKEN if _URL_RE.match(tok) else tok)
    return out


def sentence_split(text: str) -> list[str]:
    """Split after runs of ``.!?`` that precede whitespace or the end of text.

    A period ending a known abbreviation (``Mr.``, ``e.g.``...) does not end
    the sentence.
    """
    sentences = []
    start = 0
    for m in _SENT_END_RE.finditer(text):
        if m.group(0) == ".":
            words = text[start:m.start()].split()
            if words and _strip_punct(words[-1].lower()) in ABBREVIATIONS:
                continue
        piece = text[start:m.end()].strip()
        if piece:
            sentences.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


@lru_cache(maxsize=1)
def function_words() -> frozenset[str]:
    raw = resources.files("threadsim").joinpath("data/function_words.txt").read_text(encoding="utf-8")
    return frozenset(l.strip() for l in raw.splitlines() if l.strip() and not l.startswith("#"))


@dataclass(frozen=True)
class TextFeatures:
    avg_sentence_length: float
    article_pct: float
    function_word_pct: float
    ttr: float
    n_tokens: int
    n_sentences: int


def text_features(text: str) -> TextFeatures | None:
    """Features of one text, or None if it has no tokens."""
    tokens = tokenize(text)
    if not tokens:
        return None
    lengths = [n for n in (len(tokenize(s)) for s in sentence_split(text)) if n]
    fw = function_words()
    n = len(tokens)
    return TextFeatures(
        avg_sentence_length=sum(lengths) / len(lengths),
        article_pct=100.0 * sum(t in ARTICLES for t in tokens) / n,
        function_word_pct=100.0 * sum(t in fw for t in tokens) / n,
        ttr=len(set(tokens)) / n,
        n_tokens=n,
        n_sentences=len(lengths),
    )


FEATURE_NAMES = ("avg_sentence_length", "article_pct", "function_word_pct", "ttr")


@dataclass(frozen=True)
class Stat:
    mean: float
    sd: float
    se: float


@dataclass(frozen=True)
class FeatureRecord:
    avg_sentence_length: Stat
    article_pct: Stat
    function_word_pct: Stat
    ttr: Stat
    n_texts: int
    n_empty: int


def _stat(values: Sequence[float]) -> Stat:
    arr = np.asarray(values, dtype=float)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return Stat(float(math.fsum(values) / len(values)), sd, sd / math.sqrt(arr.size))


def features(corpus: Iterable[str]) -> FeatureRecord:
    """Per-text features averaged over the corpus (mean, SD and standard error)."""
    per_text = []
    empty = 0
    for text in corpus:
        f = text_features(text)
        if f is None:
            empty += 1
        else:
            per_text.append(f)
    if not per_text:
        raise EmptyCorpus("corpus has no tokenizable text")
    stats = {name: _stat([getattr(f, name) for f in per_text]) for name in FEATURE_NAMES}
    return FeatureRecord(**stats, n_texts=len(per_text), n_empty=empty)


# ------------------------------------------------------------------- n-grams


@dataclass(frozen=True)
class NgramEntry:
    gram: str
    count: int
    rank: int
    normalized_freq: float


@dataclass(frozen=True)
class NgramTable:
    n: int
    entries: tuple[NgramEntry, ...]

    @classmethod
    def from_counts(cls, n: int, counts: Counter) -> "NgramTable":
        total = sum(counts.values())
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(n, tuple(NgramEntry(g, c, r, c / total) for r, (g, c) in enumerate(ordered, start=1)))

    def ranks(self) -> dict[str, int]:
        return {e.gram: e.rank for e in self.entries}

    def to_tsv(self) -> str:
        lines = ["gram\tcount\trank\tnormalized_freq"]
        lines += [f"{e.gram}\t{e.count}\t{e.rank}\t{e.normalized_freq!r}" for e in self.entries]
        return "\n".join(lines) + "\n"


def ngram_counts(corpus: Iterable[str], n: int) -> Counter:
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    counts: Counter = Counter()
    for text in corpus:
        for sentence in sentence_split(text):
            toks = tokenize(sentence)
            counts.update(" ".join(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return counts


def ngram_table(corpus: Iterable[str], n: int) -> NgramTable:
    """Ranked n-gram table; grams never span a sentence boundary."""
    return NgramTable.from_counts(n, ngram_counts(corpus, n))


@dataclass(frozen=True)
class ZipfFit:
    s: float
    C: float
    r2: float
    n_points: int


def fit_power_law(ranks: Sequence[float], freqs: Sequence[float]) -> ZipfFit:
    """OLS of log(freq) on log(rank); returns exponent, prefactor and r^2."""
    x = np.log(np.asarray(ranks, dtype=float))
    y = np.log(np.asarray(freqs, dtype=float))
    if x.size < 3:
        raise InsufficientData(f"need >= 3 points, got {x.size}")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    return ZipfFit(s=-slope, C=float(np.exp(intercept)), r2=r2, n_points=int(x.size))


def zipf_fit(table: NgramTable, min_count: int = 2) -> ZipfFit:
    pts = [(e.rank, e.normalized_freq) for e in table.entries if e.count >= min_count]
    if len(pts) < 3:
        raise InsufficientData(f"only {len(pts)} ranks with count >= {min_count}")
    ranks, freqs = zip(*pts)
    return fit_power_law(ranks, freqs)


def rank_correlation(a: NgramTable, b: NgramTable) -> tuple[float, int]:
    """Pearson r between the ranks of grams present in both tables, and the shared count."""
    ra, rb = a.ranks(), b.ranks()
    shared = sorted(ra.keys() & rb.keys())
    if len(shared) < 2:
        raise TooFewShared(f"{len(shared)} shared grams")
    x = np.array([ra[g] for g in shared], dtype=float)
    y = np.array([rb[g] for g in shared], dtype=float)
    xd, yd = x - x.mean(), y - y.mean()
    denom = math.sqrt(float((xd**2).sum()) * float((yd**2).sum()))
    r = float((xd * yd).sum()) / denom if denom else math.nan
    return r, len(shared)
