from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import DimMismatch, MissingCounterpart, SingletonGroup, ZeroVector

GROUPS = ("Real", "RealHistory", "NoHistory", "ProCandidate", "AntiCandidate")


def _group_order(g: str) -> tuple[int, str]:
    return (GROUPS.index(g), g) if g in GROUPS else (len(GROUPS), g)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_distance(a, b) -> float:
    return 1.0 - cosine_similarity(a, b)


@dataclass(frozen=True)
class UserCentroid:
    author: str
    group: str
    vector: np.ndarray
    n_comments: int

    @property
    def is_zero(self) -> bool:
        return not np.any(self.vector)


def user_centroids(items: Iterable[tuple[str, str, Sequence[float]]]) -> list[UserCentroid]:
    """Mean embedding per (author, group) from ``(author, group, vector)`` triples."""
    buckets: dict[tuple[str, str], list[np.ndarray]] = defaultdict(list)
    for author, group, vec in items:
        buckets[(author, group)].append(np.asarray(vec, dtype=float))
    out = []
    for (author, group), vecs in buckets.items():
        out.append(UserCentroid(author, group, np.mean(np.vstack(vecs), axis=0), len(vecs)))
    out.sort(key=lambda c: (_group_order(c.group), c.author))
    return out


def by_group(centroids: Iterable[UserCentroid]) -> dict[str, list[UserCentroid]]:
    groups: dict[str, list[UserCentroid]] = defaultdict(list)
    for c in centroids:
        groups[c.group].append(c)
    return {g: sorted(groups[g], key=lambda c: c.author) for g in sorted(groups, key=_group_order)}


@dataclass(frozen=True)
class ExceedanceResult:
    group: str
    baseline: str
    proportion: float
    n_users: int
    threshold: float  # global threshold (RandomMatch) or mean of per-user thresholds (AllRealMean)


def similarity_exceedance(
    gen_centroids: Iterable[UserCentroid],
    real_centroids: Iterable[UserCentroid],
    baseline: str = "RandomMatch",
    seed: int = 0,
    n_shuffles: int = 100,
) -> dict[str, ExceedanceResult]:
    """Share of generated users more similar to their own real counterpart than a null baseline.

    ``RandomMatch``: the threshold is the mean counterpart similarity under
    ``n_shuffles`` random re-pairings of the group's users (one seeded
    generator per group). ``AllRealMean``: each generated user's threshold is
    its mean similarity to every real user. Exceeding is strict.
    """
    real = {c.author: c for c in real_centroids}
    real_list = [real[a] for a in sorted(real)]
    out = {}
    for group, members in by_group(gen_centroids).items():
        missing = [c.author for c in members if c.author not in real]
        if missing:
            raise MissingCounterpart(f"no real centroid for {missing[:3]} in group {group}")
        n = len(members)
        sims = np.array([[cosine_similarity(g.vector, real[h.author].vector) for h in members] for g in members])
        own = np.diag(sims)
        if baseline == "RandomMatch":
            rng = np.random.default_rng(seed)
            means = [sims[np.arange(n), rng.permutation(n)].mean() for _ in range(n_shuffles)]
            threshold = float(np.mean(means))
            exceed = own > threshold
        elif baseline == "AllRealMean":
            per_user = np.array([np.mean([cosine_similarity(g.vector, r.vector) for r in real_list]) for g in members])
            threshold = float(per_user.mean())
            exceed = own > per_user
        else:
            raise ValueError(f"unknown baseline {baseline}")
        out[group] = ExceedanceResult(group, baseline, float(exceed.mean()), n, threshold)
    return out


def intra_group_similarity(centroids: Sequence[UserCentroid]) -> float:
    """Mean cosine similarity over distinct unordered pairs."""
    if len(centroids) < 2:
        raise SingletonGroup("need at least two members")
    sims = [
        cosine_similarity(centroids[i].vector, centroids[j].vector)
        for i in range(len(centroids))
        for j in range(i + 1, len(centroids))
    ]
    return math.fsum(sims) / len(sims)


@dataclass
class DistanceMatrix:
    groups: tuple[str, ...]
    values: np.ndarray
    singleton: tuple[str, ...]  # groups whose diagonal is undefined (NaN)


def group_distance_matrix(centroids: Iterable[UserCentroid]) -> DistanceMatrix:
    """Mean cosine distance between and within groups of user centroids."""
    groups = by_group(centroids)
    names = tuple(groups)
    k = len(names)
    mat = np.zeros((k, k))
    singleton = []
    for i, gi in enumerate(names):
        for j in range(i, k):
            a, b = groups[gi], groups[names[j]]
            if i == j:
                if len(a) < 2:
                    mat[i, i] = math.nan
                    singleton.append(gi)
                    continue
                d = [cosine_distance(a[p].vector, a[q].vector) for p in range(len(a)) for q in range(p + 1, len(a))]
            else:
                d = [cosine_distance(x.vector, y.vector) for x in a for y in b]
            mat[i, j] = mat[j, i] = math.fsum(d) / len(d)
    return DistanceMatrix(names, mat, tuple(singleton))
