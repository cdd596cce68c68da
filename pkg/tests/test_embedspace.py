from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from threadsim.embedspace import (
    TSNEParams,
    UserCentroid,
    cosine_distance,
    cosine_similarity,
    group_distance_matrix,
    intra_group_similarity,
    pca_reduce,
    project,
    similarity_exceedance,
    tsne,
    user_centroids,
)
from threadsim.embedspace.projection import RankDeficient
from threadsim.errors import DimMismatch, MissingCounterpart, PerplexityTooLarge, SingletonGroup, ZeroVector

vec = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def uc(author, group, v):
    return UserCentroid(author, group, np.asarray(v, dtype=float), 1)


def clusters(n_per=20, k=3, dim=10, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 10, (k, dim))
    X = np.vstack([c + rng.normal(0, 0.5, (n_per, dim)) for c in centers])
    return X, np.repeat(np.arange(k), n_per)


# ------------------------------------------------------------------ cosine


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [-1, 0]) == -1.0
    assert cosine_distance([1, 1], [2, 2]) == pytest.approx(0.0, abs=1e-12)


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


@settings(max_examples=200)
@given(vec, vec, st.floats(0.01, 100))
def test_cosine_identities(a, b, k):
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert abs(s - cosine_similarity(b, a)) <= 1e-12
    assert abs(s - cosine_similarity(k * a, b)) <= 1e-12
    assert abs(cosine_similarity(a, a) - 1.0) <= 1e-12
    assert abs(cosine_distance(a, b) - (1 - s)) <= 1e-12


# --------------------------------------------------------------- centroids


def test_centroids_three_users_two_groups():
    items = [("u1", "Real", [1, 0]), ("u1", "Real", [0, 1]), ("u2", "Real", [2, 2]),
             ("u3", "Real", [4, 0]), ("u1", "NoHistory", [3, 3]), ("u2", "NoHistory", [1, 1]),
             ("u2", "NoHistory", [1, 3]), ("u3", "NoHistory", [0, 5])]
    cs = user_centroids(items)
    got = {(c.author, c.group): (c.vector.tolist(), c.n_comments) for c in cs}
    assert got == {("u1", "Real"): ([0.5, 0.5], 2), ("u2", "Real"): ([2, 2], 1), ("u3", "Real"): ([4, 0], 1),
                   ("u1", "NoHistory"): ([3, 3], 1), ("u2", "NoHistory"): ([1, 2], 2),
                   ("u3", "NoHistory"): ([0, 5], 1)}
    # canonical order: group order then author
    assert [c.group for c in cs] == ["Real"] * 3 + ["NoHistory"] * 3
    assert [c.author for c in cs[:3]] == ["u1", "u2", "u3"]


# -------------------------------------------------------------- exceedance


def exceed_oracle(gen, real, baseline, seed, n_shuffles):
    """Loop-based restatement with no shared helpers."""
    def cos(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    authors = sorted(gen)
    n = len(authors)
    own = [cos(gen[a], real[a]) for a in authors]
    if baseline == "RandomMatch":
        rng = np.random.default_rng(seed)
        tot = []
        for _ in range(n_shuffles):
            perm = rng.permutation(n)
            tot.append(sum(cos(gen[authors[i]], real[authors[perm[i]]]) for i in range(n)) / n)
        thr = sum(tot) / len(tot)
        return sum(o > thr for o in own) / n
    hits = 0
    for a, o in zip(authors, own):
        thr = sum(cos(gen[a], real[r]) for r in sorted(real)) / len(real)
        hits += o > thr
    return hits / n


@pytest.mark.parametrize("baseline", ["RandomMatch", "AllRealMean"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exceedance_matches_brute_force(baseline, seed):
    rng = np.random.default_rng(100 + seed)
    real = {f"u{i}": rng.normal(size=8) for i in range(10)}
    gen = {a: v + rng.normal(scale=1.0, size=8) for a, v in real.items()}
    res = similarity_exceedance([uc(a, "NoHistory", v) for a, v in gen.items()],
                                [uc(a, "Real", v) for a, v in real.items()], baseline, seed=seed, n_shuffles=50)
    r = res["NoHistory"]
    assert r.n_users == 10
    assert r.proportion == pytest.approx(exceed_oracle(gen, real, baseline, seed, 50), abs=1e-12)


def test_exceedance_identical_copies_all_exceed():
    rng = np.random.default_rng(5)
    real = {f"u{i}": rng.normal(size=8) for i in range(10)}
    for baseline in ("RandomMatch", "AllRealMean"):
        res = similarity_exceedance([uc(a, "RealHistory", v) for a, v in real.items()],
                                    [uc(a, "Real", v) for a, v in real.items()], baseline)
        assert res["RealHistory"].proportion == 1.0


def test_exceedance_missing_counterpart():
    with pytest.raises(MissingCounterpart):
        similarity_exceedance([uc("x", "NoHistory", [1, 0])], [uc("y", "Real", [1, 0])])


# --------------------------------------------------------------- distances


def test_distance_matrix_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    groups = ["Real", "RealHistory", "NoHistory", "ProCandidate"]
    cs = [uc(f"u{i}", g, rng.normal(size=5)) for g in groups for i in range(4)]
    dm = group_distance_matrix(cs)
    assert dm.groups == tuple(groups) and not dm.singleton
    for (i, gi), (j, gj) in itertools.product(enumerate(groups), repeat=2):
        a = [c.vector for c in cs if c.group == gi]
        b = [c.vector for c in cs if c.group == gj]
        pairs = itertools.combinations(range(4), 2) if i == j else itertools.product(range(4), range(4))
        d = [1 - a[p] @ b[q] / (np.linalg.norm(a[p]) * np.linalg.norm(b[q])) for p, q in pairs]
        assert dm.values[i, j] == pytest.approx(np.mean(d), abs=1e-12)
    assert np.array_equal(dm.values, dm.values.T)


def test_distance_matrix_singleton_diagonal():
    dm = group_distance_matrix([uc("a", "Real", [1, 0]), uc("a", "NoHistory", [0, 1]), uc("b", "NoHistory", [1, 1])])
    assert dm.singleton == ("Real",) and math.isnan(dm.values[0, 0])
    assert dm.values[0, 1] == pytest.approx((1 + (1 - 1 / math.sqrt(2))) / 2)


def test_intra_group_similarity():
    cs = [uc("a", "g", [1, 0]), uc("b", "g", [0, 1]), uc("c", "g", [1, 1])]
    expected = (0 + 1 / math.sqrt(2) + 1 / math.sqrt(2)) / 3
    assert intra_group_similarity(cs) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(SingletonGroup):
        intra_group_similarity(cs[:1])


# --------------------------------------------------------------------- PCA


def test_pca_line():
    t = np.linspace(-2, 2, 9)
    X = np.outer(t, [3.0, 4.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = pca_reduce(X, 1)
    assert np.allclose(np.abs(s[:, 0]), np.abs(t) * 5.0)


def test_pca_full_rank_preserves_distances():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 4))
    s = pca_reduce(X, 4)
    def d(M):
        return np.linalg.norm(M[:, None] - M[None], axis=-1)

    assert np.allclose(d(s), d(X), atol=1e-10)


def test_pca_rank_deficient_warns():
    X = np.array([[1.0, 2.0, 3.0]] * 3 + [[2.0, 4.0, 6.0]] * 3)
    with pytest.warns(RankDeficient):
        s = pca_reduce(X, 2)
    assert s.shape == (6, 1)


def test_pca_sign_convention_and_bounds():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 6))
    _, comps, _ = pca_reduce(X, 3, return_components=True)
    for row in comps:
        assert row[np.argmax(np.abs(row))] > 0
    with pytest.raises(ValueError):
        pca_reduce(X, 10)


# ------------------------------------------------------------------- t-SNE


P_FAST = TSNEParams(perplexity=10, iterations=400, exaggeration_iters=100, checkpoint_every=25)


@pytest.fixture(scope="module")
def cluster_run():
    X, labels = clusters()
    Y, trace = tsne(X, P_FAST)
    return X, labels, Y, trace


def test_tsne_separates_clusters(cluster_run):
    _, labels, Y, _ = cluster_run
    cent = np.array([Y[labels == k].mean(axis=0) for k in range(3)])
    nearest = np.argmin(np.linalg.norm(Y[:, None] - cent[None], axis=-1), axis=1)
    assert np.array_equal(nearest, labels)


def test_tsne_kl_non_increasing_after_exaggeration(cluster_run):
    *_, trace = cluster_run
    after = [kl for step, kl in trace if step > P_FAST.exaggeration_iters]
    assert len(after) >= 10
    for a, b in zip(after, after[1:]):
        assert b <= a + 1e-6


def test_tsne_deterministic(cluster_run):
    X, _, Y, _ = cluster_run
    Y2, _ = tsne(X, P_FAST)
    assert np.array_equal(Y, Y2)
    Y3, _ = tsne(X, P_FAST, seed=1)
    assert not np.array_equal(Y, Y3)


def test_tsne_permutation_invariant(cluster_run):
    X, _, Y, _ = cluster_run
    perm = np.random.default_rng(9).permutation(len(X))
    Yp, _ = tsne(X[perm], P_FAST)
    assert np.allclose(Yp, Y[perm], atol=1e-9)


def test_tsne_perplexity_too_large():
    with pytest.raises(PerplexityTooLarge):
        tsne(np.zeros((10, 3)), perplexity=5)


def test_project_caps_perplexity_and_reduces():
    X, labels = clusters(n_per=5, k=3, dim=80)
    proj = project(X, ["Real"] * 15, [f"u{i}" for i in range(15)], TSNEParams(iterations=150, exaggeration_iters=50))
    assert proj.params["perplexity"] == pytest.approx(14 / 3)
    assert proj.coords.shape == (15, 2) and np.all(np.isfinite(proj.coords))
    assert [p[3] for p in proj.points] == [f"u{i}" for i in range(15)]
    with pytest.raises(PerplexityTooLarge):
        project(X[:3], ["a"] * 3, ["a"] * 3)
