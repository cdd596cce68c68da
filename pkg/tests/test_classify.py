from __future__ import annotations

import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threadsim.classify import (
    AveragedScore,
    ClassificationTriple,
    aggregate_shares,
    bin_by_prompt_length,
    build_classification_prompt,
    classify_corpus,
    cross_tab,
    parse_classification,
    user_mean_distribution,
)
from threadsim.errors import BudgetExceeded, EmptyInput, MalformedReply
from threadsim.gateway import PRO_MARKER, Gateway, MockBackend

T = ClassificationTriple


def score(*party, sentiment=0, violence=0):
    return AveragedScore.from_runs([T(p, sentiment, violence) for p in party])


class ScriptedBackend:
    """Replies from a fixed queue; used to probe the malformed-reply policy."""

    backend_id = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt, params, run_index, meta):
        self.calls += 1
        return self.replies.pop(0)

    def embed(self, text, model_id):
        raise NotImplementedError


# ----------------------------------------------------------------- prompt


def test_prompt_clinton():
    p = build_classification_prompt("some text", "Clinton")
    assert "Position on Hillary Clinton: Pro-Hillary [1], Neutral [0], Anti-Hillary [-1]." in p
    assert "The text to classify is: Hillary Clinton is a whore!" in p
    assert p.endswith("Assistant:") and "Assistant: -1, -1, 1\n" in p
    assert p.startswith("You can only return three numbers")


def test_prompt_trump():
    p = build_classification_prompt("some text", "Trump")
    assert "Donald Trump is a piece of shit!" in p
    assert "Pro-Trump [1]" in p and "Clinton" not in p and "Hillary" not in p
    assert p.endswith("Continue classifying the following comment: some text\nAssistant:")


# ------------------------------------------------------------------ parse


@pytest.mark.parametrize("reply,expected", [
    ("-1, -1, 1", (-1, -1, 1)), ("0,0,0", (0, 0, 0)), ("  1 ,  0 ,0 ", (1, 0, 0)),
    ("1\n-1\n0", (1, -1, 0)), ("Assistant: 1, 1, 0", (1, 1, 0)), ("+1, -1, 0", (1, -1, 0)),
])
def test_parse_ok(reply, expected):
    assert parse_classification(reply).as_tuple() == expected


@pytest.mark.parametrize("reply", ["1, 2, 0", "1, 0", "1, 0, 0, 1", "", "pro, neutral, calm", "0, 0, -1"])
def test_parse_malformed(reply):
    with pytest.raises(MalformedReply):
        parse_classification(reply)


@given(st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1]), st.sampled_from([0, 1]),
       st.sampled_from([", ", ",", " ", " , ", "\n"]))
def test_parse_roundtrip(p, s, v, sep):
    assert parse_classification(sep.join(map(str, (p, s, v)))).as_tuple() == (p, s, v)


# --------------------------------------------------------------- averaging


def test_constant_runs():
    s = AveragedScore.from_runs([T(1, 1, 0)] * 5)
    assert s.party_mean == 1.0 and s.modal_triple == T(1, 1, 0) and s.n_runs == 5


def test_mixed_runs_mean_and_mode():
    s = score(1, 0, 1, 0, 1)
    assert s.party_mean == pytest.approx(0.6) and s.modal_triple.party == 1


def test_tie_goes_to_zero():
    assert score(1, -1).modal_triple.party == 0
    assert score(1, 1, -1, -1).modal_triple.party == 0
    assert score(1, 1, 0, 0, -1).modal_triple.party == 0


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1]), st.sampled_from([0, 1])),
                min_size=1, max_size=9))
def test_codomain_safety(runs):
    s = AveragedScore.from_runs([T(*r) for r in runs])
    assert -1 <= s.party_mean <= 1 and -1 <= s.sentiment_mean <= 1 and 0 <= s.violence_rate <= 1
    # modal oracle: unique most-common value, else 0
    col = [r[0] for r in runs]
    c = Counter(col).most_common()
    top = [v for v, n in c if n == c[0][1]]
    assert s.modal_triple.party == (top[0] if len(top) == 1 else 0)


# ----------------------------------------------------------- classify_corpus


def test_classify_corpus_mock():
    gw = Gateway(MockBackend())
    out = classify_corpus({"a": f"x {PRO_MARKER}", "b": "plain"}, "Trump", 5, gw)
    assert [c.key for c in out] == ["a", "b"]
    assert out[0].score.party_mean == 1.0 and out[0].score.n_runs == 5
    assert out[1].score.modal_triple == T(0, 0, 0)


def test_malformed_then_requery_succeeds():
    gw = Gateway(ScriptedBackend(["garbage", "1, 0, 0"]))
    (c,) = classify_corpus(["t"], "Clinton", 1, gw)
    assert c.score.modal_triple == T(1, 0, 0) and c.malformed_runs == 1


def test_malformed_twice_is_unclassified():
    gw = Gateway(ScriptedBackend(["garbage", "still garbage"]))
    (c,) = classify_corpus(["t"], "Clinton", 1, gw)
    assert c.score is None and c.malformed_runs == 2 and gw.backend.calls == 2


def test_gateway_error_recorded_not_raised():
    class Broken(ScriptedBackend):
        def complete(self, *a):
            from threadsim.errors import BackendUnavailable

            raise BackendUnavailable("down")

    out = classify_corpus(["a", "b"], "Trump", 2, Gateway(Broken([])))
    assert all(c.score is None and "down" in c.error for c in out)


def test_budget_propagates():
    with pytest.raises(BudgetExceeded):
        classify_corpus([f"t{i}" for i in range(5)], "Trump", 1, Gateway(MockBackend(), max_calls=2))


# ------------------------------------------------------------------ shares


def test_shares_counting():
    sb = aggregate_shares([score(1), score(1), score(0), score(-1)], "party")
    assert (sb.pro, sb.neutral, sb.anti) == (0.5, 0.25, 0.25)


def test_all_neutral():
    assert aggregate_shares([score(0)] * 4, "sentiment").neutral == 1.0


def test_unclassified_excluded():
    sb = aggregate_shares([score(1), None, None], "party")
    assert sb.pro == 1.0 and sb.unclassified == 2 and sb.n == 1


def test_pooled_mode():
    sb = aggregate_shares([score(1, 1, 0), score(-1)], "party", mode="pooled")
    assert sb.counts == {-1: 1, 0: 1, 1: 2}


def test_empty_shares():
    with pytest.raises(EmptyInput):
        aggregate_shares([], "party")


def test_violence_axis():
    sb = aggregate_shares([score(0, violence=1), score(0), score(0), score(0)], "violence")
    assert sb.violent == 0.25 and sb.non_violent == 0.75


# ---------------------------------------------------------- user means


def test_user_means():
    h = user_mean_distribution({"a": [score(1), score(1)], "b": [score(1), score(-1)]}, bins=4)
    assert h.author_means == {"a": 1.0, "b": 0.0}


def test_user_mean_histogram_three_authors():
    data = {"x": [-1.0, -0.5], "y": [0.2], "z": [1.0, 1.0, 0.4]}
    h = user_mean_distribution(data, bins=4)
    # hand tally: means -0.75, 0.2, 0.8; bins [-1,-.5) [-.5,0) [0,.5) [.5,1]
    assert h.counts.tolist() == [1, 0, 1, 1]
    assert h.edges[0] == -1.0 and h.edges[-1] == 1.0


# --------------------------------------------------------------- length bins


def test_bins_one_bin():
    (b,) = bin_by_prompt_length([1.0, 0.0], [10, 20], 250)
    assert (b.lo, b.hi, b.count, b.mean) == (0, 250, 2, 0.5)


def test_bins_empty_marker():
    bins = bin_by_prompt_length([1.0, -1.0], [10, 600], 250)
    assert [b.count for b in bins] == [1, 0, 1] and bins[1].mean is None


@given(st.lists(st.tuples(st.floats(-1, 1), st.integers(0, 2000)), min_size=1, max_size=30), st.randoms())
def test_bins_order_invariant(pairs, rnd):
    a = bin_by_prompt_length([p[0] for p in pairs], [p[1] for p in pairs], 250)
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    b = bin_by_prompt_length([p[0] for p in shuffled], [p[1] for p in shuffled], 250)
    assert a == b
    assert sum(x.count for x in a) == len(pairs)


# ----------------------------------------------------------------- cross tab


def test_crosstab_example():
    ct = cross_tab([1, 1], [1, 0])
    assert ct.fractions[2].tolist() == [0.0, 0.5, 0.5]


def test_crosstab_single():
    ct = cross_tab([0], [-1])
    assert ct.counts[1, 0] == 1 and ct.fractions[1, 0] == 1.0
    assert ct.empty_rows == (-1, 1)
    assert ct.fractions[0].tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=300)
@given(st.lists(st.tuples(st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1])), min_size=1, max_size=50))
def test_crosstab_row_stochastic(pairs):
    ct = cross_tab([p[0] for p in pairs], [p[1] for p in pairs])
    assert ct.counts.sum() == len(pairs)
    for i, label in enumerate(ct.labels):
        if label in ct.empty_rows:
            assert not ct.counts[i].any()
        else:
            assert abs(ct.fractions[i].sum() - 1.0) <= 1e-9


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1]), st.sampled_from([0, 1])),
                min_size=1, max_size=40), st.sampled_from(["party", "sentiment", "violence"]),
       st.sampled_from(["modal", "pooled"]))
def test_share_conservation(triples, axis, mode):
    scores = [AveragedScore.from_runs([T(*t)]) for t in triples]
    sb = aggregate_shares(scores, axis, mode)
    assert abs(sum(sb.share(k) for k in sb.counts) - 1.0) <= 1e-9
    rnd = random.Random(len(triples))
    rnd.shuffle(scores)
    assert aggregate_shares(scores, axis, mode) == sb


def test_crosstab_matches_numpy_oracle():
    rng = np.random.default_rng(0)
    c = rng.choice([-1, 0, 1], 200)
    o = rng.choice([-1, 0, 1], 200)
    ct = cross_tab(c.tolist(), o.tolist())
    oracle = np.array([[np.sum((c == a) & (o == b)) for b in (-1, 0, 1)] for a in (-1, 0, 1)])
    assert np.array_equal(ct.counts, oracle)
