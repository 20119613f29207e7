
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import VOCAB
from ctrlsum.embeddings import HashEmbeddingProvider, similarity_scaled
from ctrlsum.errors import EmptySource, EmptySummary, EmptyTopics, EmptyUtterances
from ctrlsum.metrics import (
    AttributeKind,
    MeasurementContext,
    extractiveness,
    length_ratio,
    measure,
    speaker_score,
    topic_score,
)
from ctrlsum.textcore import tokenize

T = tokenize
word_lists = st.lists(st.sampled_from(VOCAB), min_size=1, max_size=30)


# extractiveness

def test_extractiveness_examples():
    assert extractiveness(T("the cat sat"), T("the cat sat on the mat")).value == 100.0
    assert extractiveness(T("dogs bark loudly"), T("the cat sat")).value == 0.0
    # hand count: "the" and "cat" reused, "slept" not -> 2/3
    assert extractiveness(T("The cat slept"), T("the cat sat on the mat")).value == pytest.approx(200 / 3)
    assert round(extractiveness(T("The cat slept"), T("the cat sat on the mat")).value, 1) == 66.7


def test_extractiveness_counts_duplicates():
    assert extractiveness(T("cat cat dog"), T("cat")).value == pytest.approx(200 / 3)


def test_extractiveness_empty_summary():
    with pytest.raises(EmptySummary):
        extractiveness(T(""), T("source"))
    with pytest.raises(EmptySummary):
        extractiveness(T("... !"), T("source"))


@given(word_lists, word_lists, st.randoms())
def test_extractiveness_set_semantics(summary, source, rnd):
    base = extractiveness(T(" ".join(summary)), T(" ".join(source))).value
    shuffled = source[:]
    rnd.shuffle(shuffled)
    assert extractiveness(T(" ".join(summary)), T(" ".join(shuffled))).value == base
    assert extractiveness(T(" ".join(summary)), T(" ".join(source + source))).value == base
    assert 0.0 <= base <= 100.0


@given(word_lists)
def test_extractiveness_full_and_disjoint(summary):
    assert extractiveness(T(" ".join(summary)), T(" ".join(summary + ["zzz"]))).value == 100.0
    disjoint = ["novel" + w for w in summary]
    assert extractiveness(T(" ".join(disjoint)), T(" ".join(summary))).value == 0.0


# length

def test_length_examples():
    ten = " ".join(f"s{i}" for i in range(10))
    hundred = " ".join(f"d{i}" for i in range(100))
    assert length_ratio(T(ten), T(hundred)).value == 10.0
    assert length_ratio(T(hundred), T(hundred)).value == 100.0


def test_length_empty_source():
    with pytest.raises(EmptySource):
        length_ratio(T("a b"), T(""))


@given(st.integers(1, 50), st.integers(100, 300))
def test_length_linear(n, m):
    src = T(" ".join(["w"] * m))
    one = length_ratio(T(" ".join(["s"] * n)), src).value
    two = length_ratio(T(" ".join(["s"] * (2 * n))), src).value
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_length_label_targets_are_reachable():
    doc = T(" ".join(["w"] * 200))
    for n, expected in [(15, 7.5), (40, 20.0), (65, 32.5)]:
        assert length_ratio(T(" ".join(["s"] * n)), doc).value == expected


# topic

def test_topic_identity(provider):
    assert topic_score(T("jobs"), ["jobs"], provider).value == 100.0
    assert topic_score(T("Jobs!"), ["JOBS"], provider).value == 100.0


def test_topic_three_words(provider):
    s = similarity_scaled(provider.embed("jobs"), provider.embed("growth"))
    got = topic_score(T("jobs jobs growth"), ["jobs"], provider).value
    assert got == pytest.approx((100 + 100 + s) / 3, abs=1e-12)


def test_topic_averages_over_topics(provider):
    summary = T("jobs growth market council")
    m1 = topic_score(summary, ["jobs"], provider).value
    m2 = topic_score(summary, ["budget"], provider).value
    assert topic_score(summary, ["jobs", "budget"], provider).value == pytest.approx((m1 + m2) / 2, abs=1e-12)


def test_topic_errors(provider):
    with pytest.raises(EmptyTopics):
        topic_score(T("jobs"), [], provider)
    with pytest.raises(EmptyTopics):
        topic_score(T("jobs"), ["!!"], provider)
    with pytest.raises(EmptySummary):
        topic_score(T(""), ["jobs"], provider)


# speaker

def test_speaker_identical(provider):
    utts = ["We need to fix the bridge.", "The budget allows it."]
    assert speaker_score(T(" ".join(utts)), utts, provider).value == 100.0


def test_speaker_two_by_two_against_matrix_oracle(provider):
    sim = oracles.PairSim(provider)
    p, r, f = oracles.greedy_prf(["a", "b"], ["a", "c"], sim)
    # a matches a exactly in both directions
    assert p == pytest.approx((1 + max(sim.cos("b", "a"), sim.cos("b", "c"))) / 2)
    assert r == pytest.approx((1 + max(sim.cos("a", "c"), sim.cos("b", "c"))) / 2)
    got = speaker_score(T("a b"), ["a c"], provider).value
    assert got == pytest.approx(100 * max(0.0, f), abs=1e-9)


def test_speaker_errors(provider):
    with pytest.raises(EmptyUtterances):
        speaker_score(T("jobs"), ["..."], provider)
    with pytest.raises(EmptySummary):
        speaker_score(T(""), ["jobs"], provider)


def test_speaker_default_floor():
    from ctrlsum.dataset import LabelMap

    assert LabelMap().speaker_floor == 75.0


# dispatch

def test_measure_dispatch(provider):
    hundred = " ".join(f"d{i}" for i in range(100))
    ctx = MeasurementContext(source=T(hundred), topics=("jobs",), speaker_utterances=("jobs are up",))
    ten = T(" ".join(f"d{i}" for i in range(5)) + " x y z q r")
    assert measure(AttributeKind.LENGTH, ten, ctx, provider).value == 10.0
    assert measure("topic", T("jobs"), ctx, provider).value == 100.0
    assert measure("extractiveness", ten, ctx).value == extractiveness(ten, ctx.source).value
    assert measure("speaker", T("jobs are up"), ctx, provider).value == 100.0


# brute-force equivalence

@settings(max_examples=150, deadline=None)
@given(word_lists, word_lists, st.lists(st.sampled_from(VOCAB), min_size=1, max_size=3))
def test_metrics_match_naive_oracles(summary, source, topics):
    provider = HashEmbeddingProvider(dim=64, seed=3)
    sim = oracles.PairSim(provider)
    s, d = T(" ".join(summary)), T(" ".join(source))
    assert extractiveness(s, d).value == pytest.approx(oracles.extractiveness(summary, source), abs=1e-9)
    assert length_ratio(s, d).value == pytest.approx(oracles.length_ratio(summary, source), abs=1e-9)
    assert topic_score(s, topics, provider).value == pytest.approx(oracles.topic_score(summary, topics, sim), abs=1e-9)
    assert speaker_score(s, [" ".join(source)], provider).value == pytest.approx(
        oracles.speaker_score(summary, source, sim), abs=1e-9
    )


@given(word_lists, word_lists)
def test_all_measurements_in_range(summary, source):
    provider = HashEmbeddingProvider(dim=32)
    s, d = T(" ".join(summary)), T(" ".join(source))
    for v in (
        extractiveness(s, d).value,
        topic_score(s, source[:2], provider).value,
        speaker_score(s, source, provider).value,
    ):
        assert 0.0 <= v <= 100.0
    if len(summary) <= len(source):
        assert 0.0 <= length_ratio(s, d).value <= 100.0


def test_topic_no_stopword_filtering(provider):
    # stopwords still dilute the average
    assert topic_score(T("jobs the"), ["jobs"], provider).value < 100.0
