"""Attribute measurements: extractiveness, length, topic and speaker.

Every score is on a 0-100 scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .embeddings import EmbeddingProvider, similarity_scaled
from .errors import EmptySource, EmptySummary, EmptyTopics, EmptyUtterances, KindMismatch
from .textcore import TokenSeq, tokenize, word_count


class AttributeKind(str, Enum):
    EXTRACTIVENESS = "extractiveness"
    LENGTH = "length"
    TOPIC = "topic"
    SPEAKER = "speaker"

    @property
    def is_numerical(self) -> bool:
        return self in (AttributeKind.EXTRACTIVENESS, AttributeKind.LENGTH)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Measurement:
    kind: AttributeKind
    value: float

    def __post_init__(self) -> None:
        # Length is the only unbounded-above score: a summary may be longer
        # than its source.
        if self.value < 0.0 or (self.value > 100.0 and self.kind != AttributeKind.LENGTH):
            raise ValueError(f"{self.kind} measurement {self.value} outside [0, 100]")


@dataclass(frozen=True)
class MeasurementContext:
    source: TokenSeq
    topics: tuple[str, ...] = ()
    speaker_utterances: tuple[str, ...] = ()

    def supports(self, kind: AttributeKind) -> bool:
        if kind == AttributeKind.TOPIC:
            return bool(self.topics)
        if kind == AttributeKind.SPEAKER:
            return bool(self.speaker_utterances)
        return True


def _require_summary(summary: TokenSeq) -> None:
    if word_count(summary) == 0:
        raise EmptySummary("summary has no words")


def extractiveness(summary: TokenSeq, source: TokenSeq) -> Measurement:
    """Percentage of summary words whose normalized form occurs in the source.

    Repeated summary words each count; the source is treated as a set.
    """
    _require_summary(summary)
    vocab = set(source.norms)
    reused = sum(1 for tok in summary.tokens if tok.norm in vocab)
    return Measurement(AttributeKind.EXTRACTIVENESS, 100.0 * reused / word_count(summary))


def length_ratio(summary: TokenSeq, source: TokenSeq) -> Measurement:
    if word_count(source) == 0:
        raise EmptySource("source has no words")
    return Measurement(AttributeKind.LENGTH, 100.0 * word_count(summary) / word_count(source))


def _topic_unit(topic: str) -> str:
    return " ".join(tokenize(topic).norms)


def topic_score(summary: TokenSeq, topics: list[str] | tuple[str, ...], provider: EmbeddingProvider) -> Measurement:
    """Mean scaled similarity of each summary word to each topic, averaged over topics."""
    _require_summary(summary)
    units = [_topic_unit(t) for t in topics]
    units = [u for u in units if u]
    if not units:
        raise EmptyTopics("at least one non-empty topic is required")
    word_vecs = provider.embed_many(summary.norms)
    per_topic = []
    for topic_vec in provider.embed_many(units):
        sims = [similarity_scaled(topic_vec, w) for w in word_vecs]
        per_topic.append(sum(sims) / len(sims))
    return Measurement(AttributeKind.TOPIC, sum(per_topic) / len(per_topic))


def _greedy_f1(cand: np.ndarray, ref: np.ndarray, same: np.ndarray) -> float:
    sim = cand @ ref.T
    # identical words embed identically; pin to exactly 1 against rounding
    sim[same] = 1.0
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def speaker_score(
    summary: TokenSeq, utterances: list[str] | tuple[str, ...], provider: EmbeddingProvider
) -> Measurement:
    """Greedy-matching embedding F1 between the summary and the speaker's utterances.

    Each summary word is matched to its most similar utterance word
    (precision) and vice versa (recall); no IDF weighting or baseline
    rescaling. The reference is the utterances joined in document order.
    """
    _require_summary(summary)
    reference = tokenize(" ".join(utterances))
    if word_count(reference) == 0:
        raise EmptyUtterances("speaker has no utterance words")
    cand = np.stack([v.values for v in provider.embed_many(summary.norms)])
    ref = np.stack([v.values for v in provider.embed_many(reference.norms)])
    same = np.array(summary.norms, dtype=object)[:, None] == np.array(reference.norms, dtype=object)[None, :]
    f1 = min(1.0, _greedy_f1(cand, ref, same))
    return Measurement(AttributeKind.SPEAKER, 100.0 * max(0.0, f1))


def measure(
    kind: AttributeKind,
    summary: TokenSeq,
    ctx: MeasurementContext,
    provider: EmbeddingProvider | None = None,
) -> Measurement:
    kind = AttributeKind(kind)
    if kind == AttributeKind.EXTRACTIVENESS:
        return extractiveness(summary, ctx.source)
    if kind == AttributeKind.LENGTH:
        return length_ratio(summary, ctx.source)
    if provider is None:
        raise KindMismatch(f"{kind} measurement needs an embedding provider")
    if kind == AttributeKind.TOPIC:
        return topic_score(summary, ctx.topics, provider)
    return speaker_score(summary, ctx.speaker_utterances, provider)
