"""Corpus loading, label-to-target mapping and threshold derivation.

Corpus files are JSON lines. A document record looks like::

    {"id": "d1", "source": "...", "reference": "...",
     "ext_label": "normal", "len_label": "short", "topics": ["jobs"]}

Dialogue records add ``"speaker"`` and ``"turns": [{"speaker", "utterance"}]``;
their ``source`` may be omitted, in which case it is rendered from the
turns as ``SPEAKER: utterance`` lines.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .control import AttributeTarget, Floor, Window
from .embeddings import EmbeddingProvider
from .errors import EmptyInput, LabelMissing, MissingField, ParseError
from .metrics import AttributeKind, MeasurementContext, speaker_score, topic_score
from .textcore import tokenize

EXT_LABELS = ("normal", "high", "fully")
LEN_LABELS = ("short", "normal", "long")


@dataclass(frozen=True)
class Turn:
    speaker: str
    utterance: str


@dataclass(frozen=True)
class Sample:
    id: str
    source: str
    reference_summary: str = ""
    extractiveness_label: str | None = None
    length_label: str | None = None
    topics: tuple[str, ...] = ()
    speaker: str | None = None
    turns: tuple[Turn, ...] | None = None

    @property
    def is_dialogue(self) -> bool:
        return self.turns is not None

    def speaker_utterances(self) -> tuple[str, ...]:
        if not self.turns or not self.speaker:
            return ()
        return tuple(t.utterance for t in self.turns if t.speaker == self.speaker)

    def context(self) -> MeasurementContext:
        return MeasurementContext(
            source=tokenize(self.source),
            topics=tuple(self.topics),
            speaker_utterances=self.speaker_utterances(),
        )


@dataclass(frozen=True)
class LabelMap:
    extractiveness: dict[str, float] = field(default_factory=lambda: {"normal": 85.0, "high": 90.0, "fully": 100.0})
    # override "normal" here if a corpus treats it as 15
    length: dict[str, float] = field(default_factory=lambda: {"short": 7.5, "normal": 20.0, "long": 32.5})
    topic_floor: float = 74.0
    speaker_floor: float = 75.0
    half_width: float = 5.0

    def __post_init__(self) -> None:
        for v in [*self.extractiveness.values(), *self.length.values(), self.topic_floor, self.speaker_floor]:
            if not 0.0 < v <= 100.0:
                raise ValueError(f"label value {v} outside (0, 100]")

    def with_overrides(self, overrides: dict) -> LabelMap:
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown label-map keys: {sorted(unknown)}")
        merged = {}
        for key, value in overrides.items():
            current = getattr(self, key)
            merged[key] = {**current, **{k: float(v) for k, v in value.items()}} if isinstance(current, dict) else float(value)
        return replace(self, **merged)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def render_turns(turns: Iterable[Turn]) -> str:
    return "\n".join(f"{t.speaker}: {t.utterance}" for t in turns)


def _label(record: dict, key: str, allowed: Sequence[str], line: int) -> str | None:
    value = record.get(key)
    if value is None or value == "":
        return None
    if value not in allowed:
        raise ParseError(f"expected one of {list(allowed)}, got {value!r}", line=line, field=key)
    return value


def _string(record: dict, key: str, line: int, *, required: bool = True) -> str | None:
    if key not in record or record[key] is None:
        if required:
            raise MissingField(key, line=line)
        return None
    value = record[key]
    if not isinstance(value, str):
        raise ParseError("expected a string", line=line, field=key)
    return value


def parse_sample(record: dict, line: int = 0) -> Sample:
    if not isinstance(record, dict):
        raise ParseError("expected a JSON object", line=line)
    sample_id = _string(record, "id", line)
    turns = None
    if record.get("turns") is not None:
        raw_turns = record["turns"]
        if not isinstance(raw_turns, list):
            raise ParseError("expected a list", line=line, field="turns")
        try:
            turns = tuple(Turn(str(t["speaker"]), str(t["utterance"])) for t in raw_turns)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad turn entry ({exc})", line=line, field="turns") from exc
    source = _string(record, "source", line, required=turns is None)
    if source is None:
        source = render_turns(turns or ())
    topics = record.get("topics") or []
    if not isinstance(topics, list) or not all(isinstance(t, str) for t in topics):
        raise ParseError("expected a list of strings", line=line, field="topics")
    speaker = _string(record, "speaker", line, required=False)
    if speaker is not None:
        if turns is None:
            raise ParseError("speaker given without turns", line=line, field="speaker")
        if speaker not in {t.speaker for t in turns}:
            raise ParseError(f"speaker {speaker!r} does not appear in turns", line=line, field="speaker")
    return Sample(
        id=sample_id,
        source=source,
        reference_summary=_string(record, "reference", line, required=False) or "",
        extractiveness_label=_label(record, "ext_label", EXT_LABELS, line),
        length_label=_label(record, "len_label", LEN_LABELS, line),
        topics=tuple(topics),
        speaker=speaker,
        turns=turns,
    )


def iter_corpus(path: str | Path) -> Iterator[Sample]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            yield parse_sample(record, lineno)


def load_corpus(path: str | Path) -> list[Sample]:
    samples = list(iter_corpus(path))
    seen: set[str] = set()
    for s in samples:
        if s.id in seen:
            raise ParseError(f"duplicate sample id {s.id!r}", field="id")
        seen.add(s.id)
    return samples


def sample_to_record(sample: Sample) -> dict:
    record: dict = {
        "id": sample.id,
        "source": sample.source,
        "reference": sample.reference_summary,
        "ext_label": sample.extractiveness_label,
        "len_label": sample.length_label,
        "topics": list(sample.topics),
    }
    if sample.turns is not None:
        record["speaker"] = sample.speaker
        record["turns"] = [{"speaker": t.speaker, "utterance": t.utterance} for t in sample.turns]
    return record


def dump_corpus(samples: Iterable[Sample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), ensure_ascii=False) + "\n")


def targets_for(
    sample: Sample,
    labels: LabelMap,
    requested_kinds: Iterable[AttributeKind],
    *,
    label_override: dict[AttributeKind, str] | None = None,
) -> list[AttributeTarget]:
    """Map a sample's labels to success rules, one per requested kind.

    ``label_override`` substitutes a label for every sample (e.g. request
    "short" regardless of the annotated length label).
    """
    override = label_override or {}
    out = []
    for kind in requested_kinds:
        kind = AttributeKind(kind)
        if kind == AttributeKind.EXTRACTIVENESS:
            label = override.get(kind, sample.extractiveness_label)
            if label is None or label not in labels.extractiveness:
                raise LabelMissing(kind, sample.id)
            out.append(AttributeTarget(kind, Window(labels.extractiveness[label], labels.half_width), label))
        elif kind == AttributeKind.LENGTH:
            label = override.get(kind, sample.length_label)
            if label is None or label not in labels.length:
                raise LabelMissing(kind, sample.id)
            out.append(AttributeTarget(kind, Window(labels.length[label], labels.half_width), label))
        elif kind == AttributeKind.TOPIC:
            if not sample.topics:
                raise LabelMissing(kind, sample.id)
            out.append(AttributeTarget(kind, Floor(labels.topic_floor)))
        else:
            if not sample.speaker_utterances():
                raise LabelMissing(kind, sample.id)
            out.append(AttributeTarget(kind, Floor(labels.speaker_floor)))
    return out


def floor_to_tenth(x: float) -> float:
    # round(..., 9) absorbs representation error such as 74.8 * 10 = 747.999...
    return math.floor(round(x * 10.0, 9)) / 10.0


def derive_thresholds(training_samples: Iterable[Sample], provider: EmbeddingProvider) -> dict[str, float]:
    """Minimum reference-summary topic/speaker scores, rounded down to 0.1.

    Returns LabelMap overrides (``topic_floor`` and/or ``speaker_floor``) for
    whichever attributes the training samples support.
    """
    topic_scores, speaker_scores = [], []
    for s in training_samples:
        ref = tokenize(s.reference_summary)
        if not len(ref):
            continue
        if s.topics:
            topic_scores.append(topic_score(ref, s.topics, provider).value)
        utterances = s.speaker_utterances()
        if utterances:
            speaker_scores.append(speaker_score(ref, utterances, provider).value)
    return thresholds_from_scores(topic_scores, speaker_scores)


def thresholds_from_scores(topic_scores: Sequence[float] = (), speaker_scores: Sequence[float] = ()) -> dict[str, float]:
    if not topic_scores and not speaker_scores:
        raise EmptyInput("no reference summaries with topics or speakers to derive thresholds from")
    out = {}
    if topic_scores:
        out["topic_floor"] = floor_to_tenth(min(topic_scores))
    if speaker_scores:
        out["speaker_floor"] = floor_to_tenth(min(speaker_scores))
    return out
