"""Single-attribute control loop: draft, measure, check, refine."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Sequence, Union

from .embeddings import EmbeddingProvider
from .errors import CtrlSumError, EmptyInput, EmptyOutput, EmptySummary, KindMismatch, ScriptExhausted, ServiceUnavailable
from .llm import ChatExchange, ChatModel, extract_summary
from .metrics import AttributeKind, Measurement, MeasurementContext, measure
from .prompts import ExchangeSettings, PromptBundle, Strategy, build_initial, build_refinement
from .textcore import tokenize

log = logging.getLogger(__name__)

SUCCESS = "success"
FAILURE = "failure"
ABORTED = "aborted"


@dataclass(frozen=True)
class Window:
    """Numerical success rule: ``|value - target| <= half_width``."""

    target: float
    half_width: float = 5.0

    def __post_init__(self) -> None:
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    def to_dict(self) -> dict:
        return {"type": "window", "target": self.target, "half_width": self.half_width}


@dataclass(frozen=True)
class Floor:
    """Linguistic success rule: ``value >= threshold``."""

    threshold: float

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 100.0:
            raise ValueError("threshold must be in (0, 100]")

    def to_dict(self) -> dict:
        return {"type": "floor", "threshold": self.threshold}


Rule = Union[Window, Floor]


def rule_from_dict(d: dict) -> Rule:
    if d["type"] == "window":
        return Window(float(d["target"]), float(d["half_width"]))
    if d["type"] == "floor":
        return Floor(float(d["threshold"]))
    raise ValueError(f"unknown rule type {d['type']!r}")


@dataclass(frozen=True)
class AttributeTarget:
    kind: AttributeKind
    rule: Rule
    label: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttributeKind(self.kind))
        want = Window if self.kind.is_numerical else Floor
        if not isinstance(self.rule, want):
            raise KindMismatch(f"{self.kind} targets need a {want.__name__} rule")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "rule": self.rule.to_dict(), "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> AttributeTarget:
        return cls(AttributeKind(d["kind"]), rule_from_dict(d["rule"]), d.get("label"))


def check(measured: Measurement, rule: Rule) -> bool:
    """Inclusive success test for a measurement against a rule."""
    if isinstance(rule, Window):
        if not measured.kind.is_numerical:
            raise KindMismatch(f"{measured.kind} cannot be checked against a window")
        return abs(measured.value - rule.target) <= rule.half_width
    if measured.kind.is_numerical:
        raise KindMismatch(f"{measured.kind} cannot be checked against a floor")
    return measured.value >= rule.threshold


def derive_floor(reference_scores: Sequence[float]) -> Floor:
    if not reference_scores:
        raise EmptyInput("need at least one reference score")
    return Floor(min(reference_scores))


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 20
    strategy: Strategy = Strategy.GTE
    model_id: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def settings(self) -> ExchangeSettings:
        return ExchangeSettings(self.model_id, self.temperature, self.max_output_tokens)

    def fingerprint(self, **extra: object) -> str:
        payload = {
            "max_iterations": self.max_iterations,
            "strategy": self.strategy.value,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            **extra,
        }
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class IterationRecord:
    """One generation step. ``measured`` is None when the reply held no measurable summary."""

    index: int
    prompt: ChatExchange
    raw_reply: str
    summary: str
    measured: Measurement | None
    satisfied: bool

    def to_dict(self) -> dict:
        m = self.measured
        return {
            "index": self.index,
            "prompt": self.prompt.to_dict(),
            "raw_reply": self.raw_reply,
            "summary": self.summary,
            "measured": None if m is None else {"kind": m.kind.value, "value": m.value},
            "satisfied": self.satisfied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> IterationRecord:
        m = d.get("measured")
        return cls(
            index=int(d["index"]),
            prompt=ChatExchange.from_dict(d["prompt"]),
            raw_reply=d["raw_reply"],
            summary=d["summary"],
            measured=None if m is None else Measurement(AttributeKind(m["kind"]), float(m["value"])),
            satisfied=bool(d["satisfied"]),
        )


@dataclass(frozen=True)
class Outcome:
    status: str
    at_iteration: int | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "at_iteration": self.at_iteration}


@dataclass(frozen=True)
class IterationTrace:
    sample_id: str
    target: AttributeTarget
    strategy: Strategy
    max_iterations: int
    records: tuple[IterationRecord, ...]
    outcome: Outcome
    config_fingerprint: str = ""
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.outcome.status == ABORTED

    @property
    def succeeded(self) -> bool:
        return self.outcome.status == SUCCESS

    def to_dict(self) -> dict:
        return {
            "type": "control",
            "sample_id": self.sample_id,
            "config_fingerprint": self.config_fingerprint,
            "strategy": self.strategy.value,
            "max_iterations": self.max_iterations,
            "target": self.target.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "outcome": self.outcome.to_dict(),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> IterationTrace:
        return cls(
            sample_id=d["sample_id"],
            target=AttributeTarget.from_dict(d["target"]),
            strategy=Strategy(d["strategy"]),
            max_iterations=int(d["max_iterations"]),
            records=tuple(IterationRecord.from_dict(r) for r in d["records"]),
            outcome=Outcome(d["outcome"]["status"], d["outcome"].get("at_iteration")),
            config_fingerprint=d.get("config_fingerprint", ""),
            error=d.get("error"),
        )

    def validate(self) -> None:
        """Raise ValueError if the trace breaks the loop's bookkeeping invariants."""
        for i, rec in enumerate(self.records):
            if rec.index != i:
                raise ValueError(f"record {i} has index {rec.index}")
            expected = rec.measured is not None and check(rec.measured, self.target.rule)
            if rec.satisfied != expected:
                raise ValueError(f"record {i} satisfied flag disagrees with its measurement")
        if len(self.records) > self.max_iterations + 1:
            raise ValueError("more records than max_iterations + 1")
        first = next((r.index for r in self.records if r.satisfied), None)
        status = self.outcome.status
        if status == SUCCESS:
            if first is None or first != len(self.records) - 1 or self.outcome.at_iteration != first:
                raise ValueError("success must end at the first satisfied record")
        elif status == FAILURE:
            if first is not None or len(self.records) != self.max_iterations + 1:
                raise ValueError("failure must exhaust every iteration without success")
        elif status == ABORTED:
            if first is not None:
                raise ValueError("aborted trace contains a satisfied record")
        else:
            raise ValueError(f"unknown outcome status {status!r}")


class RunAborted(CtrlSumError):
    """A remote service failed mid-run; ``trace`` holds the partial, aborted trace."""

    def __init__(self, trace: object, cause: BaseException):
        self.trace = trace
        super().__init__(f"run for sample {getattr(trace, 'sample_id', '?')!r} aborted: {cause}")


def generate(model: ChatModel, exchange: ChatExchange) -> tuple[str, str]:
    """Call the model and pull out the summary; returns (raw_reply, summary).

    An empty or sentinel-only reply yields an empty summary rather than an error.
    """
    raw = model.complete(exchange)
    try:
        summary = extract_summary(raw) if raw else ""
    except EmptyOutput:
        summary = ""
    return raw, summary


def measure_text(
    kind: AttributeKind, summary: str, ctx: MeasurementContext, provider: EmbeddingProvider | None
) -> Measurement | None:
    try:
        return measure(kind, tokenize(summary), ctx, provider)
    except EmptySummary:
        return None


def run_control(
    doc: str,
    ctx: MeasurementContext,
    target: AttributeTarget,
    config: LoopConfig,
    model: ChatModel,
    bundle: PromptBundle,
    provider: EmbeddingProvider | None,
    *,
    sample_id: str = "",
    speaker: str | None = None,
    fingerprint: str = "",
) -> IterationTrace:
    """Generate a draft, then refine with ``config.strategy`` until the target holds.

    Record 0 is the initial draft; at most ``config.max_iterations``
    refinements follow. Each refinement feeds back the latest summary. If a
    reply contains no measurable summary, the next step re-issues the initial
    prompt. Service outages raise RunAborted carrying the partial trace.
    """
    if not doc or not doc.strip():
        raise ValueError("document must be non-empty")
    if not ctx.supports(target.kind):
        raise KindMismatch(f"measurement context lacks what {target.kind} needs")
    initial = build_initial(doc, target, bundle, topics=ctx.topics, speaker=speaker, settings=config.settings)
    records: list[IterationRecord] = []

    def finish(outcome: Outcome, error: str | None = None) -> IterationTrace:
        return IterationTrace(
            sample_id=sample_id,
            target=target,
            strategy=config.strategy,
            max_iterations=config.max_iterations,
            records=tuple(records),
            outcome=outcome,
            config_fingerprint=fingerprint,
            error=error,
        )

    try:
        for index in range(config.max_iterations + 1):
            last = records[-1] if records else None
            if last is None or last.measured is None:
                prompt = initial
            else:
                prompt = build_refinement(
                    config.strategy, doc, target, last.summary, last.measured, bundle,
                    topics=ctx.topics, speaker=speaker, settings=config.settings,
                )
            raw, summary = generate(model, prompt)
            measured = measure_text(target.kind, summary, ctx, provider)
            ok = measured is not None and check(measured, target.rule)
            records.append(IterationRecord(index, prompt, raw, summary, measured, ok))
            log.debug("sample %s iteration %d: %s -> %s", sample_id, index, measured, ok)
            if ok:
                return finish(Outcome(SUCCESS, index))
    except (ServiceUnavailable, ScriptExhausted) as exc:
        raise RunAborted(finish(Outcome(ABORTED), f"{type(exc).__name__}: {exc}"), exc) from exc
    return finish(Outcome(FAILURE))
