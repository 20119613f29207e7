"""Mixed-attribute control by min-planning.

A single mixed draft is generated for all targets. Attributes that miss
their rule on the draft are then adjusted one at a time, worst first, with
exactly one GTE refinement each; there is no further iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .control import (
    AttributeTarget,
    LoopConfig,
    Rule,
    RunAborted,
    Window,
    check,
    generate,
    measure_text,
)
from .embeddings import EmbeddingProvider
from .errors import KindMismatch, ScriptExhausted, ServiceUnavailable
from .llm import ChatExchange, ChatModel
from .metrics import AttributeKind, Measurement, MeasurementContext
from .prompts import PromptBundle, Strategy, build_initial, build_refinement

log = logging.getLogger(__name__)


def misalignment(measured: Measurement, rule: Rule) -> float:
    """Distance from the rule in rule units.

    Window: ``|value - target| / half_width`` (satisfied iff <= 1).
    Floor: ``max(0, threshold - value) / threshold`` (satisfied iff 0).
    """
    if isinstance(rule, Window):
        if not measured.kind.is_numerical:
            raise KindMismatch(f"{measured.kind} cannot be compared with a window")
        return abs(measured.value - rule.target) / rule.half_width
    if measured.kind.is_numerical:
        raise KindMismatch(f"{measured.kind} cannot be compared with a floor")
    return max(0.0, rule.threshold - measured.value) / rule.threshold


@dataclass(frozen=True)
class MixedTarget:
    targets: tuple[AttributeTarget, ...]
    ctx: MeasurementContext

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        kinds = [t.kind for t in self.targets]
        if not 2 <= len(kinds) <= 4:
            raise ValueError("mixed control needs 2 to 4 targets")
        if len(set(kinds)) != len(kinds):
            raise ValueError("mixed targets must have distinct kinds")
        for k in kinds:
            if not self.ctx.supports(k):
                raise KindMismatch(f"measurement context lacks what {k} needs")

    def target_for(self, kind: AttributeKind) -> AttributeTarget:
        return next(t for t in self.targets if t.kind == kind)


@dataclass(frozen=True)
class MixedRecord:
    """One generation in a mixed run, measured against every requested kind."""

    prompt: ChatExchange
    raw_reply: str
    summary: str
    measurements: dict[AttributeKind, Measurement]

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt.to_dict(),
            "raw_reply": self.raw_reply,
            "summary": self.summary,
            "measurements": {k.value: m.value for k, m in self.measurements.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> MixedRecord:
        return cls(
            prompt=ChatExchange.from_dict(d["prompt"]),
            raw_reply=d["raw_reply"],
            summary=d["summary"],
            measurements={AttributeKind(k): Measurement(AttributeKind(k), float(v)) for k, v in d["measurements"].items()},
        )


@dataclass(frozen=True)
class PlanPass:
    kind: AttributeKind
    draft_misalignment: float
    record: MixedRecord


@dataclass(frozen=True)
class MixedTrace:
    sample_id: str
    targets: tuple[AttributeTarget, ...]
    draft: MixedRecord | None
    passes: tuple[PlanPass, ...]
    final_measurements: dict[AttributeKind, Measurement]
    config_fingerprint: str = ""
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.error is not None

    @property
    def final_summary(self) -> str | None:
        if self.passes:
            return self.passes[-1].record.summary
        return self.draft.summary if self.draft else None

    def satisfied(self, kind: AttributeKind, *, at_draft: bool = False) -> bool:
        target = next(t for t in self.targets if t.kind == kind)
        source = self.draft.measurements if at_draft else self.final_measurements
        m = source.get(kind)
        return m is not None and check(m, target.rule)

    def to_dict(self) -> dict:
        return {
            "type": "mixed",
            "sample_id": self.sample_id,
            "config_fingerprint": self.config_fingerprint,
            "strategy": "min-planning",
            "targets": [t.to_dict() for t in self.targets],
            "draft": None if self.draft is None else self.draft.to_dict(),
            "passes": [
                {"kind": p.kind.value, "draft_misalignment": p.draft_misalignment, "record": p.record.to_dict()}
                for p in self.passes
            ],
            "final_measurements": {k.value: m.value for k, m in self.final_measurements.items()},
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MixedTrace:
        return cls(
            sample_id=d["sample_id"],
            targets=tuple(AttributeTarget.from_dict(t) for t in d["targets"]),
            draft=None if d.get("draft") is None else MixedRecord.from_dict(d["draft"]),
            passes=tuple(
                PlanPass(AttributeKind(p["kind"]), float(p["draft_misalignment"]), MixedRecord.from_dict(p["record"]))
                for p in d["passes"]
            ),
            final_measurements={
                AttributeKind(k): Measurement(AttributeKind(k), float(v)) for k, v in d["final_measurements"].items()
            },
            config_fingerprint=d.get("config_fingerprint", ""),
            error=d.get("error"),
        )

    def validate(self) -> None:
        if self.aborted:
            return
        if self.draft is None:
            raise ValueError("completed mixed trace has no draft")
        kinds = [p.kind for p in self.passes]
        if len(set(kinds)) != len(kinds):
            raise ValueError("a kind was adjusted more than once")
        scores = [p.draft_misalignment for p in self.passes]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("passes are not ordered by descending draft misalignment")
        if not set(self.final_measurements) <= {t.kind for t in self.targets}:
            raise ValueError("final measurements include a kind that was not requested")


def _order_key(kind: AttributeKind, score: float) -> tuple:
    # worst first; ties: numerical before linguistic, then by name
    return (-score, 0 if kind.is_numerical else 1, kind.value)


def plan_order(draft: dict[AttributeKind, Measurement], targets: Sequence[AttributeTarget]) -> list[tuple[AttributeKind, float]]:
    """Kinds unsatisfied on the draft, most misaligned first."""
    pending = []
    for t in targets:
        m = draft.get(t.kind)
        if m is not None and check(m, t.rule):
            continue
        score = misalignment(m, t.rule) if m is not None else float("inf")
        pending.append((t.kind, score))
    pending.sort(key=lambda ks: _order_key(*ks))
    return pending


def run_min_planning(
    doc: str,
    mixed: MixedTarget,
    config: LoopConfig,
    model: ChatModel,
    bundle: PromptBundle,
    provider: EmbeddingProvider | None,
    *,
    sample_id: str = "",
    speaker: str | None = None,
    fingerprint: str = "",
) -> MixedTrace:
    """Mixed draft, then one GTE pass per unsatisfied attribute, worst first.

    Every attribute is re-measured after each pass. ``config.strategy`` is
    ignored: passes always use GTE. A pass whose focus attribute cannot be
    measured on the current summary (empty reply) is skipped.
    """
    if not doc or not doc.strip():
        raise ValueError("document must be non-empty")
    ctx = mixed.ctx
    settings = config.settings
    draft: MixedRecord | None = None
    passes: list[PlanPass] = []

    def measure_all(summary: str) -> dict[AttributeKind, Measurement]:
        out = {}
        for t in mixed.targets:
            m = measure_text(t.kind, summary, ctx, provider)
            if m is not None:
                out[t.kind] = m
        return out

    def finish(error: str | None = None) -> MixedTrace:
        latest = passes[-1].record if passes else draft
        return MixedTrace(
            sample_id=sample_id,
            targets=mixed.targets,
            draft=draft,
            passes=tuple(passes),
            final_measurements=dict(latest.measurements) if latest else {},
            config_fingerprint=fingerprint,
            error=error,
        )

    try:
        prompt = build_initial(doc, list(mixed.targets), bundle, topics=ctx.topics, speaker=speaker, settings=settings)
        raw, summary = generate(model, prompt)
        draft = MixedRecord(prompt, raw, summary, measure_all(summary))
        current = draft
        for kind, score in plan_order(draft.measurements, mixed.targets):
            measured = current.measurements.get(kind)
            if measured is None:
                log.warning("sample %s: cannot measure %s on current summary; skipping pass", sample_id, kind)
                continue
            prompt = build_refinement(
                Strategy.GTE, doc, mixed.target_for(kind), current.summary, measured, bundle,
                topics=ctx.topics, speaker=speaker, restate=mixed.targets, settings=settings,
            )
            raw, summary = generate(model, prompt)
            current = MixedRecord(prompt, raw, summary, measure_all(summary))
            passes.append(PlanPass(kind, score, current))
    except (ServiceUnavailable, ScriptExhausted) as exc:
        trace = finish(f"{type(exc).__name__}: {exc}")
        raise RunAborted(trace, exc) from exc
    return finish()

