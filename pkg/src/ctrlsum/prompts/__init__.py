"""Prompt construction for the initial draft and the Iter / SAI / GTE refinements.

Templates are plain UTF-8 files with ``{placeholder}`` fields, laid out as
``<root>/<attribute>/<name>.txt`` where ``name`` is one of ``initial``,
``iter``, ``sai`` or ``gte``. ``gte.txt`` holds only the self-explanation
guidance; a GTE prompt is the SAI block followed by that guidance.
``<root>/system.txt`` and ``<root>/format.txt`` are shared by all attributes.
The shipped templates in this directory are paraphrased, not the published
wording.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

from ..errors import KindMismatch, UnresolvedPlaceholder
from ..llm import ChatExchange, ChatMessage
from ..metrics import AttributeKind, Measurement
from ..textcore import tokenize, word_count

if TYPE_CHECKING:
    from ..control import AttributeTarget

DEFAULT_ROOT = Path(__file__).parent

PLACEHOLDERS = frozenset(
    {
        "document",
        "target",
        "tolerance",
        "previous_summary",
        "measured_value",
        "topic_list",
        "speaker_name",
        "source_words",
        "summary_words",
    }
)

TEMPLATE_NAMES = ("initial", "iter", "sai", "gte")

# Block headers are emitted by code, not templates, so block order stays
# checkable whatever wording operators put in the files.
DOCUMENT_HEADER = "### Document"
INSTRUCTION_HEADER = "### Instruction"
PREVIOUS_HEADER = "### Previous summary"
ITER_HEADER = "### Feedback"
SAI_HEADER = "### Step-by-step attribute identification"
SEG_HEADER = "### Self-explanation guidance"
FORMAT_HEADER = "### Output format"


class Strategy(str, Enum):
    ITER = "iter"
    SAI = "sai"
    GTE = "gte"

    def __str__(self) -> str:
        return self.value


def _fields(template: str) -> set[str]:
    names = set()
    for _, name, _, _ in string.Formatter().parse(template):
        if name is not None:
            names.add(name)
    return names


def _check_template(label: str, template: str) -> None:
    unknown = _fields(template) - PLACEHOLDERS
    if unknown:
        raise UnresolvedPlaceholder(f"{label}: unknown placeholder(s) {sorted(unknown)}")


@dataclass(frozen=True)
class PromptBundle:
    system: str
    output_format: str
    templates: Mapping[tuple[AttributeKind, str], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _check_template("system", self.system)
        _check_template("format", self.output_format)
        for (kind, name), text in self.templates.items():
            _check_template(f"{kind}/{name}", text)
        for kind in AttributeKind:
            for name in TEMPLATE_NAMES:
                if (kind, name) not in self.templates:
                    raise UnresolvedPlaceholder(f"missing template {kind}/{name}")

    def template(self, kind: AttributeKind, name: str) -> str:
        return self.templates[(AttributeKind(kind), name)]


def load_bundle(root: str | Path | None = None) -> PromptBundle:
    root = Path(root) if root is not None else DEFAULT_ROOT
    read = lambda p: p.read_text(encoding="utf-8").strip()  # noqa: E731
    templates = {}
    for kind in AttributeKind:
        for name in TEMPLATE_NAMES:
            templates[(kind, name)] = read(root / kind.value / f"{name}.txt")
    return PromptBundle(system=read(root / "system.txt"), output_format=read(root / "format.txt"), templates=templates)


def fmt_value(x: float) -> str:
    return f"{x:.1f}"


def _render(label: str, template: str, values: Mapping[str, str | None]) -> str:
    missing = sorted(n for n in _fields(template) if values.get(n) is None)
    if missing:
        raise UnresolvedPlaceholder(f"{label}: no value for {missing}")
    return template.format_map(values)


@dataclass(frozen=True)
class ExchangeSettings:
    model_id: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024


def _target_values(target: AttributeTarget) -> dict[str, str | None]:
    rule = target.rule
    if hasattr(rule, "half_width"):
        return {"target": fmt_value(rule.target), "tolerance": fmt_value(rule.half_width)}
    return {"target": fmt_value(rule.threshold), "tolerance": None}


def _values(
    doc: str,
    target: AttributeTarget,
    topics: Sequence[str],
    speaker: str | None,
    prev_summary: str | None = None,
    measured: Measurement | None = None,
) -> dict[str, str | None]:
    values: dict[str, str | None] = {
        "document": doc,
        "topic_list": ", ".join(topics) if topics else None,
        "speaker_name": speaker,
        "source_words": str(word_count(tokenize(doc))),
        "previous_summary": prev_summary,
        "summary_words": str(word_count(tokenize(prev_summary))) if prev_summary is not None else None,
        "measured_value": fmt_value(measured.value) if measured is not None else None,
    }
    values.update(_target_values(target))
    return values


def _instruction(doc: str, targets: Sequence[AttributeTarget], bundle: PromptBundle, topics, speaker) -> str:
    lines = []
    for t in targets:
        lines.append(_render(f"{t.kind}/initial", bundle.template(t.kind, "initial"), _values(doc, t, topics, speaker)))
    return "\n".join(lines)


def _exchange(bundle: PromptBundle, user: str, settings: ExchangeSettings | None) -> ChatExchange:
    settings = settings or ExchangeSettings()
    return ChatExchange(
        messages=(ChatMessage("system", bundle.system), ChatMessage("user", user)),
        model_id=settings.model_id,
        temperature=settings.temperature,
        max_output_tokens=settings.max_output_tokens,
    )


def build_initial(
    doc: str,
    target: AttributeTarget | Sequence[AttributeTarget],
    bundle: PromptBundle,
    *,
    topics: Sequence[str] = (),
    speaker: str | None = None,
    settings: ExchangeSettings | None = None,
) -> ChatExchange:
    """Initial-draft prompt. Passing several targets yields a mixed-attribute draft prompt."""
    if not doc or not doc.strip():
        raise ValueError("document must be non-empty")
    targets = [target] if not isinstance(target, (list, tuple)) else list(target)
    user = "\n\n".join(
        [
            f"{INSTRUCTION_HEADER}\n{_instruction(doc, targets, bundle, topics, speaker)}",
            f"{DOCUMENT_HEADER}\n{doc}",
            f"{FORMAT_HEADER}\n{bundle.output_format}",
        ]
    )
    return _exchange(bundle, user, settings)


def build_refinement(
    strategy: Strategy,
    doc: str,
    target: AttributeTarget,
    prev_summary: str,
    measured: Measurement,
    bundle: PromptBundle,
    *,
    topics: Sequence[str] = (),
    speaker: str | None = None,
    restate: Sequence[AttributeTarget] | None = None,
    settings: ExchangeSettings | None = None,
) -> ChatExchange:
    """Refinement prompt carrying [document; instruction; previous summary; feedback].

    Feedback is the regenerate notice for Iter, the identification block for
    SAI, and identification followed by self-explanation guidance for GTE.
    ``restate`` replaces the instruction's target list (mixed-attribute
    passes restate every target while the feedback covers ``target`` only).
    """
    strategy = Strategy(strategy)
    if not prev_summary or not prev_summary.strip():
        raise ValueError("previous summary must be non-empty")
    if measured.kind != target.kind:
        raise KindMismatch(f"measured {measured.kind} for a {target.kind} target")
    kind = target.kind
    values = _values(doc, target, topics, speaker, prev_summary, measured)
    instruction = _instruction(doc, list(restate) if restate else [target], bundle, topics, speaker)
    blocks = [
        f"{DOCUMENT_HEADER}\n{doc}",
        f"{INSTRUCTION_HEADER}\n{instruction}",
        f"{PREVIOUS_HEADER}\n{prev_summary}",
    ]
    if strategy == Strategy.ITER:
        blocks.append(f"{ITER_HEADER}\n{_render(f'{kind}/iter', bundle.template(kind, 'iter'), values)}")
    else:
        blocks.append(f"{SAI_HEADER}\n{_render(f'{kind}/sai', bundle.template(kind, 'sai'), values)}")
        if strategy == Strategy.GTE:
            blocks.append(f"{SEG_HEADER}\n{_render(f'{kind}/gte', bundle.template(kind, 'gte'), values)}")
    blocks.append(f"{FORMAT_HEADER}\n{bundle.output_format}")
    return _exchange(bundle, "\n\n".join(blocks), settings)
