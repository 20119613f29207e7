"""Trace persistence and controllability statistics.

Traces are stored as JSON lines, one complete trace per line. Statistics
follow the iterative-evaluation protocol: failure rate over completed runs
and mean iteration count over successful runs, where a success on the
initial draft counts as iteration 0.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from .control import FAILURE, SUCCESS, IterationTrace, check
from .errors import EmptyInput, EmptyPopulation, LengthMismatch, SchemaError
from .metrics import AttributeKind
from .planner import MixedTrace

Trace = Union[IterationTrace, MixedTrace]

NOT_APPLICABLE = "↺"  # ↺: no successful run to average over
AVG_LABEL = "avg"


# persistence

def trace_from_dict(d: dict) -> Trace:
    kind = d.get("type")
    if kind == "control":
        return IterationTrace.from_dict(d)
    if kind == "mixed":
        return MixedTrace.from_dict(d)
    raise ValueError(f"unknown trace type {kind!r}")


def dumps_trace(trace: Trace) -> str:
    return json.dumps(trace.to_dict(), ensure_ascii=False, sort_keys=True)


def persist_traces(traces: Iterable[Trace], path: str | Path) -> int:
    """Append traces to ``path``; returns the number written."""
    n = 0
    with open(path, "a", encoding="utf-8") as fh:
        for t in traces:
            fh.write(dumps_trace(t) + "\n")
            n += 1
    return n


def iter_traces(path: str | Path) -> Iterator[Trace]:
    """Stream traces from a JSON-lines store, validating each one."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                trace = trace_from_dict(json.loads(line))
                trace.validate()
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg}); truncated or corrupt record", line=lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"invalid trace: {exc!r}", line=lineno) from exc
            yield trace


@dataclass
class RunSet:
    traces: list[Trace]
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        prints = {t.config_fingerprint for t in self.traces}
        if len(prints) > 1:
            raise SchemaError(f"traces come from {len(prints)} different configurations: {sorted(prints)}")
        if prints and not self.config_fingerprint:
            self.config_fingerprint = next(iter(prints))
        elif prints and self.config_fingerprint not in prints:
            raise SchemaError("config fingerprint does not match the traces")

    @property
    def completed(self) -> list[Trace]:
        return [t for t in self.traces if not t.aborted]

    @property
    def n_aborted(self) -> int:
        return sum(1 for t in self.traces if t.aborted)

    def control_traces(self) -> list[IterationTrace]:
        return [t for t in self.completed if isinstance(t, IterationTrace)]

    def mixed_traces(self) -> list[MixedTrace]:
        return [t for t in self.completed if isinstance(t, MixedTrace)]


def load_runset(path: str | Path) -> RunSet:
    return RunSet(list(iter_traces(path)))


# statistics

@dataclass(frozen=True)
class ControlStats:
    failure_rate: float
    avg_iterations: float | None
    avg_iterations_refinements_only: float | None
    n_success: int
    n_failure: int

    def to_dict(self) -> dict:
        return {
            "failure_rate": self.failure_rate,
            "avg_iterations": self.avg_iterations,
            "avg_iterations_refinements_only": self.avg_iterations_refinements_only,
            "n_success": self.n_success,
            "n_failure": self.n_failure,
            "cell": format_cell(self),
        }


def compute_stats(traces: Iterable[Trace] | RunSet) -> ControlStats:
    """Failure rate and mean success iteration over completed single-attribute traces."""
    if isinstance(traces, RunSet):
        traces = traces.traces
    done = [t for t in traces if isinstance(t, IterationTrace) and not t.aborted]
    if not done:
        raise EmptyPopulation("no completed single-attribute traces")
    iterations = [t.outcome.at_iteration for t in done if t.outcome.status == SUCCESS]
    n_failure = sum(1 for t in done if t.outcome.status == FAILURE)
    refinements = [i for i in iterations if i >= 1]
    return ControlStats(
        failure_rate=100.0 * n_failure / (len(iterations) + n_failure),
        avg_iterations=sum(iterations) / len(iterations) if iterations else None,
        avg_iterations_refinements_only=sum(refinements) / len(refinements) if refinements else None,
        n_success=len(iterations),
        n_failure=n_failure,
    )


def group_key(trace: IterationTrace) -> tuple[str, str]:
    return (trace.target.kind.value, trace.target.label or "-")


def stats_by_label(runs: RunSet | Iterable[Trace]) -> dict[tuple[str, str], ControlStats]:
    """Per (kind, label) statistics plus an (kind, "avg") row over every label of the kind."""
    traces = runs.traces if isinstance(runs, RunSet) else list(runs)
    groups: dict[tuple[str, str], list[IterationTrace]] = defaultdict(list)
    by_kind: dict[str, list[IterationTrace]] = defaultdict(list)
    for t in traces:
        if isinstance(t, IterationTrace) and not t.aborted:
            groups[group_key(t)].append(t)
            by_kind[t.target.kind.value].append(t)
    if not groups:
        raise EmptyPopulation("no completed single-attribute traces")
    order = [k.value for k in AttributeKind]
    out: dict[tuple[str, str], ControlStats] = {}
    for kind in sorted(by_kind, key=order.index):
        labels = sorted(lbl for (k, lbl) in groups if k == kind)
        for lbl in labels:
            out[(kind, lbl)] = compute_stats(groups[(kind, lbl)])
        if labels != ["-"]:
            out[(kind, AVG_LABEL)] = compute_stats(by_kind[kind])
    return out


def rmse(requested: Sequence[float], measured: Sequence[float]) -> float:
    if len(requested) != len(measured):
        raise LengthMismatch(f"{len(requested)} requested vs {len(measured)} measured values")
    if not requested:
        raise EmptyInput("rmse needs at least one pair")
    return math.sqrt(sum((m - r) ** 2 for r, m in zip(requested, measured)) / len(requested))


def mixed_summary(runs: RunSet | Iterable[Trace]) -> dict[str, dict]:
    """Per-kind errors for min-planning runs, at the draft and after planning.

    Numerical kinds report rMSE between requested target and measured value;
    linguistic kinds report the percentage of samples below their floor.
    """
    traces = runs.traces if isinstance(runs, RunSet) else list(runs)
    mixed = [t for t in traces if isinstance(t, MixedTrace) and not t.aborted]
    if not mixed:
        raise EmptyPopulation("no completed mixed traces")
    pairs: dict[AttributeKind, dict[str, list]] = defaultdict(lambda: {"req": [], "draft": [], "final": [], "n": 0})
    out: dict[str, dict] = {}
    for t in mixed:
        for target in t.targets:
            entry = pairs[target.kind]
            entry["n"] += 1
            if target.kind.is_numerical:
                d = t.draft.measurements.get(target.kind)
                f = t.final_measurements.get(target.kind)
                if d is None or f is None:
                    continue
                entry["req"].append(target.rule.target)
                entry["draft"].append(d.value)
                entry["final"].append(f.value)
            else:
                entry["draft"].append(t.satisfied(target.kind, at_draft=True))
                entry["final"].append(t.satisfied(target.kind))
    for kind in AttributeKind:
        if kind not in pairs:
            continue
        e = pairs[kind]
        if kind.is_numerical:
            out[kind.value] = {
                "metric": "rmse",
                "n": e["n"],
                "draft": rmse(e["req"], e["draft"]) if e["req"] else None,
                "final": rmse(e["req"], e["final"]) if e["req"] else None,
            }
        else:
            out[kind.value] = {
                "metric": "failure_rate",
                "n": e["n"],
                "draft": 100.0 * e["draft"].count(False) / len(e["draft"]),
                "final": 100.0 * e["final"].count(False) / len(e["final"]),
            }
    return out


# reporting

def format_cell(stats: ControlStats) -> str:
    """Table cell in ``failure% / avg-iterations`` form, e.g. ``0.00% / 2.87``."""
    avg = NOT_APPLICABLE if stats.avg_iterations is None else f"{stats.avg_iterations:.2f}"
    return f"{stats.failure_rate:.2f}% / {avg}"


_CELL_RE = re.compile(r"^(\d+(?:\.\d+)?)% / (\S+)$")


def parse_cell(cell: str) -> tuple[float, float | None]:
    m = _CELL_RE.match(cell.strip())
    if not m:
        raise ValueError(f"not a stats cell: {cell!r}")
    avg = None if m.group(2) == NOT_APPLICABLE else float(m.group(2))
    return float(m.group(1)), avg


def render_table(grouped: dict[tuple[str, str], ControlStats]) -> str:
    rows = [("attribute", "label", "failure / avg iter", "n")]
    for (kind, label), st in grouped.items():
        rows.append((kind, label, format_cell(st), str(st.n_success + st.n_failure)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for j, r in enumerate(rows):
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        if j == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict[tuple[str, str], tuple[float, float | None]]:
    """Read a table produced by :func:`render_table` back into numbers."""
    out = {}
    for line in text.splitlines()[2:]:
        if not line.startswith("|"):
            continue
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        out[(cells[0], cells[1])] = parse_cell(cells[2])
    return out


def trajectory_rows(runs: RunSet | Iterable[Trace]) -> list[dict]:
    traces = runs.traces if isinstance(runs, RunSet) else list(runs)
    rows = []
    for t in traces:
        if isinstance(t, IterationTrace):
            for r in t.records:
                rows.append(
                    {
                        "sample_id": t.sample_id,
                        "attribute": t.target.kind.value,
                        "label": t.target.label or "",
                        "target": t.target.rule.target if t.target.kind.is_numerical else t.target.rule.threshold,
                        "iteration": r.index,
                        "measured": "" if r.measured is None else repr(r.measured.value),
                        "satisfied": int(r.satisfied),
                        "status": t.outcome.status,
                    }
                )
        elif t.draft is not None:
            steps = [("draft", t.draft)] + [(p.kind.value, p.record) for p in t.passes]
            for i, (focus, rec) in enumerate(steps):
                for target in t.targets:
                    m = rec.measurements.get(target.kind)
                    rows.append(
                        {
                            "sample_id": t.sample_id,
                            "attribute": target.kind.value,
                            "label": target.label or "",
                            "target": target.rule.target if target.kind.is_numerical else target.rule.threshold,
                            "iteration": i,
                            "measured": "" if m is None else repr(m.value),
                            "satisfied": int(m is not None and check(m, target.rule)),
                            "status": f"mixed:{focus}",
                        }
                    )
    return rows


TRAJECTORY_FIELDS = ["sample_id", "attribute", "label", "target", "iteration", "measured", "satisfied", "status"]


def trajectory_csv(runs: RunSet | Iterable[Trace]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRAJECTORY_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(trajectory_rows(runs))
    return buf.getvalue()


def eval_summary(runs: RunSet) -> dict:
    """Machine-readable statistics for a run set (shared by ``eval`` and ``report``)."""
    out: dict = {
        "config_fingerprint": runs.config_fingerprint,
        "n_traces": len(runs.traces),
        "n_aborted": runs.n_aborted,
    }
    if runs.control_traces():
        out["overall"] = compute_stats(runs).to_dict()
        out["groups"] = [
            {"attribute": k, "label": lbl, **st.to_dict()} for (k, lbl), st in stats_by_label(runs).items()
        ]
    if runs.mixed_traces():
        out["mixed"] = mixed_summary(runs)
    if "overall" not in out and "mixed" not in out:
        raise EmptyPopulation("run set has no completed traces")
    return out


@dataclass(frozen=True)
class Report:
    text: str
    data: dict
    trajectories: str

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"text": out / "report.md", "json": out / "report.json", "csv": out / "trajectories.csv"}
        paths["text"].write_text(self.text, encoding="utf-8")
        paths["json"].write_text(json.dumps(self.data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        paths["csv"].write_text(self.trajectories, encoding="utf-8")
        return paths


def report(runs: RunSet) -> Report:
    data = eval_summary(runs)
    parts = [f"# Controllability report\n\nconfig: {runs.config_fingerprint or '-'}; "
             f"traces: {data['n_traces']} ({data['n_aborted']} aborted, excluded)\n"]
    if "groups" in data:
        grouped = {(g["attribute"], g["label"]): _stats_from(g) for g in data["groups"]}
        parts.append("## Single-attribute control\n\n" + render_table(grouped))
    if "mixed" in data:
        lines = ["## Mixed-attribute control (min-planning)", "",
                 "| attribute | metric | n | mixed-draft | min-planning |", "|---|---|---|---|---|"]
        for kind, m in data["mixed"].items():
            fmt = (lambda v: "-" if v is None else f"{v:.2f}")
            lines.append(f"| {kind} | {m['metric']} | {m['n']} | {fmt(m['draft'])} | {fmt(m['final'])} |")
        parts.append("\n".join(lines) + "\n")
    return Report(text="\n".join(parts), data=data, trajectories=trajectory_csv(runs))


def _stats_from(d: dict) -> ControlStats:
    return ControlStats(
        failure_rate=d["failure_rate"],
        avg_iterations=d["avg_iterations"],
        avg_iterations_refinements_only=d["avg_iterations_refinements_only"],
        n_success=d["n_success"],
        n_failure=d["n_failure"],
    )
