"""Command-line entry point: ``run``, ``metrics``, ``eval``, ``report``, ``thresholds``.

Exit codes: 0 on success, 1 on usage/config/IO/data errors, 2 when a run
completed but at least one trace was aborted by a service outage.
Credentials are read from the environment only (``CTRLSUM_CHAT_API_KEY``,
``CTRLSUM_EMBED_API_KEY``); endpoints may come from flags or from
``CTRLSUM_CHAT_URL`` / ``CTRLSUM_EMBED_URL``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .control import AttributeTarget, LoopConfig, RunAborted, Window, run_control
from .dataset import LabelMap, Sample, derive_thresholds, load_corpus, targets_for
from .embeddings import EmbeddingProvider, HashEmbeddingProvider, RemoteEmbeddingProvider
from .errors import CtrlSumError, LabelMissing
from .evalharness import dumps_trace, eval_summary, iter_traces, load_runset, render_table, report, stats_by_label
from .llm import ChatCompletionsClient, ChatModel, ScriptedModel
from .metrics import AttributeKind, MeasurementContext, measure
from .planner import MixedTarget, run_min_planning
from .prompts import Strategy, load_bundle
from .textcore import tokenize

log = logging.getLogger("ctrlsum")

EXIT_OK, EXIT_ERROR, EXIT_ABORTED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for aborted runs here.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _kind(value: str) -> AttributeKind:
    try:
        return AttributeKind(value.strip().lower())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown attribute {value!r}; choose from {[k.value for k in AttributeKind]}")


def _kinds(value: str) -> list[AttributeKind]:
    return [_kind(v) for v in value.split(",") if v.strip()]


def _add_provider_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding provider")
    g.add_argument("--provider", choices=["hash", "remote"], default="hash")
    g.add_argument("--hash-dim", type=int, default=128)
    g.add_argument("--hash-seed", type=int, default=0)
    g.add_argument("--embed-url", default=None, help="embeddings endpoint (or CTRLSUM_EMBED_URL)")
    g.add_argument("--embed-model", default=None)
    g.add_argument("--embed-dim", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctrlsum", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run attribute control over a corpus")
    run.add_argument("--data", required=True, type=Path, help="corpus JSON-lines file")
    which = run.add_mutually_exclusive_group(required=True)
    which.add_argument("--attribute", type=_kind, help="single attribute to control")
    which.add_argument("--attributes", type=_kinds, help="comma-separated attributes for min-planning")
    run.add_argument("--label", default=None, help="request this label for every sample (single attribute)")
    run.add_argument("--target", type=float, default=None, help="explicit numeric target (numerical attributes)")
    run.add_argument("--strategy", type=Strategy, choices=list(Strategy), default=Strategy.GTE)
    run.add_argument("--model", default=None, help="chat model id")
    run.add_argument("--chat-url", default=None, help="chat-completions endpoint (or CTRLSUM_CHAT_URL)")
    run.add_argument("--scripted", type=Path, default=None,
                     help="JSON replies for an offline scripted model: a list, or {sample_id: list}")
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-tokens", type=int, default=1024)
    run.add_argument("--max-iterations", type=int, default=20)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--max-in-flight", type=int, default=8)
    run.add_argument("--out", required=True, type=Path, help="trace store (appended)")
    run.add_argument("--labels", type=Path, default=None, help="JSON label-map overrides")
    run.add_argument("--topic-floor", type=float, default=None)
    run.add_argument("--speaker-floor", type=float, default=None)
    run.add_argument("--prompts", type=Path, default=None, help="prompt template directory")
    _add_provider_args(run)

    met = sub.add_parser("metrics", help="measure one attribute of a summary")
    met.add_argument("--kind", type=_kind, required=True)
    met.add_argument("summary", type=Path)
    met.add_argument("source", type=Path, help="source document (speaker: the speaker's utterances)")
    met.add_argument("--topic", action="append", default=[], help="topic word (repeatable)")
    _add_provider_args(met)

    ev = sub.add_parser("eval", help="print controllability statistics for a trace store")
    ev.add_argument("traces", type=Path)
    ev.add_argument("--json", action="store_true", help="print machine-readable statistics")

    rep = sub.add_parser("report", help="write report.md, report.json and trajectories.csv")
    rep.add_argument("traces", type=Path)
    rep.add_argument("--out", required=True, type=Path, help="output directory")

    th = sub.add_parser("thresholds", help="derive topic/speaker floors from reference summaries")
    th.add_argument("--data", required=True, type=Path)
    _add_provider_args(th)
    return parser


def make_provider(args: argparse.Namespace) -> EmbeddingProvider:
    if args.provider == "hash":
        return HashEmbeddingProvider(dim=args.hash_dim, seed=args.hash_seed)
    url = args.embed_url or os.environ.get("CTRLSUM_EMBED_URL")
    if not url or not args.embed_model or not args.embed_dim:
        raise UsageError("--provider remote needs --embed-url (or CTRLSUM_EMBED_URL), --embed-model and --embed-dim")
    return RemoteEmbeddingProvider(url, args.embed_model, args.embed_dim)


def _label_map(args: argparse.Namespace) -> LabelMap:
    labels = LabelMap()
    if args.labels:
        labels = labels.with_overrides(json.loads(args.labels.read_text(encoding="utf-8")))
    extra = {}
    if args.topic_floor is not None:
        extra["topic_floor"] = args.topic_floor
    if args.speaker_floor is not None:
        extra["speaker_floor"] = args.speaker_floor
    return labels.with_overrides(extra) if extra else labels


def _validate_run(args: argparse.Namespace) -> None:
    if args.scripted is None:
        if not args.model:
            raise UsageError("--model is required unless --scripted is given")
        if not (args.chat_url or os.environ.get("CTRLSUM_CHAT_URL")):
            raise UsageError("--chat-url (or CTRLSUM_CHAT_URL) is required unless --scripted is given")
    if args.attributes is not None:
        if not 2 <= len(args.attributes) <= 4 or len(set(args.attributes)) != len(args.attributes):
            raise UsageError("--attributes needs 2 to 4 distinct attributes")
        if args.label or args.target is not None:
            raise UsageError("--label/--target apply to single-attribute runs only")
    if args.target is not None and not args.attribute.is_numerical:
        raise UsageError("--target applies to extractiveness or length only")
    if args.label and args.attribute and not args.attribute.is_numerical:
        raise UsageError("--label applies to extractiveness or length only")
    if args.workers < 1 or args.max_iterations < 1:
        raise UsageError("--workers and --max-iterations must be >= 1")
    if args.provider == "remote" and not (
        (args.embed_url or os.environ.get("CTRLSUM_EMBED_URL")) and args.embed_model and args.embed_dim
    ):
        raise UsageError("--provider remote needs --embed-url (or CTRLSUM_EMBED_URL), --embed-model and --embed-dim")


def _model_factory(args: argparse.Namespace) -> Callable[[Sample], ChatModel]:
    if args.scripted is not None:
        script = json.loads(args.scripted.read_text(encoding="utf-8"))
        if isinstance(script, list):
            return lambda sample: ScriptedModel(script)
        if isinstance(script, dict):
            return lambda sample: ScriptedModel(script.get(sample.id, []))
        raise UsageError("--scripted file must hold a JSON list or object")
    client = ChatCompletionsClient(args.chat_url or os.environ["CTRLSUM_CHAT_URL"], max_in_flight=args.max_in_flight)
    return lambda sample: client


def _targets(sample: Sample, args: argparse.Namespace, labels: LabelMap) -> list[AttributeTarget]:
    if args.attributes is not None:
        return targets_for(sample, labels, args.attributes)
    if args.target is not None:
        return [AttributeTarget(args.attribute, Window(args.target, labels.half_width), args.label)]
    override = {args.attribute: args.label} if args.label else None
    return targets_for(sample, labels, [args.attribute], label_override=override)


def _existing_ids(path: Path, fingerprint: str) -> set[str]:
    if not path.exists():
        return set()
    return {t.sample_id for t in iter_traces(path) if t.config_fingerprint == fingerprint and not t.aborted}


def cmd_run(args: argparse.Namespace) -> int:
    _validate_run(args)
    labels = _label_map(args)
    if args.label and args.attribute:
        table = labels.extractiveness if args.attribute == AttributeKind.EXTRACTIVENESS else labels.length
        if args.label not in table:
            raise UsageError(f"unknown {args.attribute} label {args.label!r}; choose from {sorted(table)}")
    samples = load_corpus(args.data)
    bundle = load_bundle(args.prompts)
    provider = make_provider(args)
    config = LoopConfig(
        max_iterations=args.max_iterations,
        strategy=args.strategy,
        model_id=args.model or "scripted",
        temperature=args.temperature,
        max_output_tokens=args.max_tokens,
    )
    mixed = args.attributes is not None
    fingerprint = config.fingerprint(
        mode="min-planning" if mixed else "single",
        attributes=[k.value for k in args.attributes] if mixed else [args.attribute.value],
        label=args.label,
        target=args.target,
        labels=labels.to_dict(),
        provider=provider.config_key,
        prompts=str(args.prompts) if args.prompts else "default",
    )
    done = _existing_ids(args.out, fingerprint)
    make_model = _model_factory(args)

    jobs = []
    for sample in samples:
        if sample.id in done:
            log.info("skipping %s: already in %s", sample.id, args.out)
            continue
        try:
            targets = _targets(sample, args, labels)
        except LabelMissing as exc:
            log.warning("skipping %s", exc)
            continue
        jobs.append((sample, targets))

    def work(sample: Sample, targets: list[AttributeTarget]):
        ctx = sample.context()
        model = make_model(sample)
        try:
            if mixed:
                return run_min_planning(
                    sample.source, MixedTarget(tuple(targets), ctx), config, model, bundle, provider,
                    sample_id=sample.id, speaker=sample.speaker, fingerprint=fingerprint,
                )
            return run_control(
                sample.source, ctx, targets[0], config, model, bundle, provider,
                sample_id=sample.id, speaker=sample.speaker, fingerprint=fingerprint,
            )
        except RunAborted as exc:
            log.error("%s", exc)
            return exc.trace

    n_aborted = 0
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "a", encoding="utf-8") as fh:

        def write(trace) -> None:
            nonlocal n_aborted
            n_aborted += int(trace.aborted)
            fh.write(dumps_trace(trace) + "\n")
            fh.flush()

        if args.workers == 1:
            for sample, targets in jobs:
                write(work(sample, targets))
        else:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                futures = [pool.submit(work, s, t) for s, t in jobs]
                for fut in as_completed(futures):
                    write(fut.result())
    print(f"wrote {len(jobs)} trace(s) to {args.out} ({n_aborted} aborted, {len(done)} already present)")
    return EXIT_ABORTED if n_aborted else EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    summary = tokenize(args.summary.read_text(encoding="utf-8"))
    source_text = args.source.read_text(encoding="utf-8")
    ctx = MeasurementContext(
        source=tokenize(source_text),
        topics=tuple(args.topic),
        speaker_utterances=(source_text,) if args.kind == AttributeKind.SPEAKER else (),
    )
    provider = make_provider(args) if not args.kind.is_numerical else None
    m = measure(args.kind, summary, ctx, provider)
    print(f"{m.value:.1f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    runs = load_runset(args.traces)
    data = eval_summary(runs)
    if args.json:
        print(json.dumps(data, indent=2, ensure_ascii=False))
        return EXIT_OK
    print(f"traces: {data['n_traces']} ({data['n_aborted']} aborted, excluded)")
    if "overall" in data:
        o = data["overall"]
        print(f"failure rate: {o['failure_rate']:.2f}%  avg iterations: {o['cell'].split(' / ')[1]}  "
              f"(successes {o['n_success']}, failures {o['n_failure']})")
        print(render_table(stats_by_label(runs)), end="")
    if "mixed" in data:
        for kind, m in data["mixed"].items():
            print(f"mixed {kind}: {m['metric']} draft={m['draft']} final={m['final']} (n={m['n']})")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rep = report(load_runset(args.traces))
    paths = rep.write(args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_thresholds(args: argparse.Namespace) -> int:
    overrides = derive_thresholds(load_corpus(args.data), make_provider(args))
    print(json.dumps(overrides, indent=2))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "metrics": cmd_metrics, "eval": cmd_eval, "report": cmd_report, "thresholds": cmd_thresholds}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ctrlsum: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CtrlSumError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"ctrlsum: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
