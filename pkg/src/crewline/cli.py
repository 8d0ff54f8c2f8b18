"""Command-line entry point: ``crewline run|validate|replay|diff|scaffold``.

Exit codes:
    0   success (run accepted, config valid, replay equal, diff printed)
    1   run failed, invalid config, missing or unreadable files
    2   run ended with max_revisions_exceeded (output still written)
    3   replay diverged
    64  usage error
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .config import ConfigError, load_config, validate_config
from .domain import CrewConfig, DomainError, RunStatus, Transcript, TranslationJob
from .orchestrator import run_pipeline
from .search import slug
from .transcript import (
    DigestMismatch,
    EventSink,
    ReplayDivergence,
    ReplayError,
    StoreError,
    TranscriptStore,
    diff,
    read_transcript,
    replay,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_MAX_REVISIONS = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crewline", description="Culturally adaptive multi-agent translation pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="translate one text through the four-stage pipeline")
    run.add_argument("--config", required=True, type=Path)
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="file holding the source text")
    src.add_argument("--text", help="source text given inline")
    run.add_argument("--source", required=True, help="source language tag, e.g. en")
    run.add_argument("--target", required=True, help="target language tag, e.g. hi")
    run.add_argument("--domain", default="general", choices=["festival", "religion", "history", "general"])
    run.add_argument("--out", type=Path, default=Path("runs"))
    run.add_argument("--backend", choices=["http", "scripted"], help="override backend.kind")
    run.add_argument("--search", choices=["live", "fixture", "disabled"], help="override search.mode")
    run.add_argument("--job-id", help=argparse.SUPPRESS)

    validate = sub.add_parser("validate", help="check a crew configuration")
    validate.add_argument("--config", required=True, type=Path)

    rp = sub.add_parser("replay", help="re-run a transcript from its recorded replies")
    rp.add_argument("--transcript", required=True, type=Path)
    rp.add_argument("--config", required=True, type=Path)

    df = sub.add_parser("diff", help="compare two transcripts")
    df.add_argument("--a", required=True, type=Path)
    df.add_argument("--b", required=True, type=Path)

    sc = sub.add_parser("scaffold", help="create a search fixture directory")
    sc.add_argument("--dir", required=True, type=Path)
    sc.add_argument("--query", action="append", default=[], help="query to create a fixture stub for")
    return parser


def _err(*lines: str) -> None:
    for line in lines:
        print(line, file=sys.stderr)


def _load(path: Path) -> CrewConfig:
    if not path.is_file():
        raise ConfigError([])
    return load_config(path)


def _report_config_error(path: Path, exc: ConfigError) -> int:
    if not exc.errors:
        _err(f"config file not found: {path}")
    else:
        _err(f"invalid config {path}:")
        _err(*(f"  {e}" for e in exc.errors))
    return EXIT_FAILED


def _apply_overrides(config: CrewConfig, config_path: Path, backend: str | None, search: str | None) -> CrewConfig:
    if backend is None and search is None:
        return config
    doc: dict[str, Any] = config.to_dict()
    if backend is not None:
        doc["backend"]["kind"] = backend
    if search is not None:
        doc["search"]["mode"] = search
    return validate_config(doc, base_dir=config_path.parent.resolve())


def _summary(transcript: Transcript, store: TranscriptStore) -> list[str]:
    final = transcript.final
    assert final is not None
    trace = " ".join(r.value[0].upper() for r in transcript.stage_trace())
    lines = [
        f"status: {final.status.value}",
        f"stage trace: {trace}",
        f"revisions: {transcript.revision_count}",
    ]
    if final.report is not None:
        blocking = len(final.report.blocking_issues)
        lines.append(f"issues: {len(final.report.issues)} ({blocking} blocking)")
        for issue in final.report.issues:
            lines.append(f"  - [{issue.severity.value}] {issue.category.value} ({issue.responsible.value}): {issue.description}")
    if final.failure is not None:
        lines.append(f"failed in {final.failure.stage.value}: {final.failure.cause}")
    lines.append(f"transcript: {store.transcript_path(transcript.job.job_id)}")
    return lines


def cmd_run(args: argparse.Namespace) -> int:
    if args.text is not None:
        text = args.text
    else:
        try:
            text = args.input.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read --input: {exc}") from None
    if not text.strip():
        raise UsageError("source text is empty")
    try:
        config = _apply_overrides(_load(args.config), args.config, args.backend, args.search)
    except ConfigError as exc:
        return _report_config_error(args.config, exc)
    try:
        extra = {"job_id": args.job_id} if args.job_id else {}
        job = TranslationJob(
            source_text=text, source_lang=args.source, target_lang=args.target, cultural_domain=args.domain, **extra
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from None

    store = TranscriptStore(args.out)
    with store.open_log(job.job_id) as log:
        transcript = run_pipeline(job, config, sink=EventSink(log))
    store.write(transcript)

    final = transcript.final
    assert final is not None
    if final.status is RunStatus.MAX_REVISIONS_EXCEEDED:
        _err(
            "=" * 72,
            "WARNING: max_revisions_exceeded - blocking issues remain; output below is unvalidated",
            "=" * 72,
        )
    if final.output is not None and final.status is not RunStatus.FAILED:
        print(final.output.final_text)
    _err(*_summary(transcript, store))
    return {
        RunStatus.ACCEPTED: EXIT_OK,
        RunStatus.MAX_REVISIONS_EXCEEDED: EXIT_MAX_REVISIONS,
        RunStatus.FAILED: EXIT_FAILED,
    }[final.status]


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        config = _load(args.config)
    except ConfigError as exc:
        return _report_config_error(args.config, exc)
    print(f"{args.config}: valid ({len(config.agents)} agents, max_revisions={config.max_revisions})")
    return EXIT_OK


def _read(path: Path) -> Transcript:
    if not path.is_file():
        raise StoreError(f"file not found: {path}")
    return read_transcript(path)


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        transcript = _read(args.transcript)
        config = _load(args.config)
    except StoreError as exc:
        _err(str(exc))
        return EXIT_FAILED
    except ConfigError as exc:
        return _report_config_error(args.config, exc)
    try:
        output = replay(transcript, config)
    except ReplayDivergence as exc:
        print(f"REPLAY DIVERGED: {exc}")
        return EXIT_DIVERGED
    except DigestMismatch as exc:
        _err(f"REPLAY REFUSED: {exc}")
        return EXIT_FAILED
    except ReplayError as exc:
        _err(f"REPLAY REFUSED: {exc}")
        return EXIT_FAILED
    print(f"REPLAY OK ({len(output.final_text.encode('utf-8'))} bytes of final text match)")
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    try:
        a, b = _read(args.a), _read(args.b)
        report = diff(a, b)
    except (StoreError, ValueError) as exc:
        _err(str(exc))
        return EXIT_FAILED
    print(report.render(label_a=args.a.name, label_b=args.b.name))
    return EXIT_OK


def cmd_scaffold(args: argparse.Namespace) -> int:
    directory: Path = args.dir
    directory.mkdir(parents=True, exist_ok=True)
    for query in args.query:
        if not query.strip():
            raise UsageError("--query must be nonempty")
        path = directory / f"{slug(query)}.json"
        if path.exists():
            _err(f"exists, left unchanged: {path}")
            continue
        doc = {"query": query, "results": [{"title": "", "snippet": "", "url": ""}]}
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        print(path)
    readme = directory / "README.txt"
    if not readme.exists():
        readme.write_text(
            "One JSON file per query, named <slug(query)>.json:\n"
            '{"query": "...", "results": [{"title": "...", "snippet": "...", "url": "..."}]}\n',
            encoding="utf-8",
        )
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "replay": cmd_replay,
    "diff": cmd_diff,
    "scaffold": cmd_scaffold,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (run, validate, replay, diff, scaffold)")
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _err(f"crewline: usage error: {exc}")
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())

