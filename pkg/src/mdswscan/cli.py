"""Command-line entry point (``mdswscan``)."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import threading
import time
from collections.abc import Sequence
from pathlib import Path

import psutil

from . import __version__
from .errors import (
    ArchiveUnreadable,
    EncodingError,
    HeaderMismatch,
    LexiconError,
    MalformedRegistration,
    SidecarError,
    SpecError,
    UdiError,
)
from .ingest import SchemaMap
from .pipeline import load_pipeline
from .records import parse_registration_number
from .report import Format
from .runner import full_run
from .scan import default_workers
from .synth import Recipe, synthesize_corpus
from .udi import parse_udi
from .verify import verify_dataset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_SPEC = 3
EXIT_ARCHIVE = 4
EXIT_HEADER = 5
EXIT_ENCODING = 6

# most specific first
_EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (HeaderMismatch, EXIT_HEADER),
    (EncodingError, EXIT_ENCODING),
    (ArchiveUnreadable, EXIT_ARCHIVE),
    (SpecError, EXIT_SPEC),
    (LexiconError, EXIT_SPEC),
    (SidecarError, EXIT_SPEC),
)


def _formats(text: str) -> tuple[Format, ...]:
    try:
        return tuple(Format(f.strip()) for f in text.split(",") if f.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"formats are {', '.join(f.value for f in Format)}") from None


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _ingest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", type=Path, help="schema map JSON (column bindings)")
    p.add_argument("--encoding", choices=("auto", "utf8", "gbk"), default="auto")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--workers", type=_positive, default=None, help="default: available CPUs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdswscan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="run a pipeline over a dump and write a report bundle")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--pipeline", required=True, help="pipeline JSON, directory, or bundled name")
    p.add_argument("--lexicon", type=Path, help="keyword lexicon replacing the one in the pipeline")
    p.add_argument("--exclusions", type=Path)
    p.add_argument("--sidecar", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--formats", type=_formats, default=tuple(Format))
    p.add_argument("--timestamp", help="fixed metadata timestamp (default: now)")
    _ingest_args(p)

    udi = sub.add_parser("udi", help="UDI tools").add_subparsers(dest="action", required=True)
    p = udi.add_parser("parse", help="parse one UDI")
    p.add_argument("code")

    reg = sub.add_parser("regnum", help="registration number tools").add_subparsers(dest="action", required=True)
    p = reg.add_parser("parse", help="decode one registration number")
    p.add_argument("number")

    p = sub.add_parser("synth", help="write a synthetic dump and its answer key")
    p.add_argument("--recipe", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("verify", help="compare the engine with the reference evaluator")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--pipeline", required=True)
    p.add_argument("--answer-key", type=Path)
    p.add_argument("--lexicon", type=Path)
    p.add_argument("--show", type=int, default=20, help="discrepancies to print")
    p.add_argument("--via-scan", action="store_true",
                   help="also check the chunked (optionally parallel) scanner")
    _ingest_args(p)

    p = sub.add_parser("bench", help="synthesize a corpus and time a full scan")
    p.add_argument("--rows", required=True, type=_positive)
    p.add_argument("--pipeline", default="paper_default")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--corpus", type=Path, help="reuse or keep the corpus at this path")
    p.add_argument("--json", action="store_true", help="print the measurements as JSON")
    p.add_argument("--workers", type=_positive, default=None)
    return parser


# --------------------------------------------------------------------------- commands


def _cmd_scan(args: argparse.Namespace) -> int:
    pipeline = load_pipeline(args.pipeline, args.lexicon)
    schema = SchemaMap.load(args.schema) if args.schema else None
    run = full_run(
        args.dataset, pipeline, args.out, args.exclusions, args.sidecar, args.formats,
        args.workers or default_workers(), schema, args.encoding, args.delimiter, args.timestamp,
    )
    counts = run.outcome.result.counts
    print(" ".join(f"{s}={counts[s]}" for s in run.outcome.result.stage_names))
    print(f"final={len(run.annotation.exclusions.final)}")
    st = run.outcome.stats
    print(f"rows_read={st.rows_read} skipped={st.rows_skipped_malformed} elapsed={st.elapsed:.2f}s")
    print(f"wrote {len(run.written)} files to {args.out}")
    return EXIT_OK


def _cmd_udi(args: argparse.Namespace) -> int:
    try:
        code = parse_udi(args.code)
    except UdiError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    di, pi = code.di, code.pi
    print(f"agency: {di.agency}")
    print(f"di: {di.canonical}")
    print(f"part1: {di.part1}")
    print(f"part2: {di.part2}")
    if di.agency.value == "GS1":
        print("check_digit: valid")
    for name in ("lot", "serial", "production_date", "expiry_date"):
        value = getattr(pi, name)
        if value is not None:
            print(f"{name}: {value}")
    return EXIT_OK


def _cmd_regnum(args: argparse.Namespace) -> int:
    try:
        reg = parse_registration_number(args.number)
    except MalformedRegistration as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"origin: {reg.origin}")
    print(f"issuer: {reg.issuer}")
    print(f"year: {reg.year}")
    print(f"class: {reg.device_class.name}")
    print(f"category: {reg.category:02d}")
    print(f"serial: {reg.serial}")
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        recipe = Recipe.load(args.recipe)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {args.recipe}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    archive, key = synthesize_corpus(recipe, args.out)
    print(f"wrote {archive} ({recipe.rows} rows) and {key}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    schema = SchemaMap.load(args.schema) if args.schema else None
    report = verify_dataset(
        args.dataset, args.pipeline, args.answer_key, args.lexicon, schema,
        args.encoding, args.delimiter, args.workers or default_workers(), args.via_scan,
    )
    for d in report.discrepancies[: args.show]:
        print(f"  {d}")
    print(report.verdict())
    return EXIT_OK if report.ok else EXIT_FAILURE


class _PeakRss:
    """Samples resident memory of this process and its children."""

    def __init__(self, interval: float = 0.05) -> None:
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _sample(self) -> None:
        me = psutil.Process()
        total = 0
        for proc in (me, *me.children(recursive=True)):
            try:
                total += proc.memory_info().rss
            except psutil.Error:
                pass
        self.peak = max(self.peak, total)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            self._sample()

    def __enter__(self) -> _PeakRss:
        self._sample()
        self._thread.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self._stop.set()
        self._thread.join()
        self._sample()


def bench(rows: int, pipeline_ref: str = "paper_default", seed: int = 2024,
          corpus: Path | None = None, workers: int | None = None) -> dict:
    """Synthesize (or reuse) a corpus, then time scan + annotation + reports."""
    recipe = Recipe.from_doc(
        {"rows": rows, "samd": 0.001, "simd_kw": 0.004, "ai_kw": 0.0001, "seed": seed}
    )
    with tempfile.TemporaryDirectory(prefix="mdswscan-bench-") as tmp:
        archive = corpus or Path(tmp) / "bench.zip"
        t0 = time.perf_counter()
        if not archive.exists():
            synthesize_corpus(recipe, archive)
        synth_s = time.perf_counter() - t0
        pipeline = load_pipeline(pipeline_ref)
        workers = workers or default_workers()
        with _PeakRss() as mem:
            t1 = time.perf_counter()
            run = full_run(archive, pipeline, Path(tmp) / "report", workers=workers)
            scan_s = time.perf_counter() - t1
    stats = run.outcome.stats
    return {
        "rows": stats.rows_read,
        "workers": workers,
        "synth_seconds": round(synth_s, 2),
        "scan_seconds": round(scan_s, 2),
        "rows_per_second": round(stats.rows_read / scan_s) if scan_s else 0,
        "peak_rss_mb": round(mem.peak / 2**20, 1),
        "stage_counts": dict(run.outcome.result.counts),
        "final": len(run.annotation.exclusions.final),
    }


def _cmd_bench(args: argparse.Namespace) -> int:
    result = bench(args.rows, args.pipeline, args.seed, args.corpus, args.workers)
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"rows={result['rows']} workers={result['workers']}")
        print(f"synthesis: {result['synth_seconds']:.2f}s (not part of the scan time)")
        print(f"scan+annotate+report: {result['scan_seconds']:.2f}s "
              f"({result['rows_per_second']} rows/s), peak RSS {result['peak_rss_mb']:.1f} MB")
        print(" ".join(f"{k}={v}" for k, v in result["stage_counts"].items()) + f" final={result['final']}")
    return EXIT_OK


_COMMANDS = {
    "scan": _cmd_scan,
    "udi": _cmd_udi,
    "regnum": _cmd_regnum,
    "synth": _cmd_synth,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except tuple(cls for cls, _ in _EXIT_CODES) as exc:
        code = next(c for cls, c in _EXIT_CODES if isinstance(exc, cls))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
