"""Cross-check a scan against the reference evaluator and an answer key."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .ingest import EncodingPolicy, SchemaMap, open_dataset
from .oracle import NaiveOracle
from .pipeline import load_pipeline, pipeline_path
from .scan import scan_archive
from .synth import read_answer_key

__all__ = ["Discrepancy", "VerifyReport", "verify_dataset"]


@dataclass(frozen=True)
class Discrepancy:
    record_id: str
    source: str  # "oracle", "scan" or "answer_key"
    engine: frozenset[str]
    expected: frozenset[str]

    def __str__(self) -> str:
        return (
            f"{self.record_id}: engine={','.join(sorted(self.engine)) or '-'} "
            f"{self.source}={','.join(sorted(self.expected)) or '-'}"
        )


@dataclass
class VerifyReport:
    records: int
    discrepancies: list[Discrepancy] = field(default_factory=list)
    answer_key_rows: int | None = None
    elapsed: float = 0.0
    checked: list[str] = field(default_factory=lambda: ["oracle"])

    @property
    def ok(self) -> bool:
        return not self.discrepancies

    def verdict(self) -> str:
        checked = "+".join(self.checked)
        if self.ok:
            return f"EXACT MATCH ({checked}): {self.records} records, 0 discrepancies"
        return f"MISMATCH ({checked}): {self.records} records, {len(self.discrepancies)} discrepancies"


def _union(into: dict[str, frozenset[str]], rid: str, stages: frozenset[str]) -> None:
    into[rid] = into.get(rid, frozenset()) | stages


def _compare(report: VerifyReport, source: str, engine: dict[str, frozenset[str]],
             expected: dict[str, frozenset[str]]) -> None:
    for rid in sorted(expected.keys() | engine.keys()):
        got, want = engine.get(rid, frozenset()), expected.get(rid, frozenset())
        if got != want:
            report.discrepancies.append(Discrepancy(rid, source, got, want))


def verify_dataset(
    dataset: str | Path,
    pipeline_ref: str | Path,
    answer_key: str | Path | None = None,
    lexicon: str | Path | None = None,
    schema: SchemaMap | None = None,
    encoding: EncodingPolicy | str = EncodingPolicy.AUTO,
    delimiter: str = ",",
    workers: int = 1,
    via_scan: bool = False,
) -> VerifyReport:
    """Stage memberships per record id from the compiled evaluator, checked against
    the reference evaluator (one streaming pass) and optionally an answer key.

    ``via_scan`` also runs the chunked scanner with ``workers`` processes and
    checks that it agrees with the record-at-a-time evaluation.
    """
    t0 = time.perf_counter()
    pipeline = load_pipeline(pipeline_ref, lexicon)
    oracle = NaiveOracle.from_file(pipeline_path(pipeline_ref), lexicon)
    engine: dict[str, frozenset[str]] = {}
    expected: dict[str, frozenset[str]] = {}
    n = 0
    for record in open_dataset(dataset, schema, encoding, delimiter):
        n += 1
        mask = pipeline.evaluate_record(record)
        if mask:
            _union(engine, record.record_id, pipeline.names_of(mask))
        want = oracle.memberships(record)
        if want:
            _union(expected, record.record_id, want)

    report = VerifyReport(n)
    _compare(report, "oracle", engine, expected)
    if via_scan:
        scanned: dict[str, frozenset[str]] = {}
        for m in scan_archive(dataset, pipeline, schema, encoding, delimiter, workers).result.matches:
            _union(scanned, m.record_id, m.stages)
        _compare(report, "scan", scanned, engine)
        report.checked.append("scan")
    if answer_key is not None:
        key = read_answer_key(answer_key)
        report.answer_key_rows = len(key)
        report.checked.append("answer-key")
        _compare(report, "answer_key", engine, {k: v for k, v in key.items() if v})
    report.elapsed = time.perf_counter() - t0
    return report
