"""One pass over a dump: ingest, evaluate the pipeline, collect members.

The archive is cut into record-aligned chunks (see :mod:`mdswscan.ingest`).
Each chunk is parsed and evaluated on its own, either in this process or in a
worker pool, and the per-chunk outputs are merged in chunk order. Only rows
that land in some stage become :class:`DeviceRecord` values, so the common
case (a row outside every stage) costs a CSV parse plus the rule checks.

The merged result is sorted before it is returned, which makes the output
independent of the worker count.
"""

from __future__ import annotations

import os
import time
from collections import deque
from collections.abc import Iterator
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .ingest import (
    BLOCK_SIZE,
    Chunk,
    EncodingPolicy,
    IngestStats,
    SchemaMap,
    dataset_fingerprint,
    iter_chunk_rows,
    iter_chunks,
)
from .pipeline import KeywordLexicon, MatchResult, PipelineResult, RulePipeline, compile_pipeline

__all__ = ["ScanOutcome", "default_workers", "scan_archive"]


@dataclass
class ScanOutcome:
    result: PipelineResult
    stats: IngestStats
    fingerprint: str
    workers: int


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # not available on every platform
        return max(1, os.cpu_count() or 1)


def _process(chunk: Chunk, pipeline: RulePipeline) -> tuple[int, list[MatchResult], IngestStats]:
    stats = IngestStats()
    ctx = chunk.member
    get = ctx.getter(pipeline.fields)
    upto = max((ctx.columns[f] for f in pipeline.fields), default=-1) + 1
    evaluate = pipeline.evaluate
    found = []
    for line, row in iter_chunk_rows(chunk, stats, upto):
        mask = evaluate(get(row))
        if mask:
            found.append(pipeline.explain(ctx.record(row, line), mask))
    return chunk.seq, found, stats


_WORKER_PIPELINE: RulePipeline | None = None


def _init_worker(doc: dict[str, Any], lexicon_doc: dict[str, list[str]]) -> None:
    global _WORKER_PIPELINE
    _WORKER_PIPELINE = compile_pipeline(doc, KeywordLexicon(lexicon_doc))


def _process_in_worker(chunk: Chunk) -> tuple[int, list[MatchResult], IngestStats]:
    assert _WORKER_PIPELINE is not None
    return _process(chunk, _WORKER_PIPELINE)


def _parallel(chunks: Iterator[Chunk], pipeline: RulePipeline, workers: int):
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_init_worker,
        initargs=(pipeline.doc, pipeline.lexicon.to_doc()),
    ) as pool:
        pending: deque[Future] = deque()
        limit = 2 * workers
        for chunk in chunks:
            pending.append(pool.submit(_process_in_worker, chunk))
            while len(pending) >= limit:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def scan_archive(
    path: str | Path,
    pipeline: RulePipeline,
    schema: SchemaMap | None = None,
    encoding: EncodingPolicy | str = EncodingPolicy.AUTO,
    delimiter: str = ",",
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> ScanOutcome:
    t0 = time.perf_counter()
    schema = schema or SchemaMap.default()
    chunks = iter_chunks(path, schema, encoding, delimiter, frozenset(pipeline.fields), block_size)
    if workers > 1:
        outputs = _parallel(chunks, pipeline, workers)
    else:
        outputs = (_process(c, pipeline) for c in chunks)
    stats = IngestStats()
    matches: list[MatchResult] = []
    expected = 0
    for seq, found, chunk_stats in outputs:
        if seq != expected:
            raise RuntimeError(f"chunk {seq} arrived out of order (expected {expected})")
        expected += 1
        matches.extend(found)
        stats.merge(chunk_stats)
    stats.elapsed = time.perf_counter() - t0
    counts = dict.fromkeys(pipeline.stage_names, 0)
    for m in matches:
        for s in m.stages:
            counts[s] += 1
    result = PipelineResult(pipeline.stage_names, counts, matches, stats.rows_emitted).finalize()
    return ScanOutcome(result, stats, dataset_fingerprint(path), workers)
