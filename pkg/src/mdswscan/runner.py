"""End-to-end run: scan, exclusions, annotation, report bundle."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .annotate import AnnotationLexicons, AnnotationRun, Sidecar, annotate
from .ingest import EncodingPolicy, SchemaMap
from .pipeline import ExclusionList, RulePipeline
from .report import Format, ReportBundle, build_bundle, emit
from .scan import ScanOutcome, scan_archive

__all__ = ["FullRun", "full_run", "pipeline_asset"]


@dataclass
class FullRun:
    outcome: ScanOutcome
    annotation: AnnotationRun
    bundle: ReportBundle
    written: list[Path]


def pipeline_asset(pipeline: RulePipeline, key: str) -> Path | None:
    """Path of an auxiliary file named in the pipeline document (``exclusions``, ``sidecar``)."""
    name = pipeline.doc.get(key)
    if not name or pipeline.base_dir is None:
        return None
    return pipeline.base_dir / name


def full_run(
    dataset: str | Path,
    pipeline: RulePipeline,
    out: str | Path | None,
    exclusions: str | Path | None = None,
    sidecar: str | Path | None = None,
    formats: tuple[Format | str, ...] = (Format.JSON, Format.CSV, Format.MARKDOWN),
    workers: int = 1,
    schema: SchemaMap | None = None,
    encoding: EncodingPolicy | str = EncodingPolicy.AUTO,
    delimiter: str = ",",
    timestamp: str | None = None,
) -> FullRun:
    """Files given as arguments win over those named in the pipeline document."""
    exclusions = exclusions or pipeline_asset(pipeline, "exclusions")
    sidecar = sidecar or pipeline_asset(pipeline, "sidecar")
    ex = ExclusionList.load(exclusions) if exclusions else ExclusionList()
    sc = Sidecar.load(sidecar) if sidecar else None
    lexicons = AnnotationLexicons.for_pipeline(pipeline)
    outcome = scan_archive(dataset, pipeline, schema, encoding, delimiter, workers)
    run = annotate(outcome.result, pipeline, lexicons, ex, sc)
    bundle = build_bundle(outcome, pipeline, run, lexicons, ex, sc, timestamp, __version__)
    written: list[Path] = []
    if out is not None:
        for fmt in formats:
            written.extend(emit(bundle, fmt, out))
    return FullRun(outcome, run, bundle, sorted(set(written)))
