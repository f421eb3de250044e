"""Report bundles and their on-disk forms.

A bundle holds only JSON-shaped values (dicts, lists, strings, ints), so the
structured form round-trips exactly. Data files never contain the run
timestamp or timings; those live in ``metadata.json`` alone.

Files written by :func:`emit`:

``json``
    ``report.json`` with keys ``tables``, ``map_data``, ``alluvial_data``,
    ``audit`` and ``devices``.
``csv``
    ``tables/<name>.csv`` per table, ``map_data.csv`` (region_code, region,
    count), ``alluvial_data.csv`` (source, middle, target, count),
    ``audit.csv`` (kind, key, detail) and ``devices.csv``.
``markdown``
    ``report.md``.

Every format also writes ``metadata.json``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .analytics import CrossTab, Distribution, crosstab, distribution, geo_rollup
from .annotate import AnnotatedDevice, AnnotationLexicons, AnnotationRun, Sidecar
from .pipeline import ExclusionList, RulePipeline
from .records import region_codes
from .scan import ScanOutcome

__all__ = ["Format", "ReportBundle", "alluvial_flows", "build_bundle", "emit", "load_bundle"]

SCHEMA_VERSION = 1


class Format(str, enum.Enum):
    JSON = "json"
    CSV = "csv"
    MARKDOWN = "markdown"


def _plain(obj: Any) -> Any:
    """Normalize to what JSON gives back (lists, str keys)."""
    return json.loads(json.dumps(obj, ensure_ascii=False, default=str))


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


@dataclass(frozen=True)
class ReportBundle:
    metadata: dict[str, Any]
    tables: dict[str, dict[str, Any]] = field(default_factory=dict)
    map_data: dict[str, Any] = field(default_factory=dict)
    alluvial_data: list[dict[str, Any]] = field(default_factory=list)
    audit: dict[str, Any] = field(default_factory=dict)
    devices: list[dict[str, Any]] = field(default_factory=list)

    def data(self) -> dict[str, Any]:
        return {
            "tables": self.tables,
            "map_data": self.map_data,
            "alluvial_data": self.alluvial_data,
            "audit": self.audit,
            "devices": self.devices,
        }

    def check(self) -> None:
        """Each table must account for exactly the population it was built on."""
        sizes = self.metadata.get("populations", {})
        for name, table in self.tables.items():
            pop = table.get("population")
            if pop is None:
                continue
            got = table["total"] if table["kind"] == "crosstab" else table["denominator"] + table["unlabeled"]
            if got != sizes.get(pop):
                raise ValueError(f"table {name!r} covers {got} devices, population {pop!r} has {sizes.get(pop)}")
        for hash_key in ("pipeline_digest", "lexicon_digests", "dataset_fingerprint"):
            if hash_key not in self.metadata:
                raise ValueError(f"metadata lacks {hash_key}")


# --------------------------------------------------------------------------- building


def _crosstab_doc(tab: CrossTab, population: str | None) -> dict[str, Any]:
    return {
        "kind": "crosstab",
        "population": population,
        "dims": list(tab.dims),
        "rows": [[*k, n] for k, n in tab.cells.items()],
        "total": tab.total,
    }


def _distribution_doc(dist: Distribution, population: str | None) -> dict[str, Any]:
    return {
        "kind": "distribution",
        "population": population,
        "dim": dist.dim,
        "rows": [[r.value, r.count, str(r.percentage)] for r in dist.rows],
        "denominator": dist.denominator,
        "unlabeled": dist.unlabeled,
        "groups": {g: list(m) for g, m in dist.groups.items()},
    }


def alluvial_flows(devices: Iterable[AnnotatedDevice]) -> list[dict[str, Any]]:
    """Software kind -> device class -> pathway, one entry per non-empty path."""
    counts = Counter((d.value("software_kind"), d.value("device_class"), d.value("pathway")) for d in devices)
    return [
        {"source": s, "middle": m, "target": t, "count": n}
        for (s, m, t), n in sorted(counts.items())
    ]


def _device_doc(d: AnnotatedDevice, stages: list[str], provenance: str) -> dict[str, Any]:
    r = d.record
    return {
        "record_id": r.record_id,
        "product_name": r.product_name,
        "generic_name": r.generic_name,
        "registration_number": r.registration_number_raw,
        "classification_code": r.classification_code_raw,
        "manufacturer": r.manufacturer,
        "stages": "|".join(stages),
        "software_kind": d.value("software_kind"),
        "ai_flag": d.ai_flag,
        "technique": d.value("technique"),
        "specialty": d.specialty,
        "function_category": d.value("function_category"),
        "subtype": d.value("subtype"),
        "pathway": d.value("pathway"),
        "origin": d.value("origin"),
        "region": d.value("region"),
        "device_class": d.value("device_class"),
        "year": d.value("year"),
        "provenance": provenance,
    }


def build_bundle(
    outcome: ScanOutcome,
    pipeline: RulePipeline,
    run: AnnotationRun,
    lexicons: AnnotationLexicons,
    exclusions: ExclusionList | None = None,
    sidecar: Sidecar | None = None,
    timestamp: str | None = None,
    version: str = "",
) -> ReportBundle:
    result = outcome.result
    software = run.devices
    ai = [d for d in software if d.ai_flag]
    domestic = [d for d in software if d.value("origin") == "Domestic"]
    groups = (pipeline.doc.get("report") or {}).get("specialty_groups") or {}
    populations = {"software": len(software), "ai": len(ai), "domestic_software": len(domestic)}

    distinct = result.distinct_counts()
    tables: dict[str, dict[str, Any]] = {
        "stage_counts": {
            "kind": "counts",
            "population": None,
            "rows": [[s, result.counts[s], distinct[s]] for s in result.stage_names]
            + [["final", len(run.exclusions.final), len({m.record_id for m in run.exclusions.final})]],
            "columns": ["stage", "rows", "distinct_record_ids"],
        },
        "origin_kind_ai": _crosstab_doc(crosstab(software, ["origin", "software_kind", "ai_flag"]), "software"),
        "software_class": _distribution_doc(distribution(software, "device_class"), "software"),
        "domestic_class": _distribution_doc(distribution(domestic, "device_class"), "domestic_software"),
        "ai_origin_class": _crosstab_doc(crosstab(ai, ["origin", "device_class"]), "ai"),
        "ai_kind": _distribution_doc(distribution(ai, "software_kind"), "ai"),
        "technique": _distribution_doc(distribution(ai, "technique"), "ai"),
        "specialty": _distribution_doc(distribution(ai, "specialty"), "ai"),
        "specialty_grouped": _distribution_doc(distribution(ai, "specialty", groups), "ai"),
        "function_category": _distribution_doc(distribution(ai, "function_category"), "ai"),
        "function_subtype": _crosstab_doc(crosstab(ai, ["function_category", "subtype"]), "ai"),
        "pathway": _distribution_doc(distribution(ai, "pathway"), "ai"),
        "ai_year": _crosstab_doc(crosstab(ai, ["year"]), "ai"),
    }

    geo = geo_rollup(software)
    codes = region_codes()
    map_data = {
        "population": "software",
        "regions": [[codes.get(name, name), name, n] for name, n in geo.regions.items()],
        "national_class3_bucket": geo.national_class3_bucket,
        "undetermined": geo.undetermined,
        "excluded_imported": geo.excluded_imported,
    }

    ex = run.exclusions
    audit = {
        "exclusions_removed": [
            {"key": e.key, "reason": e.reason, "record_ids": list(ids)} for e, ids in ex.removed
        ],
        "exclusions_stale": [{"key": e.key, "reason": e.reason} for e in ex.stale],
        "overrides": [
            {"record_id": o.record_id, "field": o.field, "old": o.old, "new": o.new,
             "key": o.key, "note": o.note, "source": o.source}
            for o in run.overrides
        ],
        "sidecar_stale": [{"key": k.args[0], "field": k.args[1], "value": k.args[2]} for k in run.stale_sidecar],
        "technique_fallbacks": list(run.technique_fallbacks),
        "origin_from_region_text": list(run.origin_fallbacks),
        "origin_undetermined": list(run.origin_undetermined),
        "inconsistencies": [{"record_id": i.record_id, "issue": i.issue} for i in run.inconsistencies],
        "ingest": outcome.stats.to_doc(),
    }

    by_id = {id(m.record): m for m in result.matches}
    devices = []
    for d in software:
        m = by_id.get(id(d.record))
        stages = sorted(m.stages) if m else []
        prov = "; ".join(f"{s}: " + ", ".join(map(str, f)) for s, f in m.provenance) if m else ""
        devices.append(_device_doc(d, stages, prov))

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": version,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "pipeline": {"name": pipeline.doc.get("name", ""), "version": pipeline.doc.get("version", "")},
        "pipeline_digest": pipeline.digest(),
        "lexicon_digests": lexicons.digests(),
        "exclusions_digest": exclusions.digest() if exclusions else None,
        "sidecar_digest": sidecar.digest() if sidecar else None,
        "dataset_fingerprint": outcome.fingerprint,
        "populations": populations,
        "stage_counts": dict(result.counts),
        "final_count": len(ex.final),
        "workers": outcome.workers,
        "elapsed_seconds": round(outcome.stats.elapsed, 3),
    }
    bundle = ReportBundle(
        _plain(metadata), _plain(tables), _plain(map_data), _plain(alluvial_flows(ai)), _plain(audit), _plain(devices)
    )
    bundle.check()
    return bundle


# --------------------------------------------------------------------------- emitting


def _csv_text(header: list[str], rows: Iterable[Iterable[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["true" if v is True else "false" if v is False else v for v in row])
    return buf.getvalue()


def _table_header(table: Mapping[str, Any]) -> list[str]:
    if table["kind"] == "crosstab":
        return [*table["dims"], "count"]
    if table["kind"] == "distribution":
        return [table["dim"], "count", "percentage"]
    return list(table["columns"])


DEVICE_COLUMNS = [
    "record_id", "product_name", "generic_name", "registration_number", "classification_code",
    "manufacturer", "stages", "software_kind", "ai_flag", "technique", "specialty",
    "function_category", "subtype", "pathway", "origin", "region", "device_class", "year", "provenance",
]


def _audit_rows(audit: Mapping[str, Any]) -> list[list[str]]:
    rows: list[list[str]] = []
    for e in audit.get("exclusions_removed", []):
        rows.append(["exclusion_removed", e["key"], f"{e['reason']} [{' '.join(e['record_ids'])}]"])
    for e in audit.get("exclusions_stale", []):
        rows.append(["exclusion_stale", e["key"], e["reason"]])
    for o in audit.get("overrides", []):
        rows.append(["override", o["record_id"], f"{o['field']}: {o['old']} -> {o['new']} ({o['source']} {o['key']})"])
    for s in audit.get("sidecar_stale", []):
        rows.append(["sidecar_stale", s["key"], f"{s['field']}={s['value']}"])
    for kind in ("technique_fallbacks", "origin_from_region_text", "origin_undetermined"):
        rows.extend([kind, rid, ""] for rid in audit.get(kind, []))
    for i in audit.get("inconsistencies", []):
        rows.append(["inconsistency", i["record_id"], i["issue"]])
    for reason, n in (audit.get("ingest") or {}).get("per_error_counts", {}).items():
        rows.append(["ingest_skipped", reason, str(n)])
    return rows


def _markdown(bundle: ReportBundle) -> str:
    meta = bundle.metadata
    out = [f"# Registry scan report: {meta.get('pipeline', {}).get('name', '')}", ""]
    out.append(f"Dataset fingerprint: `{meta.get('dataset_fingerprint', '')}`  ")
    out.append(f"Pipeline digest: `{meta.get('pipeline_digest', '')}`")
    out.append("")
    for name, table in bundle.tables.items():
        out.append(f"## {name}")
        out.append("")
        if table["kind"] == "distribution":
            out.append(f"Denominator: {table['denominator']} (unlabeled: {table['unlabeled']})")
            out.append("")
        header = _table_header(table)
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "---|" * len(header))
        for row in table["rows"]:
            cells = [f"{v}%" if table["kind"] == "distribution" and i == 2 else str(v) for i, v in enumerate(row)]
            out.append("| " + " | ".join(cells) + " |")
        if table["kind"] == "crosstab":
            out.append("| **total** |" + " |" * (len(header) - 2) + f" {table['total']} |")
        out.append("")
    out.append("## map_data")
    out.append("")
    out.append("| region_code | region | count |")
    out.append("|---|---|---|")
    for code, name, n in bundle.map_data.get("regions", []):
        out.append(f"| {code} | {name} | {n} |")
    out.append("")
    out.append(f"Undetermined origin: {bundle.map_data.get('undetermined', 0)}; "
               f"imported (not mapped): {bundle.map_data.get('excluded_imported', 0)}")
    out.append("")
    out.append("## alluvial_data")
    out.append("")
    out.append("| software kind | class | pathway | count |")
    out.append("|---|---|---|---|")
    for f in bundle.alluvial_data:
        out.append(f"| {f['source']} | {f['middle']} | {f['target']} | {f['count']} |")
    out.append("")
    out.append("## audit")
    out.append("")
    for kind, key, detail in _audit_rows(bundle.audit):
        out.append(f"- {kind}: {key}" + (f" {detail}" if detail else ""))
    out.append("")
    return "\n".join(out)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return path


def emit(bundle: ReportBundle, fmt: Format | str, out: str | Path) -> list[Path]:
    fmt = Format(fmt)
    out = Path(out)
    written = [_write(out / "metadata.json", _dumps(bundle.metadata))]
    if fmt is Format.JSON:
        written.append(_write(out / "report.json", _dumps(bundle.data())))
    elif fmt is Format.CSV:
        for name, table in bundle.tables.items():
            written.append(_write(out / "tables" / f"{name}.csv", _csv_text(_table_header(table), table["rows"])))
        written.append(_write(out / "map_data.csv", _csv_text(["region_code", "region", "count"],
                                                               bundle.map_data.get("regions", []))))
        written.append(_write(out / "alluvial_data.csv", _csv_text(
            ["source", "middle", "target", "count"],
            ([f["source"], f["middle"], f["target"], f["count"]] for f in bundle.alluvial_data))))
        written.append(_write(out / "audit.csv", _csv_text(["kind", "key", "detail"], _audit_rows(bundle.audit))))
        written.append(_write(out / "devices.csv", _csv_text(
            DEVICE_COLUMNS, ([d[c] for c in DEVICE_COLUMNS] for d in bundle.devices))))
    else:
        written.append(_write(out / "report.md", _markdown(bundle)))
    return written


def load_bundle(directory: str | Path) -> ReportBundle:
    directory = Path(directory)
    metadata = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
    data = json.loads((directory / "report.json").read_text(encoding="utf-8"))
    return ReportBundle(metadata, **data)
