"""Analytical labels for pipeline survivors.

Every label comes from an editable lexicon (surface form, label, priority) or
from a sidecar file of manual annotations, never from code. Matching uses the
same caseless, width-insensitive substring semantics as the filter pipeline.
"""

from __future__ import annotations

import csv
import enum
import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from ._assets import asset_path
from .automaton import KeywordAutomaton
from .errors import LexiconError, MalformedCode, OriginUndetermined, SidecarError, StaleSidecarKey
from .pipeline import ExclusionList, ExclusionOutcome, MatchResult, PipelineResult, RulePipeline, apply_exclusions
from .records import (
    DeviceClass,
    DeviceRecord,
    Origin,
    RegistrationNumber,
    is_samd_code,
    origin_of,
    parse_classification_code,
)
from .text import fold

__all__ = [
    "AnnotatedDevice",
    "AnnotationLexicons",
    "AnnotationRun",
    "FunctionCategory",
    "Lexicon",
    "LexiconEntry",
    "Override",
    "Pathway",
    "Sidecar",
    "SidecarEntry",
    "SoftwareKind",
    "Subtype",
    "Technique",
    "UNKNOWN_SPECIALTY",
    "annotate",
    "annotate_device",
    "apply_sidecar",
    "classify_function",
    "classify_technique",
    "extract_specialty",
]

UNKNOWN_SPECIALTY = "Unknown"


class _Label(str, enum.Enum):
    def __str__(self) -> str:
        return self.value


class SoftwareKind(_Label):
    SAMD = "SaMD"
    SIMD = "SiMD"


class Technique(_Label):
    DEEP_LEARNING = "DeepLearning"
    TRADITIONAL = "TraditionalAI"
    NOT_AI = "NotAI"


class FunctionCategory(_Label):
    DECISION_SUPPORT = "DecisionSupport"
    IMAGE_DATA_PROCESSING = "ImageDataProcessing"
    ANALYSIS_DATA_MINING = "AnalysisDataMining"
    MEDICAL_ASSISTANT = "MedicalAssistant"
    UNCATEGORIZED = "Uncategorized"


class Subtype(_Label):
    AUX_DETECTION = "AuxDetection"
    AUX_DIAGNOSIS = "AuxDiagnosis"
    CLINICAL_TRIAGE = "ClinicalTriage"
    AUX_EVALUATION = "AuxEvaluation"
    SURGICAL_PLANNING = "SurgicalPlanning"


class Pathway(_Label):
    STANDARD = "Standard"
    INNOVATION = "Innovation"
    PRIORITY = "Priority"
    EMERGENCY = "Emergency"
    UNKNOWN = "Unknown"


# --------------------------------------------------------------------------- lexicons


@dataclass(frozen=True)
class LexiconEntry:
    surface: str
    label: str
    priority: int = 0

    @property
    def key(self) -> str:
        return fold(self.surface)


class Lexicon:
    """Surface form -> label, with a priority per entry."""

    def __init__(self, entries: Iterable[LexiconEntry | tuple[str, str, int]] = ()) -> None:
        items = [e if isinstance(e, LexiconEntry) else LexiconEntry(*e) for e in entries]
        seen: dict[tuple[str, int], str] = {}
        by_key: dict[str, list[LexiconEntry]] = {}
        for e in items:
            if not e.key:
                raise LexiconError(f"empty surface form for label {e.label!r}")
            prior = seen.setdefault((e.key, e.priority), e.label)
            if prior != e.label:
                raise LexiconError(
                    f"surface form {e.surface!r} maps to both {prior!r} and {e.label!r} at priority {e.priority}"
                )
            by_key.setdefault(e.key, []).append(e)
        self.entries: tuple[LexiconEntry, ...] = tuple(items)
        self._by_key = by_key
        self._automaton = KeywordAutomaton(by_key)

    @classmethod
    def load(cls, path: str | Path) -> Lexicon:
        entries = []
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        for n, row in enumerate(csv.DictReader(lines), start=2):
            try:
                entries.append(LexiconEntry(row["surface_form"], row["label"].strip(), int(row.get("priority") or 0)))
            except (KeyError, TypeError, ValueError, AttributeError):
                raise LexiconError(f"{path}:{n}: need surface_form,label,priority") from None
        return cls(entries)

    def matches(self, text: str) -> list[LexiconEntry]:
        """Every entry whose surface form occurs in ``text`` (deduplicated, stable order)."""
        hits = self._automaton.hits(fold(text))
        return [e for key in sorted(hits) for e in self._by_key[key]]

    def labels(self) -> frozenset[str]:
        return frozenset(e.label for e in self.entries)

    def with_entry(self, entry: LexiconEntry) -> Lexicon:
        return Lexicon((*self.entries, entry))

    def digest(self) -> str:
        rows = sorted((e.key, e.label, e.priority) for e in self.entries)
        return hashlib.sha256(repr(rows).encode()).hexdigest()


def classify_technique(description: str, lexicon: Lexicon) -> Technique:
    labels = {e.label for e in lexicon.matches(description)}
    if Technique.DEEP_LEARNING.value in labels:
        return Technique.DEEP_LEARNING
    if Technique.TRADITIONAL.value in labels:
        return Technique.TRADITIONAL
    return Technique.NOT_AI


def extract_specialty(generic_name: str, lexicon: Lexicon) -> str:
    """Longest matching surface form wins, then higher priority, then label order."""
    hits = lexicon.matches(generic_name)
    if not hits:
        return UNKNOWN_SPECIALTY
    best = min(hits, key=lambda e: (-len(e.key), -e.priority, e.label))
    return best.label


def _parse_function_label(label: str) -> tuple[FunctionCategory, Subtype | None]:
    head, _, sub = label.partition(":")
    try:
        category = FunctionCategory(head)
        subtype = Subtype(sub) if sub else None
    except ValueError:
        raise LexiconError(f"unknown function label {label!r}") from None
    if (category is FunctionCategory.DECISION_SUPPORT) != (subtype is not None):
        raise LexiconError(f"{label!r}: a subtype goes with DecisionSupport and only with it")
    return category, subtype


def classify_function(
    name: str, description: str, lexicon: Lexicon
) -> tuple[FunctionCategory, Subtype | None]:
    """Naming convention first: the name decides when it matches anything,
    otherwise the description. Within one text the highest priority wins,
    then the longest form, then label order."""
    for text in (name, description):
        hits = lexicon.matches(text)
        if hits:
            best = min(hits, key=lambda e: (-e.priority, -len(e.key), e.label))
            return _parse_function_label(best.label)
    return FunctionCategory.UNCATEGORIZED, None


@dataclass(frozen=True)
class AnnotationLexicons:
    technique: Lexicon
    specialty: Lexicon
    function: Lexicon

    @classmethod
    def load(cls, directory: str | Path, names: dict[str, str] | None = None) -> AnnotationLexicons:
        names = {"technique": "technique.csv", "specialty": "specialty.csv", "function": "function.csv", **(names or {})}
        directory = Path(directory)
        lex = {k: Lexicon.load(directory / v) for k, v in names.items() if k in ("technique", "specialty", "function")}
        for entry in lex["function"].entries:
            _parse_function_label(entry.label)
        return cls(**lex)

    @classmethod
    def for_pipeline(cls, pipeline: RulePipeline) -> AnnotationLexicons:
        names = dict(pipeline.doc.get("annotate") or {})
        directory = pipeline.base_dir or asset_path("paper_default")
        if not all((Path(directory) / n).exists() for n in names.values()) or not names:
            directory = asset_path("paper_default")
        return cls.load(directory, names)

    def digests(self) -> dict[str, str]:
        return {
            "technique": self.technique.digest(),
            "specialty": self.specialty.digest(),
            "function": self.function.digest(),
        }


# --------------------------------------------------------------------------- devices


@dataclass(frozen=True)
class AnnotatedDevice:
    record: DeviceRecord
    software_kind: SoftwareKind
    ai_flag: bool
    technique: Technique
    specialty: str
    function_category: FunctionCategory
    subtype: Subtype | None
    pathway: Pathway = Pathway.UNKNOWN
    origin: Origin | None = None
    region: str | None = None
    device_class: DeviceClass | None = None
    registration: RegistrationNumber | None = None
    origin_fallback: bool = False

    def __post_init__(self) -> None:
        if self.ai_flag and self.technique is Technique.NOT_AI:
            raise ValueError(f"{self.record_id}: AI device cannot have technique NotAI")
        if (self.subtype is not None) != (self.function_category is FunctionCategory.DECISION_SUPPORT):
            raise ValueError(f"{self.record_id}: subtype must be set exactly for DecisionSupport")

    @property
    def record_id(self) -> str:
        return self.record.record_id

    def value(self, dim: str) -> str:
        """String value of a reporting dimension."""
        if dim == "origin":
            return self.origin.value if self.origin else "Undetermined"
        if dim == "ai_flag":
            return "AI" if self.ai_flag else "Non-AI"
        if dim == "device_class":
            return self.device_class.name if self.device_class else "Unknown"
        if dim == "subtype":
            return self.subtype.value if self.subtype else "None"
        if dim == "region":
            return self.region or "Undetermined"
        if dim == "year":
            return str(self.registration.year) if self.registration else "Unknown"
        return str(getattr(self, dim))


DIMENSIONS = (
    "origin", "software_kind", "ai_flag", "device_class", "technique", "specialty",
    "function_category", "subtype", "pathway", "region", "year",
)
# values that mean "no label" per dimension; excluded from percentage denominators
UNLABELED = {
    "origin": "Undetermined",
    "device_class": "Unknown",
    "technique": Technique.NOT_AI.value,
    "specialty": UNKNOWN_SPECIALTY,
    "function_category": FunctionCategory.UNCATEGORIZED.value,
    "subtype": "None",
    "pathway": Pathway.UNKNOWN.value,
    "region": "Undetermined",
    "year": "Unknown",
}


def annotate_device(
    record: DeviceRecord,
    software_kind: SoftwareKind,
    ai_flag: bool,
    lexicons: AnnotationLexicons,
) -> tuple[AnnotatedDevice, bool]:
    """Label one device. The flag reports a technique fallback (AI device, no technique term)."""
    fallback = False
    technique = Technique.NOT_AI
    if ai_flag:
        technique = classify_technique(record.description, lexicons.technique)
        if technique is Technique.NOT_AI:
            names = f"{record.product_name}\n{record.generic_name}"
            technique = classify_technique(names, lexicons.technique)
        if technique is Technique.NOT_AI:
            technique, fallback = Technique.TRADITIONAL, True
    specialty = extract_specialty(record.generic_name, lexicons.specialty)
    category, subtype = classify_function(
        f"{record.generic_name}\n{record.product_name}", record.description, lexicons.function
    )
    try:
        resolved = origin_of(record)
        origin, region, reg, via_region = resolved.origin, resolved.region, resolved.registration, resolved.fallback
    except OriginUndetermined:
        origin = region = reg = None
        via_region = False
    device = AnnotatedDevice(
        record=record,
        software_kind=software_kind,
        ai_flag=ai_flag,
        technique=technique,
        specialty=specialty,
        function_category=category,
        subtype=subtype,
        origin=origin,
        region=region,
        device_class=reg.device_class if reg else None,
        registration=reg,
        origin_fallback=via_region,
    )
    return device, fallback


# --------------------------------------------------------------------------- sidecar

SIDECAR_FIELDS = ("pathway", "specialty", "technique", "function_category")


@dataclass(frozen=True)
class SidecarEntry:
    key: str
    field: str
    value: str
    note: str = ""


@dataclass(frozen=True)
class Sidecar:
    entries: tuple[SidecarEntry, ...] = ()

    @classmethod
    def load(cls, path: str | Path) -> Sidecar:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        entries = []
        for n, row in enumerate(csv.DictReader(lines), start=2):
            key, fld, value = ((row.get(k) or "").strip() for k in ("key", "field", "value"))
            if not key or not fld:
                raise SidecarError(f"{path}:{n}: key and field are required")
            if fld not in SIDECAR_FIELDS:
                raise SidecarError(f"{path}:{n}: field {fld!r} not one of {', '.join(SIDECAR_FIELDS)}")
            entries.append(SidecarEntry(key, fld, value, (row.get("note") or "").strip()))
        return cls(tuple(entries))

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted((e.key, e.field, e.value) for e in self.entries)).encode()).hexdigest()


@dataclass(frozen=True)
class Override:
    record_id: str
    field: str
    old: str
    new: str
    key: str
    note: str = ""
    source: str = "sidecar"


def _resolve(entry: SidecarEntry, devices: Sequence[AnnotatedDevice]) -> list[int]:
    k = fold(entry.key)
    for attr in ("registration_number_raw", "record_id", "product_name"):
        hit = [i for i, d in enumerate(devices) if fold(getattr(d.record, attr)) == k]
        if hit:
            return hit
    return []


def _override_value(fld: str, value: str, device: AnnotatedDevice) -> dict[str, Any]:
    try:
        if fld == "pathway":
            return {"pathway": Pathway(value)}
        if fld == "technique":
            return {"technique": Technique(value)}
        if fld == "function_category":
            category, subtype = _parse_function_label(value)
            return {"function_category": category, "subtype": subtype}
    except (ValueError, LexiconError):
        raise SidecarError(f"invalid {fld} value {value!r}") from None
    if not value:
        raise SidecarError("specialty override needs a value")
    return {"specialty": value}


def _display(device: AnnotatedDevice, fld: str) -> str:
    if fld == "function_category" and device.subtype is not None:
        return f"{device.function_category}:{device.subtype}"
    return str(getattr(device, fld))


def apply_sidecar(
    devices: Sequence[AnnotatedDevice], sidecar: Sidecar
) -> tuple[list[AnnotatedDevice], list[Override], list[StaleSidecarKey]]:
    """Apply manual annotations in file order; later entries win over earlier ones."""
    out = list(devices)
    audit: list[Override] = []
    stale: list[StaleSidecarKey] = []
    for entry in sidecar.entries:
        targets = _resolve(entry, out)
        if not targets:
            stale.append(StaleSidecarKey(entry.key, entry.field, entry.value))
            continue
        for i in targets:
            before = out[i]
            changes = _override_value(entry.field, entry.value, before)
            try:
                after = replace(before, **changes)
            except ValueError as exc:
                raise SidecarError(f"sidecar entry {entry.key!r}: {exc}") from None
            old, new = _display(before, entry.field), _display(after, entry.field)
            out[i] = after
            audit.append(Override(before.record_id, entry.field, old, new, entry.key, entry.note))
    return out, audit, stale


# --------------------------------------------------------------------------- whole run


@dataclass(frozen=True)
class Inconsistency:
    record_id: str
    issue: str


@dataclass
class AnnotationRun:
    devices: list[AnnotatedDevice]
    exclusions: ExclusionOutcome
    overrides: list[Override] = field(default_factory=list)
    stale_sidecar: list[StaleSidecarKey] = field(default_factory=list)
    technique_fallbacks: list[str] = field(default_factory=list)
    origin_fallbacks: list[str] = field(default_factory=list)
    origin_undetermined: list[str] = field(default_factory=list)
    inconsistencies: list[Inconsistency] = field(default_factory=list)


def _consistency(device: AnnotatedDevice) -> str | None:
    reg = device.registration
    if reg is None:
        return None
    try:
        samd_code = is_samd_code(parse_classification_code(device.record.classification_code_raw))
    except MalformedCode:
        return None
    if (reg.category == 21) != samd_code:
        return (
            f"registration category {reg.category:02d} vs classification code "
            f"{device.record.classification_code_raw!r}"
        )
    return None


def annotate(
    result: PipelineResult,
    pipeline: RulePipeline,
    lexicons: AnnotationLexicons | None = None,
    exclusions: ExclusionList | None = None,
    sidecar: Sidecar | None = None,
) -> AnnotationRun:
    """Annotate every member of the software stage; AI flag = survived exclusions."""
    lexicons = lexicons or AnnotationLexicons.for_pipeline(pipeline)
    software = pipeline.role("software", "mdsw")
    standalone = pipeline.role("standalone", "samd")
    candidates = pipeline.role("candidates", "aimd_candidates")
    members: list[MatchResult] = result.members(software) if software else list(result.matches)
    if (pipeline.doc.get("options") or {}).get("dedup_by_di"):
        seen: set[str] = set()
        members = [m for m in members if not (m.record_id in seen or seen.add(m.record_id))]
    cand = result.members(candidates) if candidates else []
    outcome = apply_exclusions(cand, exclusions or ExclusionList())
    final_ids = {id(m) for m in outcome.final}
    run = AnnotationRun([], outcome)
    devices = []
    for m in members:
        kind = SoftwareKind.SAMD if standalone and standalone in m.stages else SoftwareKind.SIMD
        device, fallback = annotate_device(m.record, kind, id(m) in final_ids, lexicons)
        if fallback:
            run.technique_fallbacks.append(device.record_id)
        if device.origin_fallback:
            run.origin_fallbacks.append(device.record_id)
        if device.origin is None:
            run.origin_undetermined.append(device.record_id)
        issue = _consistency(device)
        if issue:
            run.inconsistencies.append(Inconsistency(device.record_id, issue))
        devices.append(device)
    if sidecar is not None:
        devices, run.overrides, run.stale_sidecar = apply_sidecar(devices, sidecar)
    run.devices = devices
    return run
