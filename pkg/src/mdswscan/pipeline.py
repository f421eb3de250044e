"""Declarative multi-stage rule pipeline with per-match provenance.

A pipeline document is JSON::

    {"name": "...", "lexicon": "keywords.csv",
     "options": {"dedup_by_di": false},
     "stages": [
        {"name": "samd", "source": "ALL", "include": {"code_prefix": "21"}},
        {"name": "simd", "source": "ALL",
         "include": {"keyword_any": {"fields": ["description"], "terms": ["software"]}},
         "exclude": {"in_stage": "samd"}},
        ...]}

Rule nodes: ``keyword_any``, ``code_prefix``, ``reg_category_is``,
``in_stage``, ``not``, ``and``, ``or``. A record belongs to a stage when it
belongs to the stage's source (``ALL`` = every record), the include rule
holds, and the exclude rule (if any) does not.

Keyword matching is substring matching on :func:`mdswscan.text.fold`-ed text,
so it ignores case, character width and compatibility forms. Each term expands
to its surface forms through the keyword lexicon.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from ._assets import asset_path
from .automaton import KeywordAutomaton
from .errors import MalformedCode, MalformedRegistration, SpecError
from .records import RECORD_FIELDS, DeviceRecord, parse_classification_code, parse_registration_number
from .text import fold

__all__ = [
    "ALL",
    "And",
    "CodePrefix",
    "ExclusionEntry",
    "ExclusionList",
    "ExclusionOutcome",
    "Fired",
    "InStage",
    "KeywordAny",
    "KeywordLexicon",
    "MatchResult",
    "Not",
    "pipeline_path",
    "Or",
    "PipelineResult",
    "RegCategoryIs",
    "RulePipeline",
    "Stage",
    "apply_exclusions",
    "builtin_paper_pipeline",
    "compile_pipeline",
    "load_pipeline",
    "run_pipeline",
]

ALL = "ALL"
MATCHABLE_FIELDS = RECORD_FIELDS


# --------------------------------------------------------------------------- rules


@dataclass(frozen=True)
class KeywordAny:
    fields: tuple[str, ...]
    terms: tuple[str, ...]


@dataclass(frozen=True)
class CodePrefix:
    segments: tuple[int, ...]
    field: str = "classification_code_raw"


@dataclass(frozen=True)
class RegCategoryIs:
    category: int
    field: str = "registration_number_raw"


@dataclass(frozen=True)
class InStage:
    stage: str


@dataclass(frozen=True)
class Not:
    rule: Rule


@dataclass(frozen=True)
class And:
    rules: tuple[Rule, ...]


@dataclass(frozen=True)
class Or:
    rules: tuple[Rule, ...]


Rule = Union[KeywordAny, CodePrefix, RegCategoryIs, InStage, Not, And, Or]


@dataclass(frozen=True)
class Stage:
    name: str
    include: Rule
    exclude: Rule | None = None
    source: str = ALL


def _parse_prefix(value: Any) -> tuple[int, ...]:
    if isinstance(value, int):
        value = [value]
    if isinstance(value, str):
        try:
            return parse_classification_code(value).segments
        except MalformedCode as exc:
            raise SpecError(f"code_prefix: {exc}") from None
    if not isinstance(value, list) or not 1 <= len(value) <= 3:
        raise SpecError(f"code_prefix needs 1-3 segments, got {value!r}")
    if any(not isinstance(v, int) or not 0 <= v <= 99 for v in value):
        raise SpecError(f"code_prefix segments must be integers 0..99, got {value!r}")
    return tuple(value)


def parse_rule(doc: Any) -> Rule:
    if not isinstance(doc, dict) or len(doc) != 1:
        raise SpecError(f"a rule is a one-key object, got {doc!r}")
    (kind, arg), = doc.items()
    if kind == "keyword_any":
        if not isinstance(arg, dict):
            raise SpecError("keyword_any takes {fields, terms}")
        fields = tuple(arg.get("fields") or ())
        terms = tuple(arg.get("terms") or ())
        if not fields:
            raise SpecError("keyword_any needs at least one field")
        if not terms:
            raise SpecError("keyword_any needs at least one term")
        for name in fields:
            if name not in MATCHABLE_FIELDS:
                raise SpecError(f"unknown field {name!r}; expected one of {', '.join(MATCHABLE_FIELDS)}")
        if any(not isinstance(t, str) or not fold(t).strip() for t in terms):
            raise SpecError(f"keyword_any terms must be non-empty strings, got {terms!r}")
        return KeywordAny(fields, terms)
    if kind == "code_prefix":
        return CodePrefix(_parse_prefix(arg))
    if kind == "reg_category_is":
        if not isinstance(arg, int) or not 0 <= arg <= 99:
            raise SpecError(f"reg_category_is needs an integer 0..99, got {arg!r}")
        return RegCategoryIs(arg)
    if kind == "in_stage":
        if not isinstance(arg, str) or not arg:
            raise SpecError(f"in_stage needs a stage name, got {arg!r}")
        return InStage(arg)
    if kind == "not":
        return Not(parse_rule(arg))
    if kind in ("and", "or"):
        if not isinstance(arg, list) or not arg:
            raise SpecError(f"{kind} needs a non-empty list of rules")
        rules = tuple(parse_rule(r) for r in arg)
        return And(rules) if kind == "and" else Or(rules)
    raise SpecError(f"unknown rule kind {kind!r}")


def rule_to_doc(rule: Rule) -> dict[str, Any]:
    if isinstance(rule, KeywordAny):
        return {"keyword_any": {"fields": list(rule.fields), "terms": list(rule.terms)}}
    if isinstance(rule, CodePrefix):
        return {"code_prefix": "-".join(f"{s:02d}" for s in rule.segments)}
    if isinstance(rule, RegCategoryIs):
        return {"reg_category_is": rule.category}
    if isinstance(rule, InStage):
        return {"in_stage": rule.stage}
    if isinstance(rule, Not):
        return {"not": rule_to_doc(rule.rule)}
    kind = "and" if isinstance(rule, And) else "or"
    return {kind: [rule_to_doc(r) for r in rule.rules]}


def _stage_refs(rule: Rule | None) -> set[str]:
    if rule is None:
        return set()
    if isinstance(rule, InStage):
        return {rule.stage}
    if isinstance(rule, Not):
        return _stage_refs(rule.rule)
    if isinstance(rule, (And, Or)):
        return set().union(*(_stage_refs(r) for r in rule.rules))
    return set()


def _rule_fields(rule: Rule | None) -> set[str]:
    if rule is None:
        return set()
    if isinstance(rule, KeywordAny):
        return set(rule.fields)
    if isinstance(rule, (CodePrefix, RegCategoryIs)):
        return {rule.field}
    if isinstance(rule, Not):
        return _rule_fields(rule.rule)
    if isinstance(rule, (And, Or)):
        return set().union(*(_rule_fields(r) for r in rule.rules))
    return set()


def _keyword_nodes(rule: Rule | None) -> list[KeywordAny]:
    if isinstance(rule, KeywordAny):
        return [rule]
    if isinstance(rule, Not):
        return _keyword_nodes(rule.rule)
    if isinstance(rule, (And, Or)):
        return [k for r in rule.rules for k in _keyword_nodes(r)]
    return []


# --------------------------------------------------------------------------- lexicon


class KeywordLexicon:
    """Term -> surface forms. A term is always one of its own surface forms."""

    def __init__(self, forms: dict[str, Iterable[str]] | None = None) -> None:
        self._forms: dict[str, tuple[str, ...]] = {}
        for term, surfaces in (forms or {}).items():
            self._forms[fold(term)] = tuple(sorted({fold(s) for s in surfaces if fold(s)}))

    @classmethod
    def load(cls, path: str | Path) -> KeywordLexicon:
        grouped: dict[str, list[str]] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                term, surface = row.get("term"), row.get("surface_form")
                if not term or not surface:
                    raise SpecError(f"{path}: rows need term and surface_form")
                grouped.setdefault(term, []).append(surface)
        return cls(grouped)

    def expand(self, term: str) -> tuple[str, ...]:
        key = fold(term)
        return tuple(sorted({key, *self._forms.get(key, ())}))

    def to_doc(self) -> dict[str, list[str]]:
        return {t: list(f) for t, f in sorted(self._forms.items())}


# --------------------------------------------------------------------------- results


@dataclass(frozen=True, order=True)
class Fired:
    """One re-checkable fact behind a stage membership."""

    kind: str  # keyword | code_prefix | reg_category | in_stage | source | not
    field: str = ""
    term: str = ""
    form: str = ""
    detail: str = ""

    def __str__(self) -> str:
        if self.kind == "keyword":
            return f"keyword {self.term!r} in {self.field} via {self.form!r}"
        if self.kind in ("code_prefix", "reg_category"):
            return f"{self.kind} {self.detail} on {self.field}"
        if self.kind in ("in_stage", "source"):
            return f"{self.kind} {self.detail}"
        return f"not {self.detail}"


@dataclass(frozen=True)
class MatchResult:
    record_id: str
    stages: frozenset[str]
    provenance: tuple[tuple[str, tuple[Fired, ...]], ...]
    record: DeviceRecord = field(compare=False, repr=False)

    @property
    def registration_number(self) -> str:
        return self.record.registration_number_raw

    def fired(self, stage: str) -> tuple[Fired, ...]:
        return dict(self.provenance).get(stage, ())


def _sort_key(m: MatchResult) -> tuple[str, ...]:
    r = m.record
    return (m.record_id, r.registration_number_raw, r.product_name, r.generic_name, r.description)


@dataclass
class PipelineResult:
    stage_names: tuple[str, ...]
    counts: dict[str, int]
    matches: list[MatchResult]
    rows_evaluated: int = 0

    def members(self, stage: str) -> list[MatchResult]:
        return [m for m in self.matches if stage in m.stages]

    def stage_sets(self) -> dict[str, frozenset[str]]:
        return {s: frozenset(m.record_id for m in self.members(s)) for s in self.stage_names}

    def distinct_counts(self) -> dict[str, int]:
        return {s: len(ids) for s, ids in self.stage_sets().items()}

    def finalize(self) -> PipelineResult:
        self.matches.sort(key=_sort_key)
        return self


# --------------------------------------------------------------------------- compiler

Memo = list
Predicate = Callable[[Sequence[str], Memo, list], bool]


def _fold_slot(vals: Sequence[str], memo: Memo, i: int) -> str:
    s = memo[i]
    if s is None:
        s = memo[i] = fold(vals[i])
    return s


class RulePipeline:
    """A compiled pipeline.

    ``fields`` lists the record fields the rules read; :meth:`evaluate` takes
    their raw values in that order and returns a bitmask over ``stage_names``.
    Rows outside every stage never need a full :class:`DeviceRecord`, which is
    what keeps a full-dump scan cheap.
    """

    def __init__(
        self,
        doc: dict[str, Any],
        stages: Sequence[Stage],
        lexicon: KeywordLexicon,
        base_dir: Path | None = None,
    ) -> None:
        self.doc = doc
        self.base_dir = base_dir  # where relative asset paths in ``doc`` resolve
        self.name: str = doc.get("name", "unnamed")
        self.options: dict[str, Any] = dict(doc.get("options") or {})
        self.roles: dict[str, str] = dict(doc.get("roles") or {})
        self.report: dict[str, Any] = dict(doc.get("report") or {})
        self.lexicon = lexicon
        self.stages: tuple[Stage, ...] = tuple(stages)
        self.stage_names = tuple(s.name for s in self.stages)
        self._index = {n: i for i, n in enumerate(self.stage_names)}
        used: set[str] = set()
        for st in self.stages:
            used |= _rule_fields(st.include) | _rule_fields(st.exclude)
        self.fields: tuple[str, ...] = tuple(f for f in RECORD_FIELDS if f in used)
        self._slot = {f: i for i, f in enumerate(self.fields)}
        self._matchers: dict[KeywordAny, tuple[KeywordAutomaton, dict[str, tuple[str, ...]]]] = {}
        self._leaves: dict[Rule, Predicate] = {}
        self._rule_json: dict[Rule, str] = {}
        for st in self.stages:
            for node in _keyword_nodes(st.include) + _keyword_nodes(st.exclude):
                self._matcher(node)
        self._plan = []
        for i, st in enumerate(self.stages):
            inc, inc_cost = self._compile(st.include)
            exc, exc_cost = self._compile(st.exclude) if st.exclude is not None else (None, 0)
            src = -1 if st.source == ALL else self._index[st.source]
            self._plan.append((i, src, inc, exc, exc is not None and exc_cost < inc_cost))

    # -- keyword support
    def _matcher(self, node: KeywordAny) -> tuple[KeywordAutomaton, dict[str, tuple[str, ...]]]:
        hit = self._matchers.get(node)
        if hit is None:
            form_terms: dict[str, set[str]] = {}
            for term in node.terms:
                for form in self.lexicon.expand(term):
                    form_terms.setdefault(form, set()).add(term)
            owners = {f: tuple(sorted(t)) for f, t in form_terms.items()}
            hit = self._matchers[node] = (KeywordAutomaton(owners), owners)
        return hit

    def surface_forms(self, node: KeywordAny) -> frozenset[str]:
        return self._matcher(node)[0].patterns

    # -- compilation to closures; cost orders cheap checks first
    def _compile(self, rule: Rule) -> tuple[Predicate, int]:
        if isinstance(rule, KeywordAny):
            forms = tuple(sorted(self.surface_forms(rule), key=lambda f: (-len(f), f)))
            slots = tuple(self._slot[f] for f in rule.fields)

            if len(slots) == 1:
                (slot,) = slots

                def keyword(vals, memo, members):
                    s = memo[slot]
                    if s is None:
                        s = memo[slot] = fold(vals[slot])
                    for f in forms:
                        if f in s:
                            return True
                    return False

            else:

                def keyword(vals, memo, members):
                    parts = []
                    for i in slots:
                        s = memo[i]
                        if s is None:
                            s = memo[i] = fold(vals[i])
                        parts.append(s)
                    # NUL never occurs in a form, so no match can straddle two fields
                    s = "\0".join(parts)
                    for f in forms:
                        if f in s:
                            return True
                    return False

            return keyword, 4 + len(forms)
        if isinstance(rule, CodePrefix):
            slot = self._slot[rule.field]
            seg = rule.segments
            text = "-".join(f"{s:02d}" for s in seg)

            def code_prefix(vals, memo, members):
                s = vals[slot]
                if not s.isascii():
                    s = _fold_slot(vals, memo, slot)
                s = s.strip()
                if not s.startswith(text):
                    return False
                try:
                    return parse_classification_code(s).segments[: len(seg)] == seg
                except MalformedCode:
                    return False

            return code_prefix, 2
        if isinstance(rule, RegCategoryIs):
            slot = self._slot[rule.field]
            cat = rule.category

            def reg_category(vals, memo, members):
                try:
                    return parse_registration_number(vals[slot]).category == cat
                except MalformedRegistration:
                    return False

            return reg_category, 6
        if isinstance(rule, InStage):
            idx = self._index[rule.stage]
            return (lambda vals, memo, members: members[idx]), 0
        if isinstance(rule, Not):
            inner, cost = self._compile(rule.rule)
            return (lambda vals, memo, members: not inner(vals, memo, members)), cost
        parts = sorted((self._compile(r) for r in rule.rules), key=lambda p: p[1])
        fns = tuple(p[0] for p in parts)
        cost = sum(p[1] for p in parts)
        if len(fns) == 1:
            return fns[0], cost
        if len(fns) == 2:
            a, b = fns
            if isinstance(rule, And):
                return (lambda vals, memo, members: a(vals, memo, members) and b(vals, memo, members)), cost
            return (lambda vals, memo, members: a(vals, memo, members) or b(vals, memo, members)), cost
        if isinstance(rule, And):
            return (lambda vals, memo, members: all(f(vals, memo, members) for f in fns)), cost
        return (lambda vals, memo, members: any(f(vals, memo, members) for f in fns)), cost

    # -- evaluation
    def evaluate(self, vals: Sequence[str]) -> int:
        memo: Memo = [None] * len(self.fields)
        members = [False] * len(self.stages)
        mask = 0
        for i, src, inc, exc, exc_first in self._plan:
            if src >= 0 and not members[src]:
                continue
            if exc_first:
                if exc(vals, memo, members) or not inc(vals, memo, members):
                    continue
            elif not inc(vals, memo, members) or (exc is not None and exc(vals, memo, members)):
                continue
            members[i] = True
            mask |= 1 << i
        return mask

    def record_values(self, record: DeviceRecord) -> tuple[str, ...]:
        return tuple(getattr(record, f) for f in self.fields)

    def evaluate_record(self, record: DeviceRecord) -> int:
        return self.evaluate(self.record_values(record))

    def names_of(self, mask: int) -> frozenset[str]:
        return frozenset(n for i, n in enumerate(self.stage_names) if mask >> i & 1)

    # -- provenance (cold path: only for rows inside some stage)
    def _leaf(self, rule: Rule) -> Predicate:
        fn = self._leaves.get(rule)
        if fn is None:
            fn = self._leaves[rule] = self._compile(rule)[0]
        return fn

    def _json(self, rule: Rule) -> str:
        text = self._rule_json.get(rule)
        if text is None:
            text = self._rule_json[rule] = _canonical_json(rule_to_doc(rule))
        return text

    def _explain(self, rule: Rule, record: DeviceRecord, member: frozenset[str],
                 folded: dict[str, str]) -> list[Fired] | None:
        if isinstance(rule, KeywordAny):
            automaton, owners = self._matcher(rule)
            out = []
            for f in rule.fields:
                text = folded.get(f)
                if text is None:
                    text = folded[f] = fold(getattr(record, f))
                for form in automaton.hits(text):
                    out.extend(Fired("keyword", f, term, form) for term in owners[form])
            return out or None
        if isinstance(rule, CodePrefix):
            ok = self._leaf(rule)(self.record_values(record), [None] * len(self.fields), [])
            return [Fired("code_prefix", rule.field, detail=rule_to_doc(rule)["code_prefix"])] if ok else None
        if isinstance(rule, RegCategoryIs):
            ok = self._leaf(rule)(self.record_values(record), [None] * len(self.fields), [])
            return [Fired("reg_category", rule.field, detail=f"{rule.category:02d}")] if ok else None
        if isinstance(rule, InStage):
            return [Fired("in_stage", detail=rule.stage)] if rule.stage in member else None
        if isinstance(rule, Not):
            if self._explain(rule.rule, record, member, folded) is None:
                return [Fired("not", detail=self._json(rule.rule))]
            return None
        parts = [self._explain(r, record, member, folded) for r in rule.rules]
        if isinstance(rule, And):
            if any(p is None for p in parts):
                return None
            return [f for p in parts for f in p]
        hits = [f for p in parts if p is not None for f in p]
        return hits or None

    def explain(self, record: DeviceRecord, mask: int) -> MatchResult:
        member = self.names_of(mask)
        folded: dict[str, str] = {}
        provenance = []
        for st in self.stages:
            if st.name not in member:
                continue
            fired: list[Fired] = []
            if st.source != ALL:
                fired.append(Fired("source", detail=st.source))
            fired.extend(self._explain(st.include, record, member, folded) or ())
            if st.exclude is not None:
                fired.append(Fired("not", detail=self._json(st.exclude)))
            provenance.append((st.name, tuple(sorted(set(fired)))))
        return MatchResult(record.record_id, member, tuple(provenance), record)

    # -- identity
    def digest(self) -> str:
        payload = {"spec": self.doc, "lexicon": self.lexicon.to_doc()}
        return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()

    def role(self, name: str, default: str) -> str | None:
        stage = self.roles.get(name, default)
        return stage if stage in self._index else None


def _canonical_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _topo_order(stages: list[Stage]) -> list[Stage]:
    by_name = {s.name: s for s in stages}
    deps: dict[str, set[str]] = {}
    for st in stages:
        refs = _stage_refs(st.include) | _stage_refs(st.exclude)
        if st.source != ALL:
            refs.add(st.source)
        unknown = refs - by_name.keys()
        if unknown:
            raise SpecError(f"stage {st.name!r} references undefined stage(s) {sorted(unknown)}")
        if st.name in refs:
            raise SpecError(f"stage {st.name!r} references itself")
        deps[st.name] = refs
    ordered: list[Stage] = []
    done: set[str] = set()
    while len(ordered) < len(stages):
        ready = [s for s in stages if s.name not in done and deps[s.name] <= done]
        if not ready:
            cyclic = sorted(n for n in deps if n not in done)
            raise SpecError(f"cyclic stage references among {cyclic}")
        ordered.append(ready[0])
        done.add(ready[0].name)
    return ordered


def compile_pipeline(
    doc: dict[str, Any],
    lexicon: KeywordLexicon | None = None,
    base_dir: str | Path | None = None,
) -> RulePipeline:
    if not isinstance(doc, dict):
        raise SpecError("pipeline document must be an object")
    raw_stages = doc.get("stages")
    if not isinstance(raw_stages, list) or not raw_stages:
        raise SpecError("pipeline needs a non-empty 'stages' list")
    if lexicon is None:
        lexicon = KeywordLexicon()
        if doc.get("lexicon"):
            path = Path(base_dir or ".") / doc["lexicon"]
            if not path.exists():
                raise SpecError(f"lexicon file {path} not found")
            lexicon = KeywordLexicon.load(path)
    stages = []
    seen: set[str] = set()
    for raw in raw_stages:
        if not isinstance(raw, dict) or not raw.get("name") or "include" not in raw:
            raise SpecError(f"stage needs 'name' and 'include': {raw!r}")
        name = raw["name"]
        if name == ALL or name in seen:
            raise SpecError(f"stage name {name!r} is reserved or duplicated")
        seen.add(name)
        exclude = parse_rule(raw["exclude"]) if raw.get("exclude") is not None else None
        stages.append(Stage(name, parse_rule(raw["include"]), exclude, raw.get("source", ALL)))
    return RulePipeline(doc, _topo_order(stages), lexicon, Path(base_dir) if base_dir else None)


def builtin_paper_pipeline() -> dict[str, Any]:
    """The shipped two-layer MDSW/AIMD pipeline document."""
    with open(asset_path("paper_default", "pipeline.json"), encoding="utf-8") as fh:
        return json.load(fh)


def pipeline_path(ref: str | Path) -> Path:
    """A pipeline JSON file from a path, a directory holding ``pipeline.json``, or a bundled name."""
    path = Path(ref)
    if not path.exists() and asset_path(str(ref), "pipeline.json").exists():
        return asset_path(str(ref), "pipeline.json")
    if path.is_dir():
        return path / "pipeline.json"
    return path


def load_pipeline(ref: str | Path, lexicon: str | Path | None = None) -> RulePipeline:
    """Compile a pipeline from a JSON file, or a bundled name such as ``paper_default``.

    ``lexicon`` replaces the keyword lexicon named inside the document.
    """
    path = pipeline_path(ref)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SpecError(f"pipeline spec {ref!s} not found") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from None
    if lexicon is not None:
        return compile_pipeline(doc, KeywordLexicon.load(lexicon), base_dir=path.parent)
    return compile_pipeline(doc, base_dir=path.parent)


# --------------------------------------------------------------------------- running


def run_pipeline(pipeline: RulePipeline, records: Iterable[DeviceRecord]) -> PipelineResult:
    counts = dict.fromkeys(pipeline.stage_names, 0)
    matches = []
    n = 0
    for record in records:
        n += 1
        mask = pipeline.evaluate_record(record)
        if mask:
            match = pipeline.explain(record, mask)
            matches.append(match)
            for s in match.stages:
                counts[s] += 1
    return PipelineResult(pipeline.stage_names, counts, matches, n).finalize()


# --------------------------------------------------------------------------- exclusions


@dataclass(frozen=True)
class ExclusionEntry:
    key: str
    reason: str = ""


@dataclass(frozen=True)
class ExclusionList:
    entries: tuple[ExclusionEntry, ...] = ()

    def __post_init__(self) -> None:
        keys = [fold(e.key) for e in self.entries]
        if len(keys) != len(set(keys)):
            raise SpecError("exclusion list keys must be unique")

    @classmethod
    def load(cls, path: str | Path) -> ExclusionList:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        entries = []
        for n, row in enumerate(rows, start=2):
            key = (row.get("key") or "").strip()
            if not key:
                raise SpecError(f"{path}:{n}: empty exclusion key")
            entries.append(ExclusionEntry(key, (row.get("reason") or "").strip()))
        return cls(tuple(entries))

    def digest(self) -> str:
        rows = sorted((fold(e.key), e.reason) for e in self.entries)
        return hashlib.sha256(repr(rows).encode()).hexdigest()


@dataclass(frozen=True)
class ExclusionOutcome:
    final: tuple[MatchResult, ...]
    removed: tuple[tuple[ExclusionEntry, tuple[str, ...]], ...]
    stale: tuple[ExclusionEntry, ...]


def apply_exclusions(candidates: Iterable[MatchResult], exclusions: ExclusionList) -> ExclusionOutcome:
    """Drop candidates whose registration number (or record id) is listed."""
    index = {fold(e.key): e for e in exclusions.entries}
    hit: dict[str, list[str]] = {}
    final = []
    for m in candidates:
        entry = index.get(fold(m.registration_number)) if m.registration_number.strip() else None
        entry = entry or index.get(fold(m.record_id))
        if entry is None:
            final.append(m)
        else:
            hit.setdefault(fold(entry.key), []).append(m.record_id)
    removed = tuple((index[k], tuple(sorted(ids))) for k, ids in sorted(hit.items()))
    stale = tuple(e for k, e in sorted(index.items()) if k not in hit)
    return ExclusionOutcome(tuple(final), removed, stale)
