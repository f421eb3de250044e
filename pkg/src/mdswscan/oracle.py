"""Reference evaluator for pipeline documents.

Deliberately naive: it walks the JSON rule tree for every record, resolves
``in_stage`` by recursion, expands keywords by reading the lexicon rows again
and checks each surface form with a plain substring test. It shares no code
with the compiled evaluator beyond Unicode normalization and the registration
number parser, so agreement between the two is meaningful.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from functools import lru_cache
from pathlib import Path
from typing import Any

from .errors import MalformedRegistration
from .records import DeviceRecord, parse_registration_number

__all__ = ["NaiveOracle"]

_CODE = re.compile(r"(\d\d)(?:-(\d\d))?(?:-(\d\d))?")


@lru_cache(maxsize=1 << 12)
def _key(text: str) -> str:
    return unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", text or "").casefold())


def _segments(text: str) -> tuple[int, ...] | None:
    m = _CODE.fullmatch(unicodedata.normalize("NFKC", text or "").strip())
    if m is None or not m.group(0).isascii():
        return None
    return tuple(int(g) for g in m.groups() if g is not None)


class NaiveOracle:
    def __init__(self, doc: dict[str, Any], lexicon_rows: list[tuple[str, str]] | None = None) -> None:
        self.doc = doc
        self.stages = {s["name"]: s for s in doc["stages"]}
        self.forms: dict[str, set[str]] = {}
        for term, surface in lexicon_rows or ():
            self.forms.setdefault(_key(term), set()).add(_key(surface))
        self._expanded: dict[str, tuple[str, ...]] = {}

    def _forms_of(self, term: str) -> tuple[str, ...]:
        if term not in self._expanded:
            t = _key(term)
            self._expanded[term] = tuple(sorted({t} | self.forms.get(t, set())))
        return self._expanded[term]

    @staticmethod
    def _field(record: DeviceRecord, name: str, memo: dict[Any, Any]) -> str:
        slot = ("field", name)  # cannot collide with a stage name
        if slot not in memo:
            memo[slot] = _key(getattr(record, name))
        return memo[slot]

    @classmethod
    def from_file(cls, path: str | Path, lexicon: str | Path | None = None) -> NaiveOracle:
        path = Path(path)
        if path.is_dir():
            path = path / "pipeline.json"
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows = []
        if lexicon is None and doc.get("lexicon"):
            lexicon = path.parent / doc["lexicon"]
        if lexicon is not None:
            with open(lexicon, encoding="utf-8", newline="") as fh:
                lines = [ln for ln in fh if not ln.startswith("#")]
            rows = [(r["term"], r["surface_form"]) for r in csv.DictReader(lines)]
        return cls(doc, rows)

    def _holds(self, rule: dict[str, Any], record: DeviceRecord, memo: dict[Any, Any]) -> bool:
        (kind, arg), = rule.items()
        if kind == "keyword_any":
            texts = [self._field(record, f, memo) for f in arg["fields"]]
            for term in arg["terms"]:
                for form in self._forms_of(term):
                    for text in texts:
                        if form in text:
                            return True
            return False
        if kind == "code_prefix":
            want = _segments(arg) if isinstance(arg, str) else tuple([arg] if isinstance(arg, int) else arg)
            got = _segments(record.classification_code_raw)
            return got is not None and got[: len(want)] == want
        if kind == "reg_category_is":
            try:
                return parse_registration_number(record.registration_number_raw).category == arg
            except MalformedRegistration:
                return False
        if kind == "in_stage":
            return self.member(arg, record, memo)
        if kind == "not":
            return not self._holds(arg, record, memo)
        if kind == "and":
            return all(self._holds(r, record, memo) for r in arg)
        if kind == "or":
            return any(self._holds(r, record, memo) for r in arg)
        raise ValueError(f"unknown rule kind {kind!r}")

    def member(self, stage: str, record: DeviceRecord, memo: dict[Any, Any] | None = None) -> bool:
        memo = {} if memo is None else memo
        if stage not in memo:
            st = self.stages[stage]
            source = st.get("source", "ALL")
            ok = source == "ALL" or self.member(source, record, memo)
            ok = ok and self._holds(st["include"], record, memo)
            if ok and st.get("exclude") is not None:
                ok = not self._holds(st["exclude"], record, memo)
            memo[stage] = ok
        return memo[stage]

    def memberships(self, record: DeviceRecord) -> frozenset[str]:
        memo: dict[Any, Any] = {}
        return frozenset(s for s in self.stages if self.member(s, record, memo))
