"""Registry record types and the two structured identifiers they carry.

Registration certificate numbers look like ``国械注准20153211878``::

    国械注准 | 2015 | 3 | 21 | 1878
    prefix   | year | class digit | category | serial

The prefix (issuer scope + approval kind) is resolved through the editable
``registration_prefixes.csv`` table, so a new issuer is a data change.
Romanized prefixes printed in English-language sources (``National...``,
``Imported...``, ``Xu...``) go through the same table.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import lru_cache

from ._assets import asset_path, read_table
from .errors import MalformedCode, MalformedRegistration, OriginUndetermined, UnknownClassDigit
from .text import canonical, fold

__all__ = [
    "ClassificationCode",
    "DeviceClass",
    "DeviceRecord",
    "Origin",
    "RECORD_FIELDS",
    "RegistrationNumber",
    "ResolvedOrigin",
    "format_registration_number",
    "is_samd_code",
    "origin_of",
    "parse_classification_code",
    "parse_registration_number",
]

SAMD_CATEGORY = 21

# DeviceRecord text fields, in declaration order. ``extra`` is not matched on.
RECORD_FIELDS = (
    "record_id",
    "product_name",
    "generic_name",
    "description",
    "classification_code_raw",
    "registration_number_raw",
    "manufacturer",
    "region_raw",
)


@dataclass(frozen=True)
class DeviceRecord:
    record_id: str
    product_name: str = ""
    generic_name: str = ""
    description: str = ""
    classification_code_raw: str = ""
    registration_number_raw: str = ""
    manufacturer: str = ""
    region_raw: str = ""
    extra: dict[str, str] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        for name in RECORD_FIELDS:
            value = getattr(self, name)
            normalized = canonical(value)
            if normalized != value:
                object.__setattr__(self, name, normalized)
        if not self.record_id.strip():
            raise ValueError("record_id must be non-empty")

    @property
    def exclusion_key(self) -> str:
        """Registration number when present, else the record id."""
        return self.registration_number_raw.strip() or self.record_id


class DeviceClass(enum.IntEnum):
    I = 1
    II = 2
    III = 3

    def __str__(self) -> str:
        return self.name


class Origin(str, enum.Enum):
    DOMESTIC = "Domestic"
    IMPORTED = "Imported"
    SAR = "SAR"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ClassificationCode:
    segments: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.segments) <= 3:
            raise MalformedCode(f"expected 1-3 segments, got {len(self.segments)}")
        if any(not 0 <= s <= 99 for s in self.segments):
            raise MalformedCode(f"segment out of range in {self.segments}")

    def __str__(self) -> str:
        return "-".join(f"{s:02d}" for s in self.segments)


def parse_classification_code(raw: str) -> ClassificationCode:
    text = canonical(raw).strip()
    if not text:
        raise MalformedCode("empty classification code")
    parts = text.split("-")
    if len(parts) > 3:
        raise MalformedCode(f"too many segments: {raw!r}")
    for part in parts:
        if len(part) != 2 or not (part.isascii() and part.isdigit()):
            raise MalformedCode(f"bad segment {part!r} in {raw!r}")
    return ClassificationCode(tuple(int(p) for p in parts))


def is_samd_code(code: ClassificationCode) -> bool:
    return code.segments[0] == SAMD_CATEGORY


@dataclass(frozen=True)
class RegistrationNumber:
    origin: Origin
    issuer: str
    year: int
    device_class: DeviceClass
    category: int
    serial: int
    raw: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not 1980 <= self.year <= 2100:
            raise MalformedRegistration(f"year {self.year} out of range")
        if not 0 <= self.category <= 99:
            raise MalformedRegistration(f"category {self.category} out of range")
        if self.serial < 0:
            raise MalformedRegistration("negative serial")


@dataclass(frozen=True)
class _Prefix:
    literal: str
    key: str
    origin: Origin
    issuer: str


@lru_cache(maxsize=None)
def _prefixes(table: str) -> tuple[_Prefix, ...]:
    rows = read_table(table)
    out = [
        _Prefix(r["prefix"], fold(r["prefix"]), Origin(r["origin"]), r["issuer"])
        for r in rows
    ]
    # longest literal first so "国械注准" never loses to a shorter overlapping entry
    return tuple(sorted(out, key=lambda p: -len(p.key)))


def _default_table() -> str:
    return str(asset_path("registration_prefixes.csv"))


_BODY = re.compile(r"(\d{4})(\d)(\d{2})(\d{4,})")
# pre-2014 certificates: 国食药监械(准)字2013第3210001号
_LEGACY = re.compile(r"(.+?)食?药监械\(([准进许])\)字(\d{4})第(\d)(\d{2})(\d{4,})号")
_LEGACY_KIND = {"准": "械注准", "进": "械注进", "许": "械注许"}


def parse_registration_number(raw: str, table: str | None = None) -> RegistrationNumber:
    text = canonical(raw).strip()
    if not text:
        raise MalformedRegistration("empty registration number")
    key = fold(text)
    legacy = _LEGACY.fullmatch(key)
    if legacy:
        issuer_part, kind, year, cls, cat, serial = legacy.groups()
        key = issuer_part + _LEGACY_KIND[kind] + year + cls + cat + serial
    prefixes = _prefixes(table or _default_table())
    for prefix in prefixes:
        if key.startswith(prefix.key):
            body = key[len(prefix.key):]
            break
    else:
        raise MalformedRegistration(f"unknown registration prefix in {raw!r}")
    m = _BODY.fullmatch(body)
    if not m or not body.isascii():
        raise MalformedRegistration(f"bad registration body in {raw!r}")
    year, cls, cat, serial = m.groups()
    if cls not in "123":
        raise UnknownClassDigit(f"class digit {cls!r} in {raw!r}")
    return RegistrationNumber(
        origin=prefix.origin,
        issuer=prefix.issuer,
        year=int(year),
        device_class=DeviceClass(int(cls)),
        category=int(cat),
        serial=int(serial),
        raw=text,
    )


def format_registration_number(reg: RegistrationNumber, table: str | None = None) -> str:
    """Canonical form: first table prefix for (origin, issuer), serial padded to 4."""
    rows = read_table(table or _default_table())
    for row in rows:
        if row["origin"] == reg.origin.value and row["issuer"] == reg.issuer:
            prefix = row["prefix"]
            break
    else:
        raise MalformedRegistration(f"no prefix for {reg.origin}/{reg.issuer}")
    return f"{prefix}{reg.year:04d}{int(reg.device_class)}{reg.category:02d}{reg.serial:04d}"


@dataclass(frozen=True)
class _RegionForm:
    key: str
    region: str
    kind: str


@lru_cache(maxsize=None)
def _region_forms() -> tuple[_RegionForm, ...]:
    forms = []
    for row in read_table(str(asset_path("regions.csv"))):
        for surface in filter(None, row["surface_forms"].split("|")):
            forms.append(_RegionForm(fold(surface), row["region"], row["kind"]))
    return tuple(sorted(forms, key=lambda f: (-len(f.key), f.key)))


@lru_cache(maxsize=None)
def region_codes() -> dict[str, str]:
    return {row["region"]: row["code"] for row in read_table(str(asset_path("regions.csv")))}


@dataclass(frozen=True)
class ResolvedOrigin:
    origin: Origin
    region: str
    fallback: bool = False
    registration: RegistrationNumber | None = None


def origin_of(record: DeviceRecord) -> ResolvedOrigin:
    """Origin from the registration number, else from the region text (flagged)."""
    if record.registration_number_raw.strip():
        try:
            reg = parse_registration_number(record.registration_number_raw)
        except MalformedRegistration:
            pass
        else:
            region = "Xu" if reg.origin is Origin.SAR else reg.issuer
            return ResolvedOrigin(reg.origin, region, False, reg)
    region_text = fold(record.region_raw)
    if region_text:
        for form in _region_forms():
            if form.key in region_text:
                if form.kind == "sar":
                    return ResolvedOrigin(Origin.SAR, "Xu", True)
                if form.kind == "foreign":
                    return ResolvedOrigin(Origin.IMPORTED, "Foreign", True)
                return ResolvedOrigin(Origin.DOMESTIC, form.region, True)
    raise OriginUndetermined(f"no usable origin for record {record.record_id!r}")
