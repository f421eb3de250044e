"""UDI parsing: device identifier (DI) and production identifier (PI).

GS1 element strings are handled fully for application identifiers 01 (DI),
10 (lot), 11 (production date), 17 (expiry date) and 21 (serial), in both the
human-readable ``(01)...(10)...`` form and the machine form where FNC1 is sent
as ASCII 29. MA and AHM codes are stored as validated opaque DIs; anything
else is kept verbatim as an ``OtherOpaque`` DI.

The DI is split into part 1 (assigned by the issuing agency) and part 2
(assigned by the manufacturer) using two editable tables: GS1 company-prefix
lengths and per-agency delimiters.
"""

from __future__ import annotations

import calendar
import enum
import re
from dataclasses import dataclass
from datetime import date
from functools import lru_cache

from ._assets import asset_path, read_table
from .errors import BadCheckDigit, BadDate, EmptyInput, MalformedUdi, NotFourteenDigits

__all__ = [
    "Agency",
    "DeviceIdentifier",
    "ProductionIdentifier",
    "UdiCode",
    "format_udi",
    "gtin_check_digit",
    "parse_udi",
    "split_di_parts",
    "validate_gtin14_check",
]

GS = "\x1d"
_SYMBOLOGY_IDS = ("]C1", "]d2", "]Q3", "]e0")
_FIXED = {"01": 14, "11": 6, "17": 6}
_VARIABLE = {"10": 20, "21": 20}
_YEAR_PIVOT = 51


class Agency(str, enum.Enum):
    GS1 = "GS1"
    MA = "MA"
    AHM = "AHM"
    OTHER = "OtherOpaque"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DeviceIdentifier:
    agency: Agency
    part1: str
    part2: str
    canonical: str


@dataclass(frozen=True)
class ProductionIdentifier:
    lot: str | None = None
    serial: str | None = None
    production_date: date | None = None
    expiry_date: date | None = None
    # day "00" in the source: the date is the month's last day, precision is month
    production_month_only: bool = False
    expiry_month_only: bool = False

    @property
    def is_empty(self) -> bool:
        return (self.lot, self.serial, self.production_date, self.expiry_date) == (None,) * 4


@dataclass(frozen=True)
class UdiCode:
    di: DeviceIdentifier
    pi: ProductionIdentifier = ProductionIdentifier()


def gtin_check_digit(payload: str) -> int:
    """Mod-10 check digit for the digits preceding it (weights 3,1,3,... from the right)."""
    total = 0
    for i, ch in enumerate(reversed(payload)):
        total += int(ch) * (3 if i % 2 == 0 else 1)
    return (10 - total % 10) % 10


def _is_digits(text: str) -> bool:
    return text.isascii() and text.isdigit()


def validate_gtin14_check(payload: str) -> bool:
    if len(payload) != 14 or not _is_digits(payload):
        raise NotFourteenDigits(f"expected 14 ASCII digits, got {payload!r}")
    return gtin_check_digit(payload[:13]) == int(payload[13])


@lru_cache(maxsize=None)
def _prefix_lengths(table: str) -> tuple[tuple[str, int], ...]:
    rows = [(r["gs1_prefix"], int(r["part1_length"])) for r in read_table(table)]
    return tuple(sorted(rows, key=lambda r: (r[0] == "*", -len(r[0]))))


@lru_cache(maxsize=None)
def _agencies(table: str) -> dict[str, dict[str, str]]:
    return {r["agency"]: r for r in read_table(table)}


def _default(name: str) -> str:
    return str(asset_path(name))


def split_di_parts(
    di: DeviceIdentifier,
    prefix_table: str | None = None,
    agency_table: str | None = None,
) -> tuple[str, str]:
    text = di.canonical
    if di.agency is Agency.GS1:
        body = text[1:]
        for prefix, length in _prefix_lengths(prefix_table or _default("gs1_prefix_lengths.csv")):
            if prefix == "*" or body.startswith(prefix):
                return text[:length], text[length:]
        return "", text
    if di.agency is Agency.OTHER:
        return "", text
    spec = _agencies(agency_table or _default("udi_agencies.csv")).get(di.agency.value)
    if spec is None:
        return "", text
    delim, occurrence = spec["delimiter"], int(spec["occurrence"])
    pos = -1
    for _ in range(occurrence):
        pos = text.find(delim, pos + 1)
        if pos < 0:
            return "", text
    return text[:pos], text[pos:]


def _make_di(agency: Agency, canonical: str) -> DeviceIdentifier:
    probe = DeviceIdentifier(agency, "", canonical, canonical)
    part1, part2 = split_di_parts(probe)
    return DeviceIdentifier(agency, part1, part2, canonical)


def _parse_date(value: str, ai: str) -> tuple[date, bool]:
    if len(value) != 6 or not _is_digits(value):
        raise BadDate(f"AI ({ai}) needs YYMMDD, got {value!r}")
    yy, mm, dd = int(value[:2]), int(value[2:4]), int(value[4:])
    year = 2000 + yy if yy < _YEAR_PIVOT else 1900 + yy
    if not 1 <= mm <= 12:
        raise BadDate(f"AI ({ai}) month {mm:02d} invalid")
    if dd == 0:
        return date(year, mm, calendar.monthrange(year, mm)[1]), True
    try:
        return date(year, mm, dd), False
    except ValueError as exc:
        raise BadDate(f"AI ({ai}) {value!r}: {exc}") from None


def _hri_elements(text: str) -> list[tuple[str, str]]:
    elements = []
    pos = 0
    for m in re.finditer(r"\((\d{2,4})\)([^()]*)", text):
        if m.start() != pos:
            raise MalformedUdi(f"unexpected text at offset {pos} in {text!r}")
        elements.append((m.group(1), m.group(2)))
        pos = m.end()
    if pos != len(text):
        raise MalformedUdi(f"unexpected text at offset {pos} in {text!r}")
    return elements


def _machine_elements(text: str) -> list[tuple[str, str]]:
    for sid in _SYMBOLOGY_IDS:
        if text.startswith(sid):
            text = text[len(sid):]
            break
    text = text.lstrip(GS)
    elements = []
    pos = 0
    while pos < len(text):
        ai = text[pos:pos + 2]
        pos += 2
        if ai in _FIXED:
            value = text[pos:pos + _FIXED[ai]]
            pos += _FIXED[ai]
            if text[pos:pos + 1] == GS:
                pos += 1
        elif ai in _VARIABLE:
            end = text.find(GS, pos)
            end = len(text) if end < 0 else end
            value = text[pos:end]
            pos = end + 1
        else:
            raise MalformedUdi(f"unsupported application identifier {ai!r}")
        elements.append((ai, value))
    return elements


def _gs1(elements: list[tuple[str, str]]) -> UdiCode:
    seen: dict[str, str] = {}
    for ai, value in elements:
        if ai not in _FIXED and ai not in _VARIABLE:
            raise MalformedUdi(f"unsupported application identifier ({ai})")
        if ai in seen:
            raise MalformedUdi(f"duplicate application identifier ({ai})")
        if ai == "01" and len(value) != 14:
            raise MalformedUdi(f"AI (01) needs 14 digits, got {value!r}")
        if ai in _VARIABLE and not 1 <= len(value) <= _VARIABLE[ai]:
            raise MalformedUdi(f"AI ({ai}) length {len(value)} out of range")
        seen[ai] = value
    if "01" not in seen:
        raise MalformedUdi("GS1 element string lacks AI (01)")
    gtin = seen["01"]
    if not _is_digits(gtin):
        raise MalformedUdi(f"AI (01) must be numeric, got {gtin!r}")
    if not validate_gtin14_check(gtin):
        raise BadCheckDigit(f"check digit of {gtin} should be {gtin_check_digit(gtin[:13])}")
    prod = exp = None
    prod_m = exp_m = False
    if "11" in seen:
        prod, prod_m = _parse_date(seen["11"], "11")
    if "17" in seen:
        exp, exp_m = _parse_date(seen["17"], "17")
    pi = ProductionIdentifier(seen.get("10"), seen.get("21"), prod, exp, prod_m, exp_m)
    return UdiCode(_make_di(Agency.GS1, gtin), pi)


@lru_cache(maxsize=None)
def _agency_patterns(table: str) -> tuple[tuple[Agency, str, re.Pattern[str]], ...]:
    return tuple(
        (Agency(a), spec["marker"], re.compile(spec["pattern"]))
        for a, spec in _agencies(table).items()
    )


def parse_udi(raw: str) -> UdiCode:
    text = (raw or "").strip()
    if not text:
        raise EmptyInput("empty UDI")
    if text.startswith("("):
        return _gs1(_hri_elements(text))
    if len(text) == 14 and _is_digits(text):
        return _gs1([("01", text)])
    if GS in text or text.startswith(_SYMBOLOGY_IDS) or (
        text.startswith("01") and len(text) >= 16 and _is_digits(text[:16])
    ):
        return _gs1(_machine_elements(text))
    for agency, marker, pattern in _agency_patterns(_default("udi_agencies.csv")):
        if text.startswith(marker):
            if not pattern.fullmatch(text):
                raise MalformedUdi(f"{agency} code {text!r} does not match {pattern.pattern}")
            return UdiCode(_make_di(agency, text))
    return UdiCode(_make_di(Agency.OTHER, text))


def _yymmdd(value: date, month_only: bool) -> str:
    return f"{value.year % 100:02d}{value.month:02d}{0 if month_only else value.day:02d}"


def format_udi(code: UdiCode, machine: bool = False) -> str:
    """Serialize back to an element string (GS1) or the canonical DI (others)."""
    if code.di.agency is not Agency.GS1:
        return code.di.canonical
    pi = code.pi
    elements = [("01", code.di.canonical)]
    if pi.production_date:
        elements.append(("11", _yymmdd(pi.production_date, pi.production_month_only)))
    if pi.expiry_date:
        elements.append(("17", _yymmdd(pi.expiry_date, pi.expiry_month_only)))
    if pi.lot is not None:
        elements.append(("10", pi.lot))
    if pi.serial is not None:
        elements.append(("21", pi.serial))
    if not machine:
        return "".join(f"({ai}){value}" for ai, value in elements)
    out = []
    for i, (ai, value) in enumerate(elements):
        out.append(ai + value)
        if ai in _VARIABLE and i < len(elements) - 1:
            out.append(GS)
    return "".join(out)
