from __future__ import annotations

import random
from datetime import date

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdswscan.errors import BadCheckDigit, BadDate, EmptyInput, MalformedUdi, NotFourteenDigits
from mdswscan.udi import (
    Agency,
    DeviceIdentifier,
    format_udi,
    gtin_check_digit,
    parse_udi,
    split_di_parts,
    validate_gtin14_check,
)


def brute_force_check(payload13: str) -> int:
    """The digit d for which the full 14-digit weighted sum is a multiple of 10."""
    for d in range(10):
        digits = [int(c) for c in payload13] + [d]
        total = sum(x * (3 if i % 2 == 0 else 1) for i, x in enumerate(digits))
        if total % 10 == 0:
            return d
    raise AssertionError("no check digit")


def with_check(payload13: str) -> str:
    return payload13 + str(brute_force_check(payload13))


def test_oracle_agrees_on_random_payloads():
    rng = random.Random(14)
    for _ in range(2000):
        p = "".join(rng.choice("0123456789") for _ in range(13))
        assert gtin_check_digit(p) == brute_force_check(p)
        assert validate_gtin14_check(with_check(p))


def test_single_digit_perturbation_detected():
    rng = random.Random(15)
    for _ in range(500):
        code = with_check("".join(rng.choice("0123456789") for _ in range(13)))
        for pos in range(13):
            bumped = code[:pos] + str((int(code[pos]) + 1) % 10) + code[pos + 1:]
            assert not validate_gtin14_check(bumped)


def test_zero_payload():
    assert validate_gtin14_check("00000000000000")


@pytest.mark.parametrize("bad", ["", "123", "0000000000000a", "000000000000000", "０００００００００００００"])
def test_not_fourteen_digits(bad):
    with pytest.raises(NotFourteenDigits):
        validate_gtin14_check(bad)


class TestParse:
    def test_gs1_with_lot(self):
        code = parse_udi("(01)00000000000000(10)LOT1")
        assert code.di.agency is Agency.GS1
        assert code.di.canonical == "00000000000000"
        assert code.pi.lot == "LOT1"

    def test_valid_and_perturbed(self):
        good = with_check("0694123456789")
        assert parse_udi(f"(01){good}").di.canonical == good
        bad = good[:-1] + str((int(good[-1]) + 1) % 10)
        with pytest.raises(BadCheckDigit):
            parse_udi(f"(01){bad}")

    def test_check_digit_from_oracle(self):
        # the oracle puts 8 after 0694123456789; both 0 and 4 are rejected
        assert with_check("0694123456789") == "06941234567898"
        for wrong in ("06941234567890", "06941234567894"):
            with pytest.raises(BadCheckDigit):
                parse_udi(f"(01){wrong}")

    def test_dates_and_serial(self):
        code = parse_udi("(01)06941234567898(11)240131(17)270100(21)SN-9")
        assert code.pi.production_date == date(2024, 1, 31)
        assert code.pi.expiry_date == date(2027, 1, 31) and code.pi.expiry_month_only
        assert code.pi.serial == "SN-9"

    def test_year_pivot(self):
        assert parse_udi("(01)00000000000000(11)500101").pi.production_date.year == 2050
        assert parse_udi("(01)00000000000000(11)510101").pi.production_date.year == 1951

    def test_bad_date(self):
        with pytest.raises(BadDate):
            parse_udi("(01)00000000000000(17)241301")

    def test_machine_form(self):
        code = parse_udi("010694123456789810LOT7\x1d21S1")
        assert (code.di.canonical, code.pi.lot, code.pi.serial) == ("06941234567898", "LOT7", "S1")

    def test_empty(self):
        with pytest.raises(EmptyInput):
            parse_udi("   ")

    def test_other_agency(self):
        code = parse_udi("XYZ-999")
        assert code.di.agency is Agency.OTHER
        assert split_di_parts(code.di) == ("", "XYZ-999")

    def test_ma_split(self):
        code = parse_udi("MA.156.M0.100231.0001")
        assert code.di.agency is Agency.MA
        assert (code.di.part1, code.di.part2) == ("MA.156", ".M0.100231.0001")

    def test_ma_malformed(self):
        with pytest.raises(MalformedUdi):
            parse_udi("MA.15")


def test_gs1_default_split():
    # the split rule does not look at the check digit
    di = DeviceIdentifier(Agency.GS1, "", "06941234567894", "06941234567894")
    assert split_di_parts(di) == ("0694123", "4567894")
    assert split_di_parts(parse_udi("(01)06941234567898").di) == ("0694123", "4567898")


PAYLOADS = st.text("0123456789", min_size=13, max_size=13).map(with_check)
LOTS = st.none() | st.text("ABCDEFGHJK0123456789-", min_size=1, max_size=20)
DATES = st.none() | st.dates(date(1951, 1, 1), date(2050, 12, 31))


@given(PAYLOADS, LOTS, LOTS, DATES, DATES, st.booleans())
def test_format_parse_round_trip(gtin, lot, serial, made, expires, machine):
    text = f"(01){gtin}"
    if made:
        text += f"(11){made:%y%m%d}"
    if expires:
        text += f"(17){expires:%y%m%d}"
    if lot:
        text += f"(10){lot}"
    if serial:
        text += f"(21){serial}"
    code = parse_udi(text)
    assert parse_udi(format_udi(code, machine=machine)) == code


@given(PAYLOADS | st.from_regex(r"MA\.\d{3}\.[0-9A-Z]{1,6}(\.[0-9A-Z]{1,6}){0,3}", fullmatch=True)
       | st.from_regex(r"Q[0-9A-Z\-]{1,12}", fullmatch=True))
def test_split_reconstructs(text):
    di = parse_udi(text).di
    part1, part2 = split_di_parts(di)
    assert part1 + part2 == di.canonical
    assert (di.part1, di.part2) == (part1, part2)


def test_identifier_type():
    di = DeviceIdentifier(Agency.OTHER, "", "abc", "abc")
    assert split_di_parts(di) == ("", "abc")
